"""
Desk-scale learnability and ablation-ordering runs on planted-signal graphs.

These take minutes; they are excluded by default and run with
`python test_runner.py slow`.
"""
import pytest

from gatiaa.graph.manifest import split_for_id
from gatiaa.graph.synth import SynthConfig, synth_generate
from gatiaa.models import ModelSpec, build_model
from gatiaa.services.ablation import default_seeds, run_ablation
from gatiaa.services.evaluation import evaluate
from gatiaa.services.training import TrainConfig, TrainingService

pytestmark = pytest.mark.slow

SPEC = ModelSpec(variant='GAT1_GATP', d_in=32, d_enc=64, d_att=16, heads=4, d_dec=64, drop_p=0.1)
TRAIN = TrainConfig(lr0=1e-3, epochs=50, batch_size=64, seed=0, checkpoint_dir=None)


@pytest.fixture(scope='module')
def planted_splits():
    graphs = synth_generate(0, 2000, SynthConfig(dim=32, grid_w_range=(2, 8), grid_h_range=(2, 6)))
    splits = {'train': [], 'val': [], 'test': []}
    for g in graphs:
        splits[split_for_id(g.id)].append(g)
    return splits['train'], splits['val'], splits['test']


def test_gat_readout_learns_planted_signal(planted_splits):
    train_set, val_set, test_set = planted_splits
    model = build_model(SPEC, seed=0)
    TrainingService(model, TRAIN).train(train_set, val_set)
    report = evaluate(model, test_set)
    assert report.plcc >= 0.9, report.plcc


def test_ablation_ordering(planted_splits):
    train_set, val_set, test_set = planted_splits
    result = run_ablation(SPEC, TRAIN, train_set, val_set, test_set, seeds=default_seeds(0, 3),
                          variants=('GAT1_GATP', 'GCN_GMP', 'AvgPoolFC'))
    plcc = {row['variant']: row['plcc'] for row in result.table()}
    assert plcc['GAT1_GATP'] >= plcc['GCN_GMP'] >= plcc['AvgPoolFC']
    assert plcc['GAT1_GATP'] - plcc['AvgPoolFC'] >= 0.05
