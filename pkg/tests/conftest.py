import numpy as np
import pytest

from gatiaa.graph.feature_graph import FeatureGraph
from gatiaa.graph.synth import SynthConfig, label_histogram, synth_generate
from gatiaa.models import ModelSpec, build_model
from gatiaa.services.training import TrainConfig


@pytest.fixture
def rng():
    """A seeded generator for each test."""
    return np.random.default_rng(1234)


@pytest.fixture
def make_graph():
    """Factory for labeled random graphs of a given grid and width."""
    def _make(grid_w, grid_h, dim=6, seed=0, graph_id='g', dtype=np.float32):
        generator = np.random.default_rng(seed)
        nodes = generator.standard_normal((grid_w * grid_h, dim)).astype(dtype)
        label = label_histogram(float(generator.uniform(2, 9)))
        return FeatureGraph(nodes, grid_w, grid_h, label, graph_id)
    return _make


@pytest.fixture
def small_graphs():
    """Twenty labeled synthetic graphs of width 8."""
    return synth_generate(7, 20, SynthConfig(dim=8, grid_w_range=(1, 4), grid_h_range=(1, 3)))


@pytest.fixture
def tiny_spec():
    """A GAT3_GATP specification small enough for quick forward passes."""
    return ModelSpec(variant='GAT3_GATP', d_in=8, d_enc=8, d_att=4, heads=2, d_dec=8, drop_p=0.5)


@pytest.fixture
def tiny_model(tiny_spec):
    return build_model(tiny_spec, seed=3)


@pytest.fixture
def quick_train_config(tmp_path):
    """Two short epochs writing checkpoints under the test's temp dir."""
    return TrainConfig(lr0=1e-2, epochs=2, batch_size=8, seed=5, checkpoint_dir=str(tmp_path / 'ckpt'),
                       eval_batch_size=16)
