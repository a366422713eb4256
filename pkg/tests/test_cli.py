import json
import logging

import numpy as np
import pytest

from gatiaa.cli import EXIT_INPUT, EXIT_OK, EXIT_VERIFICATION, main
from gatiaa.graph.afg import afg_read
from gatiaa.graph.manifest import read_manifest
from gatiaa.services.evaluation import read_report_metrics

TINY_MODEL = ['--set', 'model.variant=GAT1_GATP', '--set', 'model.d_enc=8', '--set', 'model.d_att=4',
              '--set', 'model.heads=2', '--set', 'model.d_dec=8', '--set', 'model.drop_p=0.1']


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / 'synth'
    code = main(['synth', '--out', str(out), '--count', '80', '--seed', '3',
                 '--set', 'synth.dim=8', '--set', 'synth.grid_w_max=4', '--set', 'synth.grid_h_max=3'])
    assert code == EXIT_OK
    return out


def _write_map(path, array):
    array.astype('<f4').tofile(path)
    d, w, h = array.shape
    path.with_name(path.name + '.json').write_text(json.dumps({'d': d, 'w': w, 'h': h}))


def test_synth_writes_graphs_and_manifest(synth_dir):
    entries = read_manifest(synth_dir / 'manifest.csv')
    assert len(entries) == 80
    assert {e.split for e in entries} <= {'train', 'val', 'test'}
    graph = afg_read(synth_dir / entries[0].path)
    assert graph.dim == 8
    assert graph.label is not None


def test_build_graph_from_raw_maps(tmp_path, rng):
    first = tmp_path / 'conv4.raw'
    second = tmp_path / 'conv5.raw'
    _write_map(first, rng.standard_normal((3, 8, 6)))
    _write_map(second, rng.standard_normal((5, 4, 3)))
    out = tmp_path / 'img-1.afg'
    assert main(['build-graph', str(first), str(second), '--out', str(out)]) == EXIT_OK
    graph = afg_read(out)
    assert (graph.grid_w, graph.grid_h, graph.dim) == (4, 3, 8)
    assert graph.id == 'img-1'


def test_build_graph_rejects_bad_sidecar(tmp_path, rng):
    path = tmp_path / 'conv.raw'
    _write_map(path, rng.standard_normal((2, 3, 3)))
    path.with_name('conv.raw.json').write_text(json.dumps({'d': 2, 'w': 3, 'h': 4}))
    assert main(['build-graph', str(path), '--out', str(tmp_path / 'g.afg')]) == EXIT_INPUT
    path.with_name('conv.raw.json').write_text('{not json')
    assert main(['build-graph', str(path), '--out', str(tmp_path / 'g.afg')]) == EXIT_INPUT
    assert main(['build-graph', str(tmp_path / 'missing.raw'), '--out', str(tmp_path / 'g.afg')]) == EXIT_INPUT


def test_train_then_eval(synth_dir, tmp_path, capsys):
    manifest = str(synth_dir / 'manifest.csv')
    ckpt_dir = tmp_path / 'ckpt'
    code = main(['train', '--manifest', manifest, '--out', str(ckpt_dir), '--deterministic',
                 '--set', 'train.epochs=1', '--set', 'train.batch_size=16', '--set', 'train.lr0=0.01',
                 *TINY_MODEL])
    assert code == EXIT_OK
    assert 'epoch 0 lr=' in capsys.readouterr().out
    checkpoint = ckpt_dir / 'epoch-000.ckpt'
    assert checkpoint.is_file()

    report_dir = tmp_path / 'report'
    code = main(['eval', '--manifest', manifest, '--checkpoint', str(checkpoint), '--out', str(report_dir),
                 '--set', 'eval.augmented=false'])
    assert code == EXIT_OK
    metrics = read_report_metrics(report_dir / 'report.csv')
    assert metrics['count'] == sum(1 for e in read_manifest(manifest) if e.split == 'test')


def test_eval_oracle_replay(synth_dir, tmp_path, capsys):
    code = main(['eval', '--manifest', str(synth_dir / 'manifest.csv'), '--oracle-replay',
                 '--out', str(tmp_path)])
    assert code == EXIT_OK
    assert 'plcc=1.000000' in capsys.readouterr().out
    assert read_report_metrics(tmp_path / 'report.csv')['plcc'] == pytest.approx(1.0)


def test_eval_needs_checkpoint(synth_dir):
    assert main(['eval', '--manifest', str(synth_dir / 'manifest.csv')]) == EXIT_INPUT


def test_train_without_manifest_is_input_error():
    assert main(['train', '--set', 'train.epochs=1']) == EXIT_INPUT


def test_train_rejects_explicit_width_mismatch(synth_dir):
    code = main(['train', '--manifest', str(synth_dir / 'manifest.csv'), '--set', 'model.d_in=9', *TINY_MODEL])
    assert code == EXIT_INPUT


def test_bad_config_is_input_error(tmp_path):
    assert main(['train', '--set', 'train.epochs=none']) == EXIT_INPUT
    assert main(['synth', '--out', str(tmp_path), '--config', str(tmp_path / 'absent.cfg')]) == EXIT_INPUT


def test_gradcheck_exit_codes(capsys):
    assert main(['gradcheck', '--unit', 'linear']) == EXIT_OK
    assert 'gradcheck passed' in capsys.readouterr().out
    assert main(['gradcheck', '--unit', 'linear', '--corrupt']) == EXIT_VERIFICATION
    assert main(['gradcheck', '--unit', 'conv']) == EXIT_INPUT


@pytest.mark.parametrize('argv', [[], ['fit'], ['synth', '--bogus'], ['train', '--seed', 'x']])
def test_usage_errors(argv):
    assert main(argv) == EXIT_INPUT


def test_help_exits_cleanly():
    assert main(['--help']) == EXIT_OK


def test_synth_reports_unwritable_output(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x')
    assert main(['synth', '--out', str(blocker / 'sub'), '--count', '3', '--set', 'synth.dim=4']) == EXIT_INPUT


def test_feature_map_size_mismatch(tmp_path):
    path = tmp_path / 'short.raw'
    np.zeros(5, dtype='<f4').tofile(path)
    path.with_name('short.raw.json').write_text(json.dumps({'d': 1, 'w': 2, 'h': 3}))
    assert main(['build-graph', str(path), '--out', str(tmp_path / 'g.afg')]) == EXIT_INPUT


def test_synth_is_byte_identical_for_the_same_seed(tmp_path):
    outputs = []
    for name in ('first', 'second'):
        out = tmp_path / name
        assert main(['synth', '--out', str(out), '--count', '12', '--seed', '8', '--set', 'synth.dim=4']) == EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted(out.rglob('*')) if p.is_file()})
    assert len(outputs[0]) == 13
    assert outputs[0] == outputs[1]


def test_gradcheck_logs_effective_settings(caplog):
    caplog.set_level(logging.INFO, logger='gatiaa')
    assert main(['gradcheck', '--unit', 'linear', '--seed', '4']) == EXIT_OK
    lines = [r.getMessage() for r in caplog.records if r.getMessage().startswith('config ')]
    assert 'config gradcheck.seed=4' in lines
    assert 'config gradcheck.units=linear' in lines
    assert 'config gradcheck.tolerance=0.0001' in lines


def test_build_graph_logs_effective_settings(tmp_path, rng, caplog):
    caplog.set_level(logging.INFO, logger='gatiaa')
    path = tmp_path / 'conv.raw'
    _write_map(path, rng.standard_normal((2, 3, 3)))
    out = tmp_path / 'photo.afg'
    assert main(['build-graph', str(path), '--out', str(out)]) == EXIT_OK
    lines = [r.getMessage() for r in caplog.records if r.getMessage().startswith('config ')]
    assert lines == ["config build_graph.id=photo", f"config build_graph.maps={path}",
                     f"config build_graph.out={out}"]
