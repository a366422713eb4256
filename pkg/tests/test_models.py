import numpy as np
import pytest

from gatiaa.graph.batching import batch
from gatiaa.graph.feature_graph import flip_columns
from gatiaa.graph.synth import SynthConfig, synth_generate
from gatiaa.models import VARIANTS, ModelSpec, build_model, parameter_count
from gatiaa.nn.layers import EVAL, TRAIN
from gatiaa.services.verification import UNITS, run_gradcheck_suite
from gatiaa.utils.errors import GradCheckError, ModelSpecError, ShapeError

SMALL = dict(d_in=8, d_enc=8, d_att=4, heads=2, d_dec=8, drop_p=0.5)


@pytest.fixture
def mixed_graphs():
    return synth_generate(3, 12, SynthConfig(dim=8, grid_w_range=(1, 8), grid_h_range=(1, 6)))


@pytest.mark.parametrize('variant', VARIANTS)
def test_parameter_count_matches_closed_form(variant):
    spec = ModelSpec(variant=variant, **SMALL)
    model = build_model(spec)
    assert model.parameter_count() == parameter_count(spec)


def test_default_spec_dimensions():
    spec = ModelSpec()
    assert spec.d_head == 128
    assert spec.gat_layers == 3
    assert spec.output_width == 10


def test_avgpool_fc_is_single_linear_layer():
    spec = ModelSpec(variant='AvgPoolFC', **SMALL)
    assert parameter_count(spec) == 8 * 10 + 10
    assert sorted(build_model(spec).named_parameters()) == ['decoder.out.bias', 'decoder.out.weight']


def test_parameter_names_are_grouped(tiny_model):
    names = tiny_model.named_parameters()
    assert 'encoder.linear.weight' in names
    assert 'mp2.head1.a' in names
    assert 'readout.gate1.weight' in names
    assert 'decoder.norm.scale' in names
    assert all(p.name == name for name, p in names.items())


@pytest.mark.parametrize('variant', VARIANTS)
def test_forward_shapes_and_distribution(variant, mixed_graphs):
    model = build_model(ModelSpec(variant=variant, **SMALL), seed=1)
    graph_batch = batch(mixed_graphs)
    for mode in (TRAIN, EVAL):
        out = model.forward(graph_batch, mode, rng=np.random.default_rng(0)).value
        assert out.shape == (12, 10)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-5)
        assert np.all(out >= 0)


def test_score_head_width(mixed_graphs):
    model = build_model(ModelSpec(variant='GAT1_GATP', head_mode='score', **SMALL))
    assert model(batch(mixed_graphs)).shape == (12, 1)


def test_final_activation_none_returns_logits(mixed_graphs):
    model = build_model(ModelSpec(variant='GCN_GMP', final_activation='none', **SMALL))
    out = model(batch(mixed_graphs)).value
    assert not np.allclose(out.sum(axis=1), 1.0)


@pytest.mark.parametrize('variant', VARIANTS)
def test_permutation_and_flip_invariance(variant):
    model = build_model(ModelSpec(variant=variant, **SMALL), seed=2)
    rng = np.random.default_rng(9)
    graphs = synth_generate(5, 100, SynthConfig(dim=8, grid_w_range=(1, 8), grid_h_range=(1, 6)))
    reference = model(batch(graphs)).value
    permuted = [g.permuted(rng.permutation(g.num_nodes)) for g in graphs]
    np.testing.assert_allclose(model(batch(permuted)).value, reference, atol=1e-5)
    flipped = [flip_columns(g) for g in graphs]
    np.testing.assert_allclose(model(batch(flipped)).value, reference, atol=1e-5)


@pytest.mark.parametrize('variant', VARIANTS)
def test_batching_equivalence(variant, mixed_graphs):
    """Eval-mode outputs of a mixed-size batch equal per-graph outputs."""
    model = build_model(ModelSpec(variant=variant, **SMALL), seed=4)
    batched = model(batch(mixed_graphs)).value
    for i, g in enumerate(mixed_graphs):
        np.testing.assert_allclose(batched[i], model(batch([g])).value[0], atol=1e-5)


def test_train_mode_is_seed_deterministic(tiny_model, mixed_graphs):
    graph_batch = batch(mixed_graphs)
    first = tiny_model.forward(graph_batch, TRAIN, rng=np.random.default_rng(8)).value
    second = tiny_model.forward(graph_batch, TRAIN, rng=np.random.default_rng(8)).value
    np.testing.assert_array_equal(first, second)


def test_attention_weights_shapes(tiny_model, mixed_graphs):
    graph_batch = batch(mixed_graphs[:3])
    weights = tiny_model.attention_weights(graph_batch)
    assert len(weights) == 3
    assert all(len(layer) == 2 for layer in weights)
    assert weights[0][0].shape == (graph_batch.num_nodes, graph_batch.num_nodes)


def test_predict_histograms(tiny_model, mixed_graphs):
    histograms = tiny_model.predict_histograms(batch(mixed_graphs[:4]))
    assert len(histograms) == 4
    assert all(1 <= h.mean_score <= 10 for h in histograms)


def test_forward_rejects_wrong_width(tiny_model):
    graphs = synth_generate(0, 2, SynthConfig(dim=5))
    with pytest.raises(ShapeError):
        tiny_model(batch(graphs))


@pytest.mark.parametrize('changes, field', [
    ({'variant': 'GAT2'}, 'variant'),
    ({'heads': 3}, 'heads'),
    ({'gat_layers': 1}, 'gat_layers'),
    ({'drop_p': 1.0}, 'drop_p'),
    ({'head_mode': 'ranking'}, 'head_mode'),
    ({'bins': 5}, 'bins')
])
def test_model_spec_validation(changes, field):
    values = dict(SMALL, variant='GAT3_GATP')
    values.update(changes)
    with pytest.raises(ModelSpecError) as excinfo:
        ModelSpec(**values)
    assert excinfo.value.field == field


def test_spec_replace_recomputes_derived_fields():
    spec = ModelSpec(variant='GAT3_GATP', **SMALL)
    changed = spec.replace(variant='GAT1_GMP', heads=4)
    assert changed.gat_layers == 1
    assert changed.d_head == 2


def test_gradcheck_suite_passes():
    results = run_gradcheck_suite(seed=0)
    assert [r.name for r in results] == list(UNITS)
    for r in results:
        assert r.passed, f"{r.name}: {r.max_rel_error:.3e}"


def test_gradcheck_suite_detects_corruption():
    results = run_gradcheck_suite(seed=0, corrupt='linear', units=['linear', 'gat'])
    by_name = {r.name: r for r in results}
    assert not by_name['linear'].passed
    assert by_name['gat'].passed


def test_gradcheck_suite_rejects_unknown_unit():
    with pytest.raises(GradCheckError):
        run_gradcheck_suite(units=['conv'])


def test_smooth_units_report_no_kinks():
    results = run_gradcheck_suite(seed=0, units=['linear', 'gcn', 'graph_size_norm', 'batch_norm', 'gatp'])
    for r in results:
        assert r.passed, f"{r.name}: {r.max_rel_error:.3e}"
        assert r.kinks == 0, r.name


def test_gradcheck_suite_detects_corrupted_readout():
    [result] = run_gradcheck_suite(seed=0, corrupt='gatp', units=['gatp'])
    assert not result.passed
    assert result.kinks == 0


def test_model_unit_leaves_out_readout_gate_biases():
    _, params = UNITS['model'](np.random.default_rng(0))
    names = [p.name for p in params]
    assert 'readout.gate0.weight' in names
    assert 'decoder.hidden.bias' in names
    assert not [n for n in names if '.gate' in n and n.endswith('.bias')]
