"""
Finite-difference verification of every layer and of a tiny full model.

Each unit builds double-precision parameters and a small mixed-size batch,
contracts the unit output with a fixed random weighting into a scalar and runs
grad_check on it.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from gatiaa.autodiff import ops
from gatiaa.autodiff.gradcheck import grad_check
from gatiaa.autodiff.tensor import DiffValue, constant, parameter
from gatiaa.graph.batching import GraphBatch, batch
from gatiaa.graph.feature_graph import FeatureGraph
from gatiaa.graph.synth import label_histogram
from gatiaa.models import ModelSpec, build_model
from gatiaa.nn.layers import (
    EVAL,
    TRAIN,
    BatchNorm,
    GATLayer,
    GATPool,
    LinearLayer,
    dropout,
    gcn_forward,
    global_mean_pool,
    graph_size_norm
)
from gatiaa.services.training import mse_histogram_loss
from gatiaa.utils.errors import GradCheckError

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
STEP = 1e-5
GRIDS = ((2, 2), (1, 3), (3, 1), (1, 1))
WIDE_GRIDS = GRIDS * 3
TINY_SPEC = ModelSpec(variant='GAT3_GATP', d_in=6, d_enc=8, d_att=4, heads=2, d_dec=8, drop_p=0.5)


@dataclass
class UnitResult:
    name: str
    max_rel_error: float
    coordinates: int
    seconds: float
    kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def tiny_batch(dim: int, seed: int = 0, grids=GRIDS, labeled: bool = False) -> GraphBatch:
    rng = np.random.default_rng(seed)
    graphs = []
    for i, (w, h) in enumerate(grids):
        label = label_histogram(float(rng.uniform(2, 9))) if labeled else None
        graphs.append(FeatureGraph(rng.standard_normal((w * h, dim)), w, h, label, f"check-{i}"))
    return batch(graphs)


def _shift_invariant(name: str) -> bool:
    """Readout gate biases shift every score of a graph equally; the softmax cancels them."""
    return '.gate' in name and name.endswith('.bias')


def _contract(out: DiffValue, seed: int) -> DiffValue:
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    return ops.sum_all(ops.multiply(out, constant(weights)))


UnitBuilder = Callable[[np.random.Generator], Tuple[Callable[[], DiffValue], List[DiffValue]]]


def _linear_unit(rng):
    layer = LinearLayer(5, 3, rng, np.float64)
    layer.bias.value[...] = rng.standard_normal(3)
    x = parameter(rng.standard_normal((7, 5)), name='x')
    return (lambda: _contract(layer(x), 1)), [layer.weight, layer.bias, x]


def _gcn_unit(rng):
    graph_batch = tiny_batch(5)
    layer = LinearLayer(5, 4, rng, np.float64)
    x = parameter(graph_batch.nodes, name='x')
    return (lambda: _contract(gcn_forward(layer, graph_batch, x, 'mean'), 2)), [layer.weight, layer.bias, x]


def _gat_unit(rng):
    graph_batch = tiny_batch(5)
    layer = GATLayer(5, 3, 4, 2, rng, np.float64)
    x = parameter(graph_batch.nodes, name='x')
    return (lambda: _contract(layer(x, graph_batch), 3)), list(layer.parameters().values()) + [x]


def _graph_size_norm_unit(rng):
    graph_batch = tiny_batch(5)
    x = parameter(graph_batch.nodes, name='x')
    return (lambda: _contract(graph_size_norm(x, graph_batch), 4)), [x]


def _batch_norm_unit(rng):
    state = BatchNorm(5, dtype=np.float64)
    state.scale.value[...] = rng.uniform(0.5, 1.5, 5)
    state.shift.value[...] = rng.standard_normal(5)
    x = parameter(rng.standard_normal((6, 5)), name='x')
    return (lambda: _contract(state(x, TRAIN), 5)), [state.scale, state.shift, x]


def _gatp_unit(rng):
    graph_batch = tiny_batch(5)
    pool = GATPool(5, 3, rng, np.float64)
    x = parameter(graph_batch.nodes, name='x')
    params = [p for name, p in pool.named_parameters('readout') if not _shift_invariant(name)]
    return (lambda: _contract(pool(x, graph_batch), 6)), params + [x]


def _dropout_unit(rng):
    x = parameter(rng.standard_normal((6, 4)), name='x')

    def objective():
        masked = dropout(x, 0.5, TRAIN, seed=11)
        return _contract(ops.add(masked, dropout(x, 0.5, EVAL)), 7)

    return objective, [x]


def _mean_pool_unit(rng):
    graph_batch = tiny_batch(5)
    x = parameter(graph_batch.nodes, name='x')
    return (lambda: _contract(global_mean_pool(x, graph_batch), 8)), [x]


def _decoder_unit(rng):
    hidden = LinearLayer(6, 8, rng, np.float64)
    state = BatchNorm(8, dtype=np.float64)
    out = LinearLayer(8, 10, rng, np.float64)
    x = parameter(rng.standard_normal((16, 6)), name='x')
    target = np.random.default_rng(9).dirichlet(np.ones(10), size=16)

    def objective():
        h = state(ops.relu(hidden(x)), TRAIN)
        return mse_histogram_loss(ops.row_softmax(out(h)), target)

    return objective, [hidden.weight, hidden.bias, state.scale, state.shift, out.weight, out.bias, x]


def _model_unit(rng):
    model = build_model(TINY_SPEC, seed=int(rng.integers(1 << 31)), dtype=np.float64)
    graph_batch = tiny_batch(TINY_SPEC.d_in, grids=WIDE_GRIDS, labeled=True)
    targets = graph_batch.label_matrix()

    def objective():
        out = model.forward(graph_batch, TRAIN, rng=np.random.default_rng(13))
        return mse_histogram_loss(out, targets)

    params = [p for name, p in model.named_parameters().items() if not _shift_invariant(name)]
    return objective, params


UNITS: Dict[str, UnitBuilder] = {
    'linear': _linear_unit,
    'gcn': _gcn_unit,
    'gat': _gat_unit,
    'graph_size_norm': _graph_size_norm_unit,
    'batch_norm': _batch_norm_unit,
    'gatp': _gatp_unit,
    'global_mean_pool': _mean_pool_unit,
    'dropout': _dropout_unit,
    'decoder': _decoder_unit,
    'model': _model_unit
}


def run_gradcheck_suite(seed: int = 0, corrupt: Optional[str] = None, units: Optional[List[str]] = None,
                        max_coords: int = 48) -> List[UnitResult]:
    """
    Check every unit; `corrupt` names a unit whose first analytic gradient is
    scaled by 1.5 before comparison.
    """
    unknown = [u for u in (units or []) + ([corrupt] if corrupt else []) if u not in UNITS]
    if unknown:
        raise GradCheckError(f"unknown gradcheck unit(s) {unknown}; choose from {list(UNITS)}",
                             {'units': unknown})
    results = []
    for name in units or list(UNITS):
        rng = np.random.default_rng([seed, list(UNITS).index(name)])
        objective, params = UNITS[name](rng)
        for position, p in enumerate(params):
            p.name = p.name or f"param{position}"
        hook = None
        if corrupt == name:
            first = params[0].name

            def hook(param_name, grad, first=first):
                return grad * 1.5 if param_name == first else grad

        started = time.perf_counter()
        outcome = grad_check(objective, params, h=STEP, max_coords=max_coords, seed=seed, analytic_hook=hook)
        result = UnitResult(name, outcome.max_rel_error, outcome.coordinates, time.perf_counter() - started,
                            outcome.kinks)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"gradcheck {name}: max relative error {result.max_rel_error:.3e} "
                          f"({result.coordinates} coords, {result.kinks} kinks, {result.seconds:.2f}s)")
        results.append(result)
    return results
