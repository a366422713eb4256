"""
Network building blocks operating on GraphBatch node matrices.

Every layer is composed from gatiaa.autodiff primitives; masks and batch
statistics enter as constants. Node rows of different graphs never mix except
inside the per-graph blocks selected by the batch masks.
"""
import logging
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from gatiaa.autodiff import ops
from gatiaa.autodiff.tensor import DiffValue, constant, parameter
from gatiaa.graph.batching import GraphBatch
from gatiaa.utils.errors import GatiaaError, ShapeError

logger = logging.getLogger(__name__)

TRAIN = 'train'
EVAL = 'eval'
MODES = (TRAIN, EVAL)


def _check_mode(mode: str):
    if mode not in MODES:
        raise GatiaaError(f"mode must be one of {MODES}, got {mode!r}", {'mode': mode})


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Named parameters and non-trainable buffers of one block."""

    def parameters(self) -> Dict[str, DiffValue]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, DiffValue]]:
        for name, value in self.parameters().items():
            yield f"{prefix}.{name}", value

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self.buffers().items():
            yield f"{prefix}.{name}", value

    def load_buffer(self, name: str, value: np.ndarray):
        raise KeyError(name)


class LinearLayer(Layer):
    """x W + b with W of shape (d_in, d_out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32,
                 bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = parameter(uniform_init(rng, d_in, (d_in, d_out), dtype))
        self.bias = parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def parameters(self) -> Dict[str, DiffValue]:
        params = {'weight': self.weight}
        if self.bias is not None:
            params['bias'] = self.bias
        return params

    def __call__(self, x: DiffValue) -> DiffValue:
        return linear_forward(self, x)


def linear_forward(layer: LinearLayer, x: DiffValue) -> DiffValue:
    if x.value.ndim != 2 or x.shape[1] != layer.d_in:
        raise ShapeError('linear', x.shape, layer.weight.shape)
    out = ops.matmul(x, layer.weight)
    if layer.bias is not None:
        out = ops.add_row(out, layer.bias)
    return out


class BatchNorm(Layer):
    """
    Per-feature normalisation over all node rows of a batch.

    Running statistics use momentum 0.1 and the unbiased batch variance;
    normalisation itself uses the biased variance.
    """

    def __init__(self, dim: int, momentum: float = 0.1, epsilon: float = 1e-5, dtype=np.float32):
        if epsilon <= 0:
            raise GatiaaError(f"epsilon must be positive, got {epsilon}")
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.scale = parameter(np.ones(dim, dtype=dtype))
        self.shift = parameter(np.zeros(dim, dtype=dtype))
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)

    def parameters(self) -> Dict[str, DiffValue]:
        return {'scale': self.scale, 'shift': self.shift}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {'running_mean': self.running_mean, 'running_var': self.running_var}

    def load_buffer(self, name: str, value: np.ndarray):
        if name not in ('running_mean', 'running_var'):
            raise KeyError(name)
        setattr(self, name, np.array(value, dtype=self.scale.dtype))

    def __call__(self, x: DiffValue, mode: str) -> DiffValue:
        return batch_norm(self, x, mode)


def batch_norm(state: BatchNorm, x: DiffValue, mode: str) -> DiffValue:
    _check_mode(mode)
    if x.value.ndim != 2 or x.shape[1] != state.dim:
        raise ShapeError('batch_norm', x.shape, (state.dim,))
    rows = x.shape[0]
    dtype = x.dtype

    if mode == TRAIN:
        if rows < 2:
            raise ShapeError('batch_norm', x.shape,
                             message=f"batch_norm: train mode needs at least 2 rows, got {rows}")
        mean = ops.column_mean(x)
        centered = ops.add_row(x, ops.scale(mean, -1.0))
        var = ops.column_mean(ops.multiply(centered, centered))
        eps = constant(np.full((1, state.dim), state.epsilon, dtype=dtype))
        inv_std = ops.exp(ops.scale(ops.log(ops.add(var, eps)), -0.5))
        normed = ops.multiply(centered, ops.broadcast_rows(inv_std, rows))

        m = state.momentum
        unbiased = var.value.reshape(-1) * (rows / (rows - 1))
        state.running_mean = ((1 - m) * state.running_mean + m * mean.value.reshape(-1)).astype(dtype)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(dtype)
    else:
        centered = ops.add_row(x, constant(-state.running_mean.astype(dtype)))
        inv_std = (1.0 / np.sqrt(state.running_var.astype(np.float64) + state.epsilon)).astype(dtype)
        normed = ops.multiply(centered, constant(np.broadcast_to(inv_std, x.shape).copy()))

    scaled = ops.multiply(normed, ops.broadcast_rows(state.scale, rows))
    return ops.add_row(scaled, state.shift)


def dropout(x: DiffValue, p: float, mode: str, rng: Optional[np.random.Generator] = None,
            seed: Optional[int] = None) -> DiffValue:
    """Inverted dropout: survivors are scaled by 1 / (1 - p)."""
    if not 0 <= p < 1:
        raise GatiaaError(f"dropout probability must be in [0, 1), got {p}", {'p': p})
    _check_mode(mode)
    if mode == EVAL or p == 0:
        return x
    if rng is None:
        rng = np.random.default_rng(seed)
    keep = rng.random(x.shape) >= p
    mask = (keep / (1.0 - p)).astype(x.dtype)
    return ops.multiply(x, constant(mask))


class Dropout(Layer):
    def __init__(self, p: float):
        if not 0 <= p < 1:
            raise GatiaaError(f"dropout probability must be in [0, 1), got {p}", {'p': p})
        self.p = p

    def __call__(self, x: DiffValue, mode: str, rng: Optional[np.random.Generator] = None) -> DiffValue:
        return dropout(x, self.p, mode, rng=rng)


def graph_size_norm(x: DiffValue, batch: GraphBatch, exponent: float = 1.0) -> DiffValue:
    """Divide every node row of graph i by N_i ** exponent."""
    if x.shape[0] != batch.num_nodes:
        raise ShapeError('graph_size_norm', x.shape, (batch.num_nodes,))
    factors = (1.0 / np.power(batch.node_sizes().astype(np.float64), exponent)).astype(x.dtype)
    return ops.multiply(x, constant(np.broadcast_to(factors[:, None], x.shape).copy()))


def global_mean_pool(x: DiffValue, batch: GraphBatch) -> DiffValue:
    if x.shape[0] != batch.num_nodes:
        raise ShapeError('global_mean_pool', x.shape, (batch.num_nodes,))
    return ops.segment_mean(x, batch.graph_index, batch.num_graphs)


def neighbour_mask(batch: GraphBatch, self_loops: bool = False) -> np.ndarray:
    """Complete-graph adjacency restricted to each graph."""
    mask = batch.same_graph_mask
    if not self_loops:
        mask = mask & ~np.eye(batch.num_nodes, dtype=bool)
    return mask


def gcn_forward(linear: LinearLayer, batch: GraphBatch, x: DiffValue,
                aggregate: str = 'mean') -> DiffValue:
    """
    Plain message passing: v'_i = aggregate over j != i (same graph) of W v_j.

    A single-node graph has an empty neighbourhood and yields a zero row.
    """
    if aggregate not in ('sum', 'mean'):
        raise GatiaaError(f"aggregate must be 'sum' or 'mean', got {aggregate!r}")
    if x.shape[0] != batch.num_nodes:
        raise ShapeError('gcn', x.shape, (batch.num_nodes,))
    adjacency = neighbour_mask(batch).astype(x.dtype)
    if aggregate == 'mean':
        degree = adjacency.sum(axis=1, keepdims=True)
        adjacency = adjacency / np.where(degree > 0, degree, 1)
    return ops.matmul(constant(adjacency.astype(x.dtype)), linear(x))


class GCNLayer(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32,
                 aggregate: str = 'mean'):
        self.linear = LinearLayer(d_in, d_out, rng, dtype)
        self.aggregate = aggregate

    def named_parameters(self, prefix: str):
        return self.linear.named_parameters(f"{prefix}.linear")

    def __call__(self, x: DiffValue, batch: GraphBatch) -> DiffValue:
        return gcn_forward(self.linear, batch, x, self.aggregate)


class GATLayer(Layer):
    """
    Multi-head graph attention over complete per-graph neighbourhoods.

    Head k scores e_ij = LeakyReLU(a_k . [U_k v_i || U_k v_j]), normalises the
    scores with a softmax over the neighbourhood of i and aggregates W_k v_j.
    Heads are concatenated or averaged.
    """

    def __init__(self, d_in: int, d_head: int, d_att: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32, leaky_slope: float = 0.2, head_combine: str = 'concat',
                 self_loops: bool = False):
        if heads < 1:
            raise GatiaaError(f"GAT needs at least one head, got {heads}")
        if head_combine not in ('concat', 'average'):
            raise GatiaaError(f"head_combine must be 'concat' or 'average', got {head_combine!r}")
        self.d_in = d_in
        self.d_head = d_head
        self.d_att = d_att
        self.heads = heads
        self.leaky_slope = leaky_slope
        self.head_combine = head_combine
        self.self_loops = self_loops
        self.value_weights: List[DiffValue] = []
        self.attention_weights: List[DiffValue] = []
        self.attention_vectors: List[DiffValue] = []
        for _ in range(heads):
            self.value_weights.append(parameter(uniform_init(rng, d_in, (d_in, d_head), dtype)))
            self.attention_weights.append(parameter(uniform_init(rng, d_in, (d_in, d_att), dtype)))
            self.attention_vectors.append(parameter(uniform_init(rng, 2 * d_att, (2 * d_att, 1), dtype)))

    @property
    def output_width(self) -> int:
        return self.heads * self.d_head if self.head_combine == 'concat' else self.d_head

    def parameters(self) -> Dict[str, DiffValue]:
        params = {}
        for k in range(self.heads):
            params[f"head{k}.W"] = self.value_weights[k]
            params[f"head{k}.U"] = self.attention_weights[k]
            params[f"head{k}.a"] = self.attention_vectors[k]
        return params

    def __call__(self, x: DiffValue, batch: GraphBatch) -> DiffValue:
        out, _ = gat_attention(self, batch, x)
        return out


def gat_attention(layer: GATLayer, batch: GraphBatch, x: DiffValue
                  ) -> Tuple[DiffValue, List[np.ndarray]]:
    """Returns the combined node matrix and the (N, N) attention matrix of every head."""
    if x.value.ndim != 2 or x.shape[1] != layer.d_in:
        raise ShapeError('gat', x.shape, (layer.d_in,))
    if x.shape[0] != batch.num_nodes:
        raise ShapeError('gat', x.shape, (batch.num_nodes,))
    n = x.shape[0]
    mask = neighbour_mask(batch, layer.self_loops)
    row_ones = np.ones((1, n), dtype=x.dtype)
    col_ones = np.ones((n, 1), dtype=x.dtype)
    src_rows = np.arange(layer.d_att)
    dst_rows = np.arange(layer.d_att, 2 * layer.d_att)

    head_outputs = []
    alphas = []
    for k in range(layer.heads):
        z = ops.matmul(x, layer.attention_weights[k])
        a = layer.attention_vectors[k]
        src = ops.matmul(z, ops.take_rows(a, src_rows))
        dst = ops.matmul(z, ops.take_rows(a, dst_rows))
        scores = ops.add(ops.matmul(src, row_ones), ops.matmul(col_ones, ops.transpose(dst)))
        scores = ops.leaky_relu(scores, layer.leaky_slope)
        alpha = ops.masked_row_softmax(scores, mask)
        if not np.all(np.isfinite(alpha.value)):
            raise GatiaaError("non-finite attention weights", {'head': k})
        values = ops.matmul(x, layer.value_weights[k])
        head_outputs.append(ops.matmul(alpha, values))
        alphas.append(alpha.value)

    if layer.head_combine == 'concat':
        combined = ops.concat(head_outputs, axis=1) if layer.heads > 1 else head_outputs[0]
    else:
        total = head_outputs[0]
        for h in head_outputs[1:]:
            total = ops.add(total, h)
        combined = ops.scale(total, 1.0 / layer.heads)
    return combined, alphas


class GATPool(Layer):
    """Multi-head soft-attention readout; heads are averaged."""

    def __init__(self, d_in: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if heads < 1:
            raise GatiaaError(f"GATP needs at least one head, got {heads}")
        self.d_in = d_in
        self.heads = heads
        self.gates = [LinearLayer(d_in, 1, rng, dtype) for _ in range(heads)]

    def named_parameters(self, prefix: str):
        for k, gate in enumerate(self.gates):
            yield from gate.named_parameters(f"{prefix}.gate{k}")

    def __call__(self, x: DiffValue, batch: GraphBatch) -> DiffValue:
        out, _ = gatp_readout(self, batch, x)
        return out


def gatp_readout(pool: GATPool, batch: GraphBatch, x: DiffValue
                 ) -> Tuple[DiffValue, List[np.ndarray]]:
    """Per-graph vectors (G, d) and the (G, N) node weights of every head."""
    if x.shape[0] != batch.num_nodes:
        raise ShapeError('gatp', x.shape, (batch.num_nodes,))
    membership = batch.membership_mask
    graph_ones = np.ones((batch.num_graphs, 1), dtype=x.dtype)
    pooled = None
    weights = []
    for gate in pool.gates:
        scores = ops.matmul(graph_ones, ops.transpose(gate(x)))
        w = ops.masked_row_softmax(scores, membership)
        head = ops.matmul(w, x)
        pooled = head if pooled is None else ops.add(pooled, head)
        weights.append(w.value)
    return ops.scale(pooled, 1.0 / pool.heads), weights
