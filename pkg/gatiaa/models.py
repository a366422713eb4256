"""
The six ablation architectures assembled from gatiaa.nn.

Every variant maps a GraphBatch of (N, d_in) node rows to one output row per
graph: a 10-bin score distribution by default, or a single score in
`head_mode='score'`.
"""
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from gatiaa.autodiff import ops
from gatiaa.autodiff.tensor import DiffValue, constant
from gatiaa.graph.batching import GraphBatch
from gatiaa.graph.feature_graph import NUM_BINS, ScoreHistogram
from gatiaa.nn.layers import (
    EVAL,
    TRAIN,
    BatchNorm,
    GATLayer,
    GATPool,
    GCNLayer,
    LinearLayer,
    dropout,
    gat_attention,
    global_mean_pool,
    graph_size_norm
)
from gatiaa.utils.errors import GatiaaError, ModelSpecError, ShapeError

logger = logging.getLogger(__name__)

VARIANTS = ('AvgPoolFC', 'AvgPoolED', 'GCN_GMP', 'GAT1_GMP', 'GAT1_GATP', 'GAT3_GATP')
MESSAGE_PASSING_LAYERS = {
    'AvgPoolFC': 0,
    'AvgPoolED': 0,
    'GCN_GMP': 1,
    'GAT1_GMP': 1,
    'GAT1_GATP': 1,
    'GAT3_GATP': 3
}
FINAL_ACTIVATIONS = ('softmax', 'none')
HEAD_COMBINES = ('concat', 'average')
HEAD_MODES = ('distribution', 'score')
AGGREGATES = ('mean', 'sum')


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyper-parameters; `d_head` defaults to d_enc // heads."""

    variant: str = 'GAT3_GATP'
    d_in: int = 16928
    d_enc: int = 2048
    d_att: int = 64
    heads: int = 16
    d_head: Optional[int] = None
    gat_layers: Optional[int] = None
    d_dec: int = 1024
    bins: int = NUM_BINS
    drop_p: float = 0.8
    final_activation: str = 'softmax'
    head_combine: str = 'concat'
    self_loops: bool = False
    head_mode: str = 'distribution'
    graph_norm_exponent: float = 1.0
    gcn_aggregate: str = 'mean'
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelSpecError('variant', f"must be one of {VARIANTS}, got {self.variant!r}")
        for name in ('d_in', 'd_enc', 'd_att', 'heads', 'd_dec', 'bins'):
            if getattr(self, name) < 1:
                raise ModelSpecError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.d_head is None:
            if self.d_enc % self.heads:
                raise ModelSpecError('heads', f"d_enc={self.d_enc} is not divisible by {self.heads} heads;"
                                              f" set d_head explicitly")
            object.__setattr__(self, 'd_head', self.d_enc // self.heads)
        elif self.d_head < 1:
            raise ModelSpecError('d_head', f"must be >= 1, got {self.d_head}")
        expected_layers = MESSAGE_PASSING_LAYERS[self.variant]
        if self.gat_layers is None:
            object.__setattr__(self, 'gat_layers', expected_layers)
        elif self.gat_layers != expected_layers:
            raise ModelSpecError('gat_layers', f"{self.variant} has {expected_layers} message-passing "
                                               f"layers, got {self.gat_layers}")
        if not 0 <= self.drop_p < 1:
            raise ModelSpecError('drop_p', f"must be in [0, 1), got {self.drop_p}")
        for name, allowed in (('final_activation', FINAL_ACTIVATIONS), ('head_combine', HEAD_COMBINES),
                              ('head_mode', HEAD_MODES), ('gcn_aggregate', AGGREGATES)):
            if getattr(self, name) not in allowed:
                raise ModelSpecError(name, f"must be one of {allowed}, got {getattr(self, name)!r}")
        if self.head_mode == 'distribution' and self.bins != NUM_BINS:
            raise ModelSpecError('bins', f"distribution head needs {NUM_BINS} bins, got {self.bins}")

    @property
    def output_width(self) -> int:
        return 1 if self.head_mode == 'score' else self.bins

    def replace(self, **changes) -> 'ModelSpec':
        values = asdict(self)
        values.update(changes)
        if ('d_enc' in changes or 'heads' in changes) and 'd_head' not in changes:
            values['d_head'] = None
        if 'variant' in changes and 'gat_layers' not in changes:
            values['gat_layers'] = None
        return ModelSpec(**values)

    def to_lines(self) -> List[str]:
        """Canonical `key=value` lines, sorted by key."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name}={value}")
        return lines


def _gat_stack_widths(spec: ModelSpec) -> Tuple[List[int], int]:
    """Input width of every message-passing layer and the width after the stack."""
    widths = []
    width = spec.d_enc
    for _ in range(spec.gat_layers):
        widths.append(width)
        if spec.variant == 'GCN_GMP':
            width = spec.d_enc
        else:
            width = spec.heads * spec.d_head if spec.head_combine == 'concat' else spec.d_head
    return widths, width


def parameter_count(spec: ModelSpec) -> int:
    """Closed-form trainable parameter count."""
    out = spec.output_width
    if spec.variant == 'AvgPoolFC':
        return spec.d_in * out + out

    encoder = spec.d_in * spec.d_enc + spec.d_enc + 2 * spec.d_enc
    widths, width = _gat_stack_widths(spec)
    message_passing = 0
    for w in widths:
        if spec.variant == 'GCN_GMP':
            message_passing += w * spec.d_enc + spec.d_enc
        else:
            message_passing += spec.heads * (w * spec.d_head + w * spec.d_att + 2 * spec.d_att)
    readout = spec.heads * (width + 1) if spec.variant.endswith('GATP') else 0
    decoder = width * spec.d_dec + spec.d_dec + 2 * spec.d_dec + spec.d_dec * out + out
    return encoder + message_passing + readout + decoder


class Model:
    """
    Ordered layer stack with named parameter groups
    `encoder.*`, `mp{i}.*`, `readout.*` and `decoder.*`.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        self.encoder: Optional[LinearLayer] = None
        self.encoder_norm: Optional[BatchNorm] = None
        self.message_passing: List = []
        self.readout: Optional[GATPool] = None
        self.decoder_hidden: Optional[LinearLayer] = None
        self.decoder_norm: Optional[BatchNorm] = None

        if spec.variant == 'AvgPoolFC':
            self.decoder_out = LinearLayer(spec.d_in, spec.output_width, rng, dtype)
            return

        self.encoder = LinearLayer(spec.d_in, spec.d_enc, rng, dtype)
        self.encoder_norm = BatchNorm(spec.d_enc, dtype=dtype)
        widths, width = _gat_stack_widths(spec)
        for w in widths:
            if spec.variant == 'GCN_GMP':
                self.message_passing.append(GCNLayer(w, spec.d_enc, rng, dtype, spec.gcn_aggregate))
            else:
                self.message_passing.append(GATLayer(
                    w, spec.d_head, spec.d_att, spec.heads, rng, dtype,
                    leaky_slope=spec.leaky_slope,
                    head_combine=spec.head_combine,
                    self_loops=spec.self_loops
                ))
        if spec.variant.endswith('GATP'):
            self.readout = GATPool(width, spec.heads, rng, dtype)
        self.decoder_hidden = LinearLayer(width, spec.d_dec, rng, dtype)
        self.decoder_norm = BatchNorm(spec.d_dec, dtype=dtype)
        self.decoder_out = LinearLayer(spec.d_dec, spec.output_width, rng, dtype)

    # ------------------------------------------------------------ parameters

    def _blocks(self) -> Iterator[Tuple[str, object]]:
        if self.encoder is not None:
            yield 'encoder.linear', self.encoder
            yield 'encoder.norm', self.encoder_norm
        for i, layer in enumerate(self.message_passing):
            yield f"mp{i}", layer
        if self.readout is not None:
            yield 'readout', self.readout
        if self.decoder_hidden is not None:
            yield 'decoder.hidden', self.decoder_hidden
            yield 'decoder.norm', self.decoder_norm
        yield 'decoder.out', self.decoder_out

    def named_parameters(self) -> Dict[str, DiffValue]:
        params = {}
        for prefix, block in self._blocks():
            for name, value in block.named_parameters(prefix):
                value.name = name
                params[name] = value
        return params

    def parameters(self) -> List[DiffValue]:
        return list(self.named_parameters().values())

    def named_buffers(self) -> Dict[str, np.ndarray]:
        buffers = {}
        for prefix, block in self._blocks():
            buffers.update(block.named_buffers(prefix))
        return buffers

    def load_buffer(self, name: str, value: np.ndarray):
        for prefix, block in self._blocks():
            if name.startswith(prefix + '.'):
                block.load_buffer(name[len(prefix) + 1:], value)
                return
        raise KeyError(name)

    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # --------------------------------------------------------------- forward

    def forward(self, graph_batch: GraphBatch, mode: str = EVAL,
                rng: Optional[np.random.Generator] = None) -> DiffValue:
        """(G, output_width) predictions for every graph of the batch."""
        spec = self.spec
        if graph_batch.dim != spec.d_in:
            raise ShapeError('forward', (graph_batch.num_nodes, graph_batch.dim), (spec.d_in,),
                             message=f"model expects node width {spec.d_in}, batch has {graph_batch.dim}")
        if mode == TRAIN and rng is None:
            rng = np.random.default_rng(self.seed)
        x = constant(graph_batch.nodes.astype(self.dtype, copy=False))

        if spec.variant == 'AvgPoolFC':
            return self._head(self.decoder_out(global_mean_pool(x, graph_batch)))

        if spec.variant == 'AvgPoolED':
            x = global_mean_pool(x, graph_batch)
            x = self.encoder_norm(ops.relu(self.encoder(x)), mode)
            return self._decode(x, mode, rng)

        x = self.encoder_norm(ops.relu(self.encoder(x)), mode)
        for layer in self.message_passing:
            x = dropout(x, spec.drop_p, mode, rng=rng)
            x = ops.relu(layer(x, graph_batch))
            x = graph_size_norm(x, graph_batch, spec.graph_norm_exponent)
        if self.readout is not None:
            pooled = self.readout(x, graph_batch)
        else:
            pooled = global_mean_pool(x, graph_batch)
        return self._decode(pooled, mode, rng)

    __call__ = forward

    def _decode(self, x: DiffValue, mode: str, rng) -> DiffValue:
        x = dropout(x, self.spec.drop_p, mode, rng=rng)
        x = self.decoder_norm(ops.relu(self.decoder_hidden(x)), mode)
        return self._head(self.decoder_out(x))

    def _head(self, logits: DiffValue) -> DiffValue:
        if self.spec.head_mode == 'distribution' and self.spec.final_activation == 'softmax':
            return ops.row_softmax(logits)
        return logits

    def attention_weights(self, graph_batch: GraphBatch) -> List[List[np.ndarray]]:
        """Eval-mode per-layer, per-head (N, N) attention matrices."""
        if not self.message_passing or isinstance(self.message_passing[0], GCNLayer):
            return []
        x = constant(graph_batch.nodes.astype(self.dtype, copy=False))
        x = self.encoder_norm(ops.relu(self.encoder(x)), EVAL)
        weights = []
        for layer in self.message_passing:
            out, alphas = gat_attention(layer, graph_batch, x)
            weights.append(alphas)
            x = graph_size_norm(ops.relu(out), graph_batch, self.spec.graph_norm_exponent)
        return weights

    def predict_histograms(self, graph_batch: GraphBatch) -> List[ScoreHistogram]:
        """Eval-mode distributions; only defined for a softmax distribution head."""
        if self.spec.head_mode != 'distribution' or self.spec.final_activation != 'softmax':
            raise GatiaaError("histogram predictions need a softmax distribution head",
                              {'head_mode': self.spec.head_mode,
                               'final_activation': self.spec.final_activation})
        out = self.forward(graph_batch, EVAL).value.astype(np.float64)
        return [ScoreHistogram(row / row.sum()) for row in out]


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Instantiate a variant; weights are uniform in +-sqrt(1/fan_in), biases zero."""
    model = Model(spec, seed, dtype)
    count = model.parameter_count()
    expected = parameter_count(spec)
    if count != expected:
        raise ModelSpecError('variant', f"built {count} parameters, expected {expected}")
    logger.info(f"built {spec.variant} with {count} parameters (seed={seed})")
    return model
