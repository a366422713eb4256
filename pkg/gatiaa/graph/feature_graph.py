"""
Feature graphs: one photograph as a complete graph over its feature grid.

Node (r, c) of a W x H grid sits at row r * W + c of the node matrix. Edges are
implicit: every node is adjacent to every other node of the same graph.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gatiaa.utils.errors import GraphError

logger = logging.getLogger(__name__)

NUM_BINS = 10
CROP_AREA_FRACTION = 0.85


@dataclass(frozen=True)
class ScoreHistogram:
    """
    Normalised 10-bin distribution of ratings; bin i carries score i.

    Bins are held at single precision (widened to float64) so they survive the
    AFG round trip unchanged.
    """

    bins: np.ndarray

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.float32).astype(np.float64).reshape(-1)
        if bins.shape != (NUM_BINS,):
            raise GraphError(f"histogram needs {NUM_BINS} bins, got {bins.size}",
                             {'bins': bins.size})
        if not np.all(np.isfinite(bins)) or np.any(bins < 0):
            raise GraphError("histogram bins must be finite and nonnegative")
        if abs(bins.sum() - 1.0) > 1e-6:
            raise GraphError(f"histogram must sum to 1, got {bins.sum():.8f}",
                             {'sum': float(bins.sum())})
        bins.setflags(write=False)
        object.__setattr__(self, 'bins', bins)

    @classmethod
    def from_counts(cls, counts: Sequence[float]) -> 'ScoreHistogram':
        counts = np.asarray(counts, dtype=np.float64)
        total = counts.sum()
        if total <= 0:
            raise GraphError("histogram counts must have a positive total")
        return cls(counts / total)

    @property
    def mean_score(self) -> float:
        return float(np.dot(np.arange(1, NUM_BINS + 1), self.bins))

    def __eq__(self, other):
        return isinstance(other, ScoreHistogram) and np.array_equal(self.bins, other.bins)

    def __hash__(self):
        return hash(self.bins.tobytes())


@dataclass(frozen=True)
class FeatureGraph:
    """A (grid_w * grid_h)-node complete graph with D-dimensional node vectors."""

    nodes: np.ndarray
    grid_w: int
    grid_h: int
    label: Optional[ScoreHistogram] = None
    id: str = ''

    def __post_init__(self):
        nodes = np.asarray(self.nodes)
        if nodes.ndim != 2:
            raise GraphError(f"graph {self.id!r}: nodes must be a matrix, got shape {nodes.shape}",
                             {'id': self.id})
        if self.grid_w < 1 or self.grid_h < 1:
            raise GraphError(f"graph {self.id!r}: grid dims must be positive, "
                             f"got {self.grid_w}x{self.grid_h}", {'id': self.id})
        if nodes.shape[0] != self.grid_w * self.grid_h:
            raise GraphError(
                f"graph {self.id!r}: {nodes.shape[0]} nodes for a {self.grid_w}x{self.grid_h} grid",
                {'id': self.id, 'nodes': nodes.shape[0]}
            )
        if nodes.shape[1] < 1:
            raise GraphError(f"graph {self.id!r}: node dimension must be positive", {'id': self.id})
        if not np.all(np.isfinite(nodes)):
            raise GraphError(f"graph {self.id!r}: node values must be finite", {'id': self.id})
        nodes = np.array(nodes, copy=True)
        nodes.setflags(write=False)
        object.__setattr__(self, 'nodes', nodes)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def node(self, row: int, col: int) -> np.ndarray:
        return self.nodes[row * self.grid_w + col]

    def grid(self) -> np.ndarray:
        """Nodes as an (H, W, D) array."""
        return self.nodes.reshape(self.grid_h, self.grid_w, self.dim)

    def permuted(self, order: Sequence[int]) -> 'FeatureGraph':
        """Same graph with node rows reordered (grid metadata unchanged)."""
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(self.num_nodes)):
            raise GraphError(f"graph {self.id!r}: not a permutation of {self.num_nodes} nodes")
        return FeatureGraph(self.nodes[order], self.grid_w, self.grid_h, self.label, self.id)

    def __eq__(self, other):
        return (isinstance(other, FeatureGraph)
                and self.grid_w == other.grid_w and self.grid_h == other.grid_h
                and self.id == other.id and self.label == other.label
                and self.nodes.dtype == other.nodes.dtype
                and np.array_equal(self.nodes, other.nodes))

    __hash__ = None


def edge_count(graph: FeatureGraph) -> int:
    """Undirected edges of the complete graph without self loops."""
    n = graph.num_nodes
    return n * (n - 1) // 2


def _interp_axis(x: np.ndarray, axis: int, size: int) -> np.ndarray:
    """Corner-aligned linear interpolation of one axis to `size` samples."""
    n = x.shape[axis]
    if size == n:
        return x
    if size == 1 or n == 1:
        positions = np.zeros(size)
    else:
        positions = np.arange(size) * (n - 1) / (size - 1)
    lo = np.floor(positions).astype(np.int64)
    lo = np.minimum(lo, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = positions - lo
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = size
    return a + frac.reshape(shape) * (b - a)


def resize_map(feature_map: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """
    Bilinearly resize a (d, w, h) feature map to (d, target_w, target_h).

    Sampling is corner aligned, so same-size resizing is the identity and a
    constant map stays exactly constant.
    """
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3 or min(feature_map.shape) < 1:
        raise GraphError(f"feature map must be (d, w, h) with positive dims, got {feature_map.shape}")
    if target_w < 1 or target_h < 1:
        raise GraphError(f"resize target must be at least 1x1, got {target_w}x{target_h}",
                         {'target_w': target_w, 'target_h': target_h})
    out = _interp_axis(feature_map, 1, target_w)
    return _interp_axis(out, 2, target_h)


def build_feature_graph(maps: Sequence[np.ndarray], label: Optional[ScoreHistogram] = None,
                        graph_id: str = '', dtype=np.float32) -> FeatureGraph:
    """
    Concatenate per-layer feature maps into a feature graph.

    Every map is resized to the (w, h) of the last map, the results are
    stacked along depth and each grid cell becomes one node.
    """
    if not maps:
        raise GraphError("at least one feature map is required")
    maps = [np.asarray(m) for m in maps]
    for i, m in enumerate(maps):
        if m.ndim != 3:
            raise GraphError(f"feature map {i} must be (d, w, h), got shape {m.shape}", {'index': i})
    target_w, target_h = maps[-1].shape[1], maps[-1].shape[2]
    resized = [resize_map(m, target_w, target_h) for m in maps]
    stacked = np.concatenate(resized, axis=0)
    # (D, W, H) -> (H, W, D) -> rows ordered r * W + c
    nodes = stacked.transpose(2, 1, 0).reshape(target_w * target_h, stacked.shape[0])
    logger.debug(f"built graph {graph_id!r}: {target_w}x{target_h} grid, D={stacked.shape[0]}")
    return FeatureGraph(nodes.astype(dtype), target_w, target_h, label, graph_id)


@dataclass(frozen=True)
class AugmentPolicy:
    """One of the eight crop/flip representations."""

    corner_index: int
    flip: bool = False

    def __post_init__(self):
        if self.corner_index not in (0, 1, 2, 3):
            raise GraphError(f"corner index must be 0..3, got {self.corner_index}",
                             {'corner_index': self.corner_index})

    @property
    def tag(self) -> str:
        return f"c{self.corner_index}{'f' if self.flip else ''}"


ALL_POLICIES: Tuple[AugmentPolicy, ...] = tuple(
    AugmentPolicy(corner, flip) for corner in range(4) for flip in (False, True)
)


def crop_size(grid_w: int, grid_h: int) -> Tuple[int, int]:
    factor = math.sqrt(CROP_AREA_FRACTION)
    return max(1, math.floor(grid_w * factor)), max(1, math.floor(grid_h * factor))


def corner_offset(grid_w: int, grid_h: int, corner_index: int) -> Tuple[int, int]:
    """(col, row) offset of the crop anchored at the given corner."""
    crop_w, crop_h = crop_size(grid_w, grid_h)
    col = 0 if corner_index in (0, 2) else grid_w - crop_w
    row = 0 if corner_index in (0, 1) else grid_h - crop_h
    return col, row


def augment(graph: FeatureGraph, policy: AugmentPolicy) -> FeatureGraph:
    """Crop a corner sub-grid covering ~85% of the area, optionally mirrored."""
    if not isinstance(policy, AugmentPolicy):
        policy = AugmentPolicy(*policy)
    crop_w, crop_h = crop_size(graph.grid_w, graph.grid_h)
    col, row = corner_offset(graph.grid_w, graph.grid_h, policy.corner_index)
    cropped = graph.grid()[row:row + crop_h, col:col + crop_w]
    if policy.flip:
        cropped = cropped[:, ::-1]
    nodes = cropped.reshape(crop_w * crop_h, graph.dim)
    return FeatureGraph(nodes, crop_w, crop_h, graph.label, f"{graph.id}#{policy.tag}")


def flip_columns(graph: FeatureGraph) -> FeatureGraph:
    """Mirror the grid horizontally without cropping."""
    nodes = graph.grid()[:, ::-1].reshape(graph.num_nodes, graph.dim)
    return FeatureGraph(nodes, graph.grid_w, graph.grid_h, graph.label, graph.id)


def augment_all(graph: FeatureGraph) -> List[FeatureGraph]:
    return [augment(graph, policy) for policy in ALL_POLICIES]
