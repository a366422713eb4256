"""
Mini-batches of variable-size feature graphs.

Node rows of all graphs are concatenated; `graph_index` maps each row to its
graph ordinal so layers can build per-graph dense blocks.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gatiaa.graph.feature_graph import FeatureGraph, ScoreHistogram
from gatiaa.utils.errors import GraphError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Concatenated node rows of several graphs plus membership bookkeeping."""

    nodes: np.ndarray
    graph_index: np.ndarray
    counts: np.ndarray
    labels: Tuple[Optional[ScoreHistogram], ...]
    ids: Tuple[str, ...]
    grids: Tuple[Tuple[int, int], ...]

    @property
    def num_graphs(self) -> int:
        return len(self.counts)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts)])

    @cached_property
    def same_graph_mask(self) -> np.ndarray:
        """(N, N) boolean matrix, True where both rows belong to one graph."""
        return self.graph_index[:, None] == self.graph_index[None, :]

    @cached_property
    def membership_mask(self) -> np.ndarray:
        """(G, N) boolean matrix, True where node n belongs to graph g."""
        return np.arange(self.num_graphs)[:, None] == self.graph_index[None, :]

    def node_sizes(self) -> np.ndarray:
        """Node count of the owning graph for every row."""
        return self.counts[self.graph_index]

    def label_matrix(self) -> np.ndarray:
        if any(label is None for label in self.labels):
            missing = [gid for gid, label in zip(self.ids, self.labels) if label is None]
            raise GraphError(f"unlabeled graphs in batch: {missing[:5]}", {'ids': missing})
        return np.stack([label.bins for label in self.labels])

    def unbatch(self) -> List[FeatureGraph]:
        offsets = self.offsets
        return [
            FeatureGraph(self.nodes[offsets[i]:offsets[i + 1]], w, h, self.labels[i], self.ids[i])
            for i, (w, h) in enumerate(self.grids)
        ]


def batch(graphs: Sequence[FeatureGraph]) -> GraphBatch:
    """Concatenate graphs in list order."""
    if not graphs:
        raise GraphError("cannot batch an empty list of graphs")
    dim = graphs[0].dim
    for g in graphs:
        if g.dim != dim:
            raise GraphError(f"graph {g.id!r} has node dimension {g.dim}, expected {dim}",
                             {'id': g.id, 'dim': g.dim, 'expected': dim})
    counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    nodes = np.concatenate([g.nodes for g in graphs], axis=0)
    nodes.setflags(write=False)
    graph_index = np.repeat(np.arange(len(graphs), dtype=np.int64), counts)
    return GraphBatch(
        nodes=nodes,
        graph_index=graph_index,
        counts=counts,
        labels=tuple(g.label for g in graphs),
        ids=tuple(g.id for g in graphs),
        grids=tuple((g.grid_w, g.grid_h) for g in graphs)
    )


def unbatch(graph_batch: GraphBatch) -> List[FeatureGraph]:
    return graph_batch.unbatch()
