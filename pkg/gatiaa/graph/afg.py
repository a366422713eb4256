"""
AFG binary format for feature graphs.

Little-endian layout: magic "AFG1"; u32 D; u32 gridW; u32 gridH; u8 labelFlag;
10 float32 histogram bins when labelFlag is set; then gridW * gridH * D float32
node features, node-major, nodes in row-major grid order.
"""
import logging
import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from gatiaa.graph.feature_graph import NUM_BINS, FeatureGraph, ScoreHistogram
from gatiaa.utils.errors import AFGFormatError, GraphError

logger = logging.getLogger(__name__)

MAGIC = b'AFG1'
HEADER = struct.Struct('<4sIIIB')
FLOAT = np.dtype('<f4')

PathLike = Union[str, os.PathLike]


def afg_encode(graph: FeatureGraph) -> bytes:
    has_label = graph.label is not None
    parts = [HEADER.pack(MAGIC, graph.dim, graph.grid_w, graph.grid_h, 1 if has_label else 0)]
    if has_label:
        parts.append(np.asarray(graph.label.bins, dtype=FLOAT).tobytes())
    parts.append(np.ascontiguousarray(graph.nodes, dtype=FLOAT).tobytes())
    return b''.join(parts)


def afg_decode(payload: bytes, graph_id: str = '', path: str = None) -> FeatureGraph:
    if len(payload) < HEADER.size:
        raise AFGFormatError("truncated header", offset=len(payload),
                             expected=HEADER.size, actual=len(payload), path=path)
    magic, dim, grid_w, grid_h, label_flag = HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise AFGFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0,
                             expected=MAGIC.decode(), actual=magic.decode('latin-1'), path=path)
    if label_flag not in (0, 1):
        raise AFGFormatError(f"invalid label flag {label_flag}", offset=HEADER.size - 1,
                             expected='0 or 1', actual=label_flag, path=path)
    offset = HEADER.size

    label = None
    if label_flag:
        label_bytes = NUM_BINS * FLOAT.itemsize
        if len(payload) < offset + label_bytes:
            raise AFGFormatError("truncated label histogram", offset=len(payload),
                                 expected=offset + label_bytes, actual=len(payload), path=path)
        bins = np.frombuffer(payload, dtype=FLOAT, count=NUM_BINS, offset=offset)
        _require_finite(bins, offset, path)
        try:
            label = ScoreHistogram(bins.astype(np.float64))
        except GraphError as e:
            raise AFGFormatError(f"invalid label histogram: {e.message}", offset=offset, path=path)
        offset += label_bytes

    count = grid_w * grid_h * dim
    expected = offset + count * FLOAT.itemsize
    if len(payload) < expected:
        raise AFGFormatError("truncated node payload", offset=len(payload),
                             expected=expected, actual=len(payload), path=path)
    if len(payload) > expected:
        raise AFGFormatError("trailing bytes after node payload", offset=expected,
                             expected=expected, actual=len(payload), path=path)
    values = np.frombuffer(payload, dtype=FLOAT, count=count, offset=offset)
    _require_finite(values, offset, path)
    try:
        nodes = values.astype(np.float32).reshape(grid_w * grid_h, dim)
        return FeatureGraph(nodes, grid_w, grid_h, label, graph_id)
    except (GraphError, ValueError) as e:
        raise AFGFormatError(f"invalid graph header: {e}", offset=4, path=path)


def _require_finite(values: np.ndarray, offset: int, path: str):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        position = offset + int(bad[0]) * FLOAT.itemsize
        raise AFGFormatError("non-finite value", offset=position, path=path)


def afg_write(graph: FeatureGraph, path: PathLike) -> None:
    path = Path(path)
    path.write_bytes(afg_encode(graph))
    logger.debug(f"wrote {path} ({graph.num_nodes} nodes, D={graph.dim})")


def afg_read(path: PathLike, graph_id: str = None) -> FeatureGraph:
    """Read a graph; its id defaults to the file stem."""
    path = Path(path)
    payload = path.read_bytes()
    return afg_decode(payload, graph_id if graph_id is not None else path.stem, str(path))
