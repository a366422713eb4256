"""
Primitive operations with exact reverse-mode gradients.

The set covers what the graph layers need: dense matmul, elementwise
arithmetic, row broadcasting, concatenation, (masked) row softmax,
activations, exp/log, and full or per-group reductions. Dropout and
normalisation are composed from these in gatiaa.nn.
"""
from typing import List, Sequence

import numpy as np

from gatiaa.autodiff.tensor import DiffValue, as_value, note_branches, record
from gatiaa.utils.errors import EmptyTensorError, ShapeError


def _check_nonempty(op: str, *values: DiffValue):
    for v in values:
        if v.value.size == 0:
            raise EmptyTensorError(op, v.shape)


def _check_same_shape(op: str, a: DiffValue, b: DiffValue):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _check_matrix(op: str, a: DiffValue):
    if a.value.ndim != 2:
        raise ShapeError(op, a.shape, message=f"{op}: expected a matrix, got shape {a.shape}")


# ---------------------------------------------------------------- arithmetic

def matmul(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_matrix('matmul', a)
    _check_matrix('matmul', b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)
    _check_nonempty('matmul', a, b)
    av, bv = a.value, b.value

    def backward_fn(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return record('matmul', av @ bv, (a, b), backward_fn)


def add(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_same_shape('add', a, b)
    _check_nonempty('add', a, b)
    return record('add', a.value + b.value, (a, b), lambda g: (g, g))


def subtract(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_same_shape('subtract', a, b)
    _check_nonempty('subtract', a, b)
    return record('subtract', a.value - b.value, (a, b), lambda g: (g, -g))


def multiply(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _check_same_shape('multiply', a, b)
    _check_nonempty('multiply', a, b)
    av, bv = a.value, b.value
    return record('multiply', av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, factor: float) -> DiffValue:
    a = as_value(a)
    _check_nonempty('scale', a)
    factor = a.value.dtype.type(factor)
    return record('scale', a.value * factor, (a,), lambda g: (g * factor,))


def add_row(x, row) -> DiffValue:
    """Broadcast-add a row vector (d,) or (1, d) to every row of x (N, d)."""
    x, row = as_value(x), as_value(row)
    _check_matrix('add_row', x)
    if row.value.size != x.shape[1] or row.value.ndim > 2:
        raise ShapeError('add_row', x.shape, row.shape)
    _check_nonempty('add_row', x, row)
    row_shape = row.shape

    def backward_fn(g):
        return g, g.sum(axis=0).reshape(row_shape)

    return record('add_row', x.value + row.value.reshape(1, -1), (x, row), backward_fn)


# ------------------------------------------------------------------- layout

def concat(values: Sequence, axis: int = 1) -> DiffValue:
    values = [as_value(v) for v in values]
    if not values:
        raise EmptyTensorError('concat', (0,))
    first = values[0]
    for v in values[1:]:
        if v.value.ndim != first.value.ndim:
            raise ShapeError('concat', first.shape, v.shape)
        other_axes = [d for i, d in enumerate(v.shape) if i != axis % v.value.ndim]
        first_axes = [d for i, d in enumerate(first.shape) if i != axis % first.value.ndim]
        if other_axes != first_axes:
            raise ShapeError('concat', first.shape, v.shape)
    _check_nonempty('concat', *values)
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return record('concat', np.concatenate([v.value for v in values], axis=axis),
                  values, backward_fn)


def transpose(a) -> DiffValue:
    a = as_value(a)
    _check_matrix('transpose', a)
    _check_nonempty('transpose', a)
    return record('transpose', a.value.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> DiffValue:
    a = as_value(a)
    _check_nonempty('reshape', a)
    old_shape = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError('reshape', old_shape, tuple(shape))
    return record('reshape', out, (a,), lambda g: (g.reshape(old_shape),))


def take_rows(x, index) -> DiffValue:
    """Gather rows of x; repeated indices accumulate gradient."""
    x = as_value(x)
    index = np.asarray(index, dtype=np.int64)
    _check_nonempty('take_rows', x)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError('take_rows', x.shape, index.shape,
                         message=f"take_rows: index out of range for {x.shape[0]} rows")
    x_shape = x.shape

    def backward_fn(g):
        out = np.zeros(x_shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return record('take_rows', x.value[index], (x,), backward_fn)


# ------------------------------------------------------------------ softmax

def row_softmax(x) -> DiffValue:
    x = as_value(x)
    _check_matrix('row_softmax', x)
    _check_nonempty('row_softmax', x)
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record('row_softmax', y, (x,), backward_fn)


def masked_row_softmax(x, mask) -> DiffValue:
    """
    Row softmax where entries with mask == False have zero probability.

    A row with no allowed entry yields an all-zero row.
    """
    x = as_value(x)
    mask = np.asarray(mask, dtype=bool)
    _check_matrix('masked_row_softmax', x)
    if mask.shape != x.shape:
        raise ShapeError('masked_row_softmax', x.shape, mask.shape)
    _check_nonempty('masked_row_softmax', x)
    xv = x.value
    masked = np.where(mask, xv, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0)
    e = np.where(mask, np.exp(np.where(mask, xv - row_max, 0)), 0).astype(xv.dtype)
    total = e.sum(axis=1, keepdims=True)
    y = e / np.where(total > 0, total, 1)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record('masked_row_softmax', y, (x,), backward_fn)


# -------------------------------------------------------------- activations

def relu(x) -> DiffValue:
    x = as_value(x)
    _check_nonempty('relu', x)
    active = x.value > 0
    note_branches('relu', active)
    return record('relu', np.where(active, x.value, 0).astype(x.dtype), (x,),
                  lambda g: (g * active,))


def leaky_relu(x, slope: float = 0.2) -> DiffValue:
    x = as_value(x)
    _check_nonempty('leaky_relu', x)
    slope = x.value.dtype.type(slope)
    positive = x.value > 0
    note_branches('leaky_relu', positive)
    factor = np.where(positive, x.value.dtype.type(1), slope)
    return record('leaky_relu', x.value * factor, (x,), lambda g: (g * factor,))


def exp(x) -> DiffValue:
    x = as_value(x)
    _check_nonempty('exp', x)
    y = np.exp(x.value)
    return record('exp', y, (x,), lambda g: (g * y,))


def log(x) -> DiffValue:
    x = as_value(x)
    _check_nonempty('log', x)
    xv = x.value
    return record('log', np.log(xv), (x,), lambda g: (g / xv,))


def sigmoid(x) -> DiffValue:
    x = as_value(x)
    _check_nonempty('sigmoid', x)
    xv = x.value
    y = np.where(xv >= 0, 1 / (1 + np.exp(-np.abs(xv))),
                 np.exp(-np.abs(xv)) / (1 + np.exp(-np.abs(xv)))).astype(xv.dtype)
    return record('sigmoid', y, (x,), lambda g: (g * y * (1 - y),))


def clip(x, low: float, high: float) -> DiffValue:
    """Clamp into [low, high]; gradient is zero where clamping is active."""
    x = as_value(x)
    _check_nonempty('clip', x)
    above_low = x.value >= low
    below_high = x.value <= high
    note_branches('clip', above_low, below_high)
    inside = above_low & below_high
    return record('clip', np.clip(x.value, low, high), (x,), lambda g: (g * inside,))


# --------------------------------------------------------------- reductions

def sum_all(x) -> DiffValue:
    x = as_value(x)
    _check_nonempty('sum', x)
    shape = x.shape
    return record('sum', np.asarray(x.value.sum()), (x,),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x) -> DiffValue:
    x = as_value(x)
    _check_nonempty('mean', x)
    shape = x.shape
    n = x.value.size
    return record('mean', np.asarray(x.value.mean()), (x,),
                  lambda g: (np.broadcast_to(g / n, shape).astype(x.dtype),))


def segment_sum(x, index, num_groups: int) -> DiffValue:
    """Sum rows of x (N, d) into num_groups rows by group ordinal."""
    x = as_value(x)
    index = np.asarray(index, dtype=np.int64)
    _check_matrix('segment_sum', x)
    if index.shape != (x.shape[0],):
        raise ShapeError('segment_sum', x.shape, index.shape)
    _check_nonempty('segment_sum', x)
    out = np.zeros((num_groups, x.shape[1]), dtype=x.dtype)
    np.add.at(out, index, x.value)
    return record('segment_sum', out, (x,), lambda g: (g[index],))


def segment_mean(x, index, num_groups: int) -> DiffValue:
    """Per-group arithmetic mean of rows; empty groups give zero rows."""
    x = as_value(x)
    index = np.asarray(index, dtype=np.int64)
    _check_matrix('segment_mean', x)
    if index.shape != (x.shape[0],):
        raise ShapeError('segment_mean', x.shape, index.shape)
    _check_nonempty('segment_mean', x)
    counts = np.bincount(index, minlength=num_groups).astype(x.dtype)
    inv = np.where(counts > 0, 1 / np.where(counts > 0, counts, 1), 0).astype(x.dtype)
    out = np.zeros((num_groups, x.shape[1]), dtype=x.dtype)
    np.add.at(out, index, x.value)
    out *= inv[:, None]
    return record('segment_mean', out, (x,), lambda g: ((g * inv[:, None])[index],))


def column_mean(x) -> DiffValue:
    """Mean over rows, shape (1, d)."""
    x = as_value(x)
    return segment_mean(x, np.zeros(x.shape[0], dtype=np.int64), 1)


def broadcast_rows(row, n: int) -> DiffValue:
    """Repeat a (1, d) row n times via a ones-matmul."""
    row = as_value(row)
    ones = np.ones((n, 1), dtype=row.dtype)
    return matmul(ones, reshape(row, (1, -1)))


PRIMITIVES: List[str] = [
    'matmul', 'add', 'subtract', 'multiply', 'scale', 'add_row', 'concat', 'transpose',
    'reshape', 'take_rows', 'row_softmax', 'masked_row_softmax', 'relu', 'leaky_relu',
    'exp', 'log', 'sigmoid', 'clip', 'sum', 'mean', 'segment_sum', 'segment_mean'
]

