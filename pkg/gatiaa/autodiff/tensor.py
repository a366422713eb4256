"""
Differentiable values and the per-forward-pass tape.

A `Tape` is entered as a context manager; every primitive evaluated while it is
active and touching a value that requires gradients appends its output to the
tape. Creation order is a topological order, so `backward` simply walks the
tape in reverse.
"""
import logging
from contextvars import ContextVar
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gatiaa.utils.errors import BackwardError

logger = logging.getLogger(__name__)

_active_tape: ContextVar[Optional['Tape']] = ContextVar('gatiaa_active_tape', default=None)
_active_branches: ContextVar[Optional['BranchLog']] = ContextVar('gatiaa_active_branches', default=None)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Records the operations of one forward pass."""

    def __init__(self):
        self.nodes: List['DiffValue'] = []
        self._token = None

    def __enter__(self) -> 'Tape':
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def release(self):
        """Drop all records so intermediate buffers can be freed."""
        for node in self.nodes:
            node._parents = ()
            node._backward = None
            node._tape = None
        self.nodes = []


def current_tape() -> Optional[Tape]:
    """Return the tape active in this execution context, if any."""
    return _active_tape.get()


class BranchLog:
    """
    Records which side of its breakpoint every piecewise-linear input fell on.

    Entered around a forward pass; relu, leaky_relu and clip append their
    selection masks in evaluation order. Two passes of the same objective took
    the same linear piece everywhere exactly when their logs match.
    """

    def __init__(self):
        self.masks: List[Tuple[str, np.ndarray]] = []
        self._token = None

    def __enter__(self) -> 'BranchLog':
        self._token = _active_branches.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_branches.reset(self._token)
        self._token = None
        return False

    def same_branches(self, other: 'BranchLog') -> bool:
        if len(self.masks) != len(other.masks):
            return False
        return all(op_a == op_b and np.array_equal(a, b)
                   for (op_a, a), (op_b, b) in zip(self.masks, other.masks))


def note_branches(op: str, *masks: np.ndarray) -> None:
    """Append branch masks to the active BranchLog; a no-op outside one."""
    log = _active_branches.get()
    if log is None:
        return
    for mask in masks:
        log.masks.append((op, np.array(mask, dtype=bool, copy=True)))


class DiffValue:
    """A tensor value with an accumulated gradient and optional tape record."""

    __slots__ = ('value', 'grad', 'requires_grad', 'name', 'op',
                 '_parents', '_backward', '_tape')

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad
        self.name = name
        self.op: Optional[str] = None
        self._parents: Tuple['DiffValue', ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        label = self.name or self.op or 'leaf'
        return f"<DiffValue {label} shape={self.shape} dtype={self.dtype}>"

    # Operator sugar; the primitives live in gatiaa.autodiff.ops.
    def __add__(self, other):
        from gatiaa.autodiff import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from gatiaa.autodiff import ops
        return ops.subtract(self, other)

    def __mul__(self, other):
        from gatiaa.autodiff import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from gatiaa.autodiff import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from gatiaa.autodiff import ops
        return ops.matmul(self, other)


def parameter(value, name: Optional[str] = None) -> DiffValue:
    """Create a trainable leaf value."""
    return DiffValue(np.array(value, copy=True), requires_grad=True, name=name)


def constant(value, dtype=None) -> DiffValue:
    """Wrap an array as a value that never receives gradients."""
    value = np.asarray(value, dtype=dtype)
    return DiffValue(value, requires_grad=False)


def as_value(x, dtype=None) -> DiffValue:
    if isinstance(x, DiffValue):
        return x
    return constant(x, dtype=dtype)


def record(op: str, value: np.ndarray, parents: Sequence[DiffValue],
           backward_fn: BackwardFn) -> DiffValue:
    """Build the output of a primitive and register it on the active tape."""
    tape = current_tape()
    needs_grad = tape is not None and any(p.requires_grad for p in parents)
    out = DiffValue(value, requires_grad=needs_grad)
    out.op = op
    if needs_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._tape = tape
        tape.nodes.append(out)
    return out


def backward(loss: DiffValue) -> None:
    """
    Reverse sweep from a scalar loss.

    Every value reachable from `loss` that requires gradients has
    d(loss)/d(value) added to its `grad`; calling twice without `zero_grad`
    accumulates.
    """
    if loss.value.size != 1:
        raise BackwardError(
            f"backward requires a scalar loss, got shape {loss.shape}",
            {'shape': loss.shape}
        )
    if not loss.requires_grad:
        logger.debug("backward called on a value with no gradient path")
        return
    if loss.op is not None and loss._tape is None:
        raise BackwardError(
            f"backward through '{loss.op}' whose tape was released",
            {'op': loss.op}
        )
    seed = np.ones_like(loss.value)
    if loss.is_leaf:
        loss.grad += seed
        return

    tape = loss._tape
    pending: Dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.nodes):
        upstream = pending.pop(id(node), None)
        if upstream is None:
            continue
        node.grad += upstream
        parent_grads = node._backward(upstream)
        for parent, grad in zip(node._parents, parent_grads):
            if grad is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad += grad
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad
