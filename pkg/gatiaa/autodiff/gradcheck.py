"""
Central finite-difference gradient checking.

The oracle used to verify every layer and the assembled models. Parameters
must hold double precision values; each sampled coordinate is perturbed in
place by +h and -h and restored afterwards.

Piecewise-linear activations (relu, leaky_relu, clip) make the objective
non-differentiable where one of their inputs sits on a breakpoint. Every
evaluation runs under a BranchLog; a failing coordinate is skipped, and
counted in `kinks`, only when the +h or -h evaluation selected a different
linear piece than the unperturbed pass. Smooth objectives are never skipped.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gatiaa.autodiff.tensor import BranchLog, DiffValue, Tape, backward
from gatiaa.utils.errors import GradCheckError

logger = logging.getLogger(__name__)

GradHook = Callable[[str, np.ndarray], np.ndarray]

ERROR_FLOOR = 1e-12


@dataclass
class GradCheckResult:
    """Outcome of one gradient check."""

    max_rel_error: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    coordinates: int = 0
    kinks: int = 0

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = ERROR_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(f: Callable[[], DiffValue]) -> Tuple[float, BranchLog]:
    with BranchLog() as branches:
        value = float(np.asarray(f().value).reshape(-1)[0])
    if not np.isfinite(value):
        raise GradCheckError("objective is not finite at a perturbed point", {'value': value})
    return value, branches


def grad_check(f: Callable[[], DiffValue], params: Sequence[DiffValue], h: float = 1e-5,
               max_coords: Optional[int] = 64, seed: int = 0,
               analytic_hook: Optional[GradHook] = None, tolerance: float = 1e-4) -> GradCheckResult:
    """
    Compare reverse-mode gradients of a scalar objective with central differences.

    Args:
        f: zero-argument callable evaluating the objective from the current
           parameter values
        params: leaf values that require gradients (float64)
        h: finite-difference step
        max_coords: coordinates sampled per parameter (None checks all)
        seed: sampling seed
        analytic_hook: optional (name, grad) -> grad rewrite applied before
           comparison; used to exercise the failure path
        tolerance: relative error at or above which a coordinate fails unless
           its perturbation crossed a breakpoint

    Returns:
        GradCheckResult with the maximum relative error over sampled coordinates
    """
    if h <= 0:
        raise GradCheckError(f"step must be positive, got {h}", {'h': h})
    for p in params:
        if p.dtype != np.float64:
            raise GradCheckError(
                f"gradient checking requires float64 parameters, {p.name or p} is {p.dtype}",
                {'parameter': p.name, 'dtype': str(p.dtype)}
            )

    for p in params:
        p.zero_grad()
    with Tape() as tape, BranchLog() as centre:
        loss = f()
        backward(loss)
    tape.release()

    rng = np.random.default_rng(seed)
    result = GradCheckResult(max_rel_error=0.0)
    for position, p in enumerate(params):
        name = p.name or f"param{position}"
        analytic = p.grad.copy()
        if analytic_hook is not None:
            analytic = analytic_hook(name, analytic)
        size = p.value.size
        if max_coords is None or size <= max_coords:
            coords: List[int] = list(range(size))
        else:
            coords = sorted(rng.choice(size, size=max_coords, replace=False).tolist())

        worst = 0.0
        flat = p.value.reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + h
            plus, plus_branches = _evaluate(f)
            flat[i] = original - h
            minus, minus_branches = _evaluate(f)
            flat[i] = original
            numeric = (plus - minus) / (2 * h)
            error = relative_error(float(analytic.reshape(-1)[i]), numeric)
            if error >= tolerance and not (centre.same_branches(plus_branches)
                                           and centre.same_branches(minus_branches)):
                result.kinks += 1
                logger.debug(f"grad_check {name}[{i}]: skipped, perturbation crosses a breakpoint")
                continue
            worst = max(worst, error)

        result.per_parameter[name] = worst
        result.coordinates += len(coords)
        result.max_rel_error = max(result.max_rel_error, worst)
        logger.debug(f"grad_check {name}: max relative error {worst:.3e} over {len(coords)} coords")

    return result
