"""
Dense-tensor reverse-mode automatic differentiation.
"""
from .tensor import BranchLog, DiffValue, Tape, backward, constant, current_tape, parameter
from .gradcheck import GradCheckResult, grad_check
from . import ops

__all__ = [
    'BranchLog', 'DiffValue', 'Tape', 'backward', 'constant', 'current_tape', 'parameter',
    'GradCheckResult', 'grad_check', 'ops'
]
