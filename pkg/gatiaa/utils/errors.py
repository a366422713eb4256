"""
Structured exception hierarchy.

Every error carries a machine-readable code and a details dict so the command
line can log the same payload shape for any failure.
"""
from typing import Any, Dict, Optional


class GatiaaError(Exception):
    """Base class for all package errors."""

    error_code = 'gatiaa_error'

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            'error': self.error_code,
            'message': self.message,
            'details': self.details
        }


class ShapeError(GatiaaError):
    """Operand shapes are incompatible for an operation."""

    error_code = 'shape_mismatch'

    def __init__(self, op: str, *shapes, message: Optional[str] = None):
        shapes = [tuple(s) for s in shapes]
        text = message or f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}"
        super().__init__(text, {'op': op, 'shapes': shapes})
        self.op = op
        self.shapes = shapes


class EmptyTensorError(GatiaaError):
    error_code = 'empty_tensor'

    def __init__(self, op: str, shape):
        super().__init__(f"{op}: empty tensor of shape {tuple(shape)}",
                         {'op': op, 'shape': tuple(shape)})
        self.op = op


class BackwardError(GatiaaError):
    error_code = 'backward_error'


class GradCheckError(GatiaaError):
    error_code = 'gradcheck_error'


class GraphError(GatiaaError):
    error_code = 'graph_error'


class AFGFormatError(GatiaaError):
    """Malformed AFG file; offset is the byte position of the problem."""

    error_code = 'afg_format_error'

    def __init__(self, message: str, offset: int, expected: Any = None, actual: Any = None,
                 path: Optional[str] = None):
        super().__init__(f"{message} (byte offset {offset})", {
            'offset': offset,
            'expected': expected,
            'actual': actual,
            'path': path
        })
        self.offset = offset
        self.expected = expected
        self.actual = actual


class ManifestError(GatiaaError):
    error_code = 'manifest_error'


class ConfigError(GatiaaError):
    error_code = 'config_error'


class ModelSpecError(GatiaaError):
    """Inconsistent model specification; `field` names the offending entry."""

    error_code = 'model_spec_error'

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}", {'field': field})
        self.field = field


class CheckpointError(GatiaaError):
    error_code = 'checkpoint_error'


class MetricError(GatiaaError):
    error_code = 'metric_error'


class TrainingError(GatiaaError):
    error_code = 'training_error'
