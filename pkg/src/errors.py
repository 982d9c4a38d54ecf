"""
Errors - Exception hierarchy. Messages name the offending sample, file or key.
"""

from typing import List, Optional


class ShapeBenchError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ShapeBenchError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParameterError(ShapeBenchError, ValueError):
    """Invalid generator or method parameter."""


class GeometryError(ShapeBenchError, ValueError):
    """Invalid or unsupported geometry."""


class MeshFormatError(GeometryError):
    """Malformed mesh or volume file."""


class ProjectionError(ShapeBenchError, RuntimeError):
    """Surface projection did not converge."""


class EnsembleError(ShapeBenchError, ValueError):
    """Invalid ensemble contents."""


class OptimizationError(ShapeBenchError, RuntimeError):
    """An optimizer diverged; carries the objective trace so far."""

    def __init__(self, message: str, trace: Optional[List] = None):
        super().__init__(message)
        self.trace = list(trace or [])


class SpharmError(ShapeBenchError, ValueError):
    """Spherical parameterization or expansion failed."""


class DeformationError(OptimizationError):
    """Deformation flow or atlas estimation failed."""


class ShapeStatsError(ShapeBenchError, ValueError):
    """Degenerate correspondence model."""


class ClinicalError(ShapeBenchError, ValueError):
    """Invalid clinical measurement input."""


class StageError(ShapeBenchError, RuntimeError):
    """A pipeline stage failed."""
