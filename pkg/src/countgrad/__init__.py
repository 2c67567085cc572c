"""Differentiable object counting on synthetic scenes.

The package implements cardinality-map regression for counting: a scene's
instance masks are converted to a per-pixel 1/N mass map whose grid-pooled
sum equals the object count exactly. A small convolutional model predicts
that map together with a per-cell class grid, trains under dense (strong)
or count-only (weak) supervision, and exposes count gradients that can
steer a differentiable scene generator toward a requested object count.
"""

from .autodiff import (
    DiffArray,
    GradCheckResult,
    Gradients,
    Tape,
    backward,
    grad_check,
    new_param,
)

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "DiffArray",
    "Gradients",
    "GradCheckResult",
    "new_param",
    "backward",
    "grad_check",
    "__version__",
]
