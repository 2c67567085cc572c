"""Training and guidance objectives as differentiable scalars.

Count losses are summed (not averaged) L1 so their scale matches objects,
which keeps the default weighting meaningful against count error. The
classification losses are mean binary cross-entropy, making their weight
independent of grid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .targets import CardinalityMap, ClassGrid, DensityMap, WeakGrids

__all__ = [
    "LossWeights",
    "BCE_EPS",
    "density_loss",
    "strong_count_loss",
    "strong_cls_loss",
    "weak_cls_loss",
    "weak_count_loss",
    "weighted_total",
    "guidance_loss",
]

BCE_EPS = 1e-7  # probability clamp; saturated sigmoids otherwise reach log(0)


@dataclass(frozen=True)
class LossWeights:
    """Objective weights for both stages plus the strong-mixing fraction.

    Defaults follow the two-stage recipe: cardinality regression dominates
    (weight 1.0) with a 0.1 classification term, and 5% of weak-stage
    batches are drawn from strongly labeled data.
    """

    alpha1: float = 1.0  # strong count term
    beta1: float = 0.1  # strong classification term
    alpha2: float = 1.0  # weak count term
    beta2: float = 0.1  # weak classification term
    gamma: float = 0.05  # strong fraction mixed into weak batches

    def __post_init__(self):
        for name in ("alpha1", "beta1", "alpha2", "beta2", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.gamma > 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def _grid_of(target) -> np.ndarray:
    if isinstance(target, (CardinalityMap, DensityMap)):
        return target.grid
    return np.asarray(target, dtype=np.float64)


def density_loss(pred: ad.DiffArray, target: DensityMap | np.ndarray) -> ad.DiffArray:
    """Summed L1 between predicted grid and a Gaussian density target."""
    return ad.l1_diff(pred, _grid_of(target))


def strong_count_loss(pred: ad.DiffArray, target: CardinalityMap | np.ndarray) -> ad.DiffArray:
    """Summed L1 between predicted grid and the cardinality target."""
    return ad.l1_diff(pred, _grid_of(target))


def _bce_terms(pred: ad.DiffArray, labels: np.ndarray) -> ad.DiffArray:
    p = ad.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    y = labels.astype(np.float64)
    return ad.add(ad.mul(ad.log(p), y), ad.mul(ad.log(ad.sub(1.0, p)), 1.0 - y))


def strong_cls_loss(pred: ad.DiffArray, target: ClassGrid | np.ndarray) -> ad.DiffArray:
    """Mean binary cross-entropy over every grid cell."""
    labels = target.grid if isinstance(target, ClassGrid) else np.asarray(target)
    if pred.shape != labels.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {labels.shape}")
    terms = _bce_terms(pred, labels)
    return ad.scale(ad.reduce_sum(terms), -1.0 / labels.size)


def weak_cls_loss(pred: ad.DiffArray, weak: WeakGrids) -> ad.DiffArray:
    """Mean binary cross-entropy restricted to the annotated cells.

    Unannotated cells contribute exactly nothing, so sparse labels never
    penalize the model for regions nobody looked at.
    """
    omega = weak.annotated
    n = int(omega.sum())
    if n == 0:
        raise ValueError("no annotated cells to supervise")
    if pred.shape != omega.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {omega.shape}")
    terms = _bce_terms(pred, weak.positive)
    masked = ad.mul(terms, omega.astype(np.float64))
    return ad.scale(ad.reduce_sum(masked), -1.0 / n)


def weak_count_loss(pred: ad.DiffArray, count: float) -> ad.DiffArray:
    """Absolute deviation of the summed prediction from the scalar count."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return ad.l1_diff(ad.reduce_sum(pred), np.asarray(float(count)))


def weighted_total(count_loss: ad.DiffArray, cls_loss: ad.DiffArray, alpha: float, beta: float) -> ad.DiffArray:
    """alpha * count + beta * cls, the per-stage combined objective."""
    if alpha < 0 or beta < 0:
        raise ValueError("weights must be non-negative")
    return ad.add(ad.scale(count_loss, alpha), ad.scale(cls_loss, beta))


def guidance_loss(pred: ad.DiffArray, q_req: float) -> ad.DiffArray:
    """|total predicted count - requested count|; steers generation upstream."""
    if q_req < 0:
        raise ValueError("requested count must be non-negative")
    return ad.l1_diff(ad.reduce_sum(pred), np.asarray(float(q_req)))
