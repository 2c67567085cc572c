"""Regression and classification targets built from scene annotations.

The cardinality map spreads each instance's unit mass uniformly over its
mask pixels and pools to grid cells, so the map total equals the object
count exactly (up to 64-bit rounding). The Gaussian density map is the
classical alternative kept as an ablation baseline; its total only
approximates the count. Class and weak-label grids supply the targets for
the classification head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import InstanceMask, PointAnnotations

__all__ = [
    "CardinalityMap",
    "DensityMap",
    "ClassGrid",
    "WeakGrids",
    "pixel_cardinality",
    "grid_cardinality",
    "gaussian_density",
    "strong_class_grid",
    "weak_label_grids",
    "default_sigma",
]

GRID_FACTOR = 8  # pixels per grid cell side; 64x64 images pool to 8x8


@dataclass(frozen=True)
class CardinalityMap:
    grid: np.ndarray  # float64 (Hg, Wg), objects per cell
    factor: int

    def __post_init__(self):
        if (self.grid < 0).any():
            raise ValueError("cardinality cells must be non-negative")

    @property
    def total(self) -> float:
        return float(self.grid.sum())


@dataclass(frozen=True)
class DensityMap:
    grid: np.ndarray  # float64 (Hg, Wg)
    sigma: float  # kernel bandwidth in pixels

    def __post_init__(self):
        if (self.grid < 0).any():
            raise ValueError("density cells must be non-negative")

    @property
    def total(self) -> float:
        return float(self.grid.sum())


@dataclass(frozen=True)
class ClassGrid:
    grid: np.ndarray  # bool (Hg, Wg)

    def __post_init__(self):
        if self.grid.dtype != np.bool_:
            raise ValueError("class grid must be boolean")


@dataclass(frozen=True)
class WeakGrids:
    """Sparse supervision: point-derived cell labels plus the scalar count K."""

    positive: np.ndarray  # bool (Hg, Wg)
    negative: np.ndarray  # bool (Hg, Wg)
    count: int

    def __post_init__(self):
        if (self.positive & self.negative).any():
            raise ValueError("positive and negative grids must be disjoint")
        if int(self.positive.sum()) > self.count:
            raise ValueError("positive cells exceed the point count")

    @property
    def annotated(self) -> np.ndarray:
        """Omega: the cells that carry any label."""
        return self.positive | self.negative


def pixel_cardinality(masks: list[InstanceMask], image_shape: tuple[int, int]) -> np.ndarray:
    """Per-pixel cardinality: each mask adds 1/area on its own pixels.

    Overlapping masks contribute additively, so the total stays equal to
    the number of masks regardless of overlap.
    """
    out = np.zeros(image_shape, dtype=np.float64)
    for m in masks:
        if m.shape != tuple(image_shape):
            raise ValueError("mask shape differs from image shape")
        out[m.pixels] += 1.0 / m.area
    return out


def grid_cardinality(pixel_grid: np.ndarray, factor: int = GRID_FACTOR) -> CardinalityMap:
    """Pool a per-pixel cardinality grid into cells by block summation."""
    h, w = pixel_grid.shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image extents {(h, w)}")
    pooled = pixel_grid.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    return CardinalityMap(pooled, factor)


def gaussian_density(
    points: np.ndarray,
    sigma: float,
    image_shape: tuple[int, int],
    factor: int = GRID_FACTOR,
) -> DensityMap:
    """Classical density target: one unit-mass Gaussian per annotated point.

    Kernels live at grid resolution, are truncated to a 3-sigma box clipped
    at the borders, and are renormalized per point so border objects do not
    leak mass.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = image_shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image extents {(h, w)}")
    hg, wg = h // factor, w // factor
    grid = np.zeros((hg, wg), dtype=np.float64)
    sg = sigma / factor
    reach = 3.0 * sg
    for r, c in np.asarray(points, dtype=np.float64).reshape(-1, 2):
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"point ({r}, {c}) outside image bounds")
        # pixel coordinate -> grid coordinate of the same physical location
        gr = (r + 0.5) / factor - 0.5
        gc = (c + 0.5) / factor - 0.5
        u0 = max(0, int(np.floor(gr - reach)))
        u1 = min(hg - 1, int(np.ceil(gr + reach)))
        v0 = max(0, int(np.floor(gc - reach)))
        v1 = min(wg - 1, int(np.ceil(gc + reach)))
        du = np.arange(u0, u1 + 1) - gr
        dv = np.arange(v0, v1 + 1) - gc
        kernel = np.exp(-(du[:, None] ** 2 + dv[None, :] ** 2) / (2.0 * sg * sg))
        grid[u0 : u1 + 1, v0 : v1 + 1] += kernel / kernel.sum()
    return DensityMap(grid, sigma)


def strong_class_grid(
    masks: list[InstanceMask], image_shape: tuple[int, int], factor: int = GRID_FACTOR
) -> ClassGrid:
    """Cell label 1 wherever any mask pixel of the target category falls."""
    h, w = image_shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image extents {(h, w)}")
    union = np.zeros(image_shape, dtype=bool)
    for m in masks:
        union |= m.pixels
    cells = union.reshape(h // factor, factor, w // factor, factor).any(axis=(1, 3))
    return ClassGrid(cells)


def weak_label_grids(
    points: PointAnnotations, image_shape: tuple[int, int], factor: int = GRID_FACTOR
) -> WeakGrids:
    """Map sparse points to cell labels; positives override negatives.

    Dropping a colliding negative label is harmless, dropping a positive
    would bias the count supervision, hence the precedence rule. K is the
    number of positive points, not of positive cells.
    """
    h, w = image_shape
    hg, wg = h // factor, w // factor
    pos = np.zeros((hg, wg), dtype=bool)
    neg = np.zeros((hg, wg), dtype=bool)
    for r, c in points.positive:
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"point ({r}, {c}) outside image bounds")
        pos[r // factor, c // factor] = True
    for r, c in points.negative:
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"point ({r}, {c}) outside image bounds")
        neg[r // factor, c // factor] = True
    neg &= ~pos
    return WeakGrids(pos, neg, points.count)


def default_sigma(masks: list[InstanceMask]) -> float:
    """Area-adaptive density bandwidth: quarter of the mean mask side scale."""
    if not masks:
        return 1.0
    mean_area = float(np.mean([m.area for m in masks]))
    return max(1.0, 0.25 * np.sqrt(mean_area))
