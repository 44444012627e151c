"""Intensity conditioning of COD images before flow estimation.

Bright-region distortion is compressed with a threshold log transform,
acquisition brightness drift between consecutive frames is compensated by
equating the medians of their nonzero ("day") pixels, and the top tail of
the intensity distribution is flagged as outliers.

Percentiles use the nearest-rank convention on the sorted finite values:
threshold = sorted[ceil(p*n) - 1]. "Nonzero pixel" means value > 0 after
NaN masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codio import ScalarGrid
from .errors import EmptyGrid, NonPositiveSigma, ShapeMismatch, ZeroMedian


@dataclass
class PreprocessConfig:
    percentile: float = 0.90
    mask_outliers: bool = True

    def __post_init__(self):
        if not 0.0 < self.percentile < 1.0:
            raise ValueError("percentile must lie in (0, 1)")


def nearest_rank(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile of a 1-D array of finite values."""
    n = values.size
    if n == 0:
        raise EmptyGrid("no finite pixels")
    rank = max(1, math.ceil(percentile * n))
    return float(np.sort(values, kind="stable")[rank - 1])


def log_transform(grid: ScalarGrid, sigma: float) -> ScalarGrid:
    """Compress intensities above `sigma`: C~ = sigma*sqrt(log(1+(C/sigma)^2)/log 2).

    Strictly monotone, fixes C = sigma, nearly linear below sigma and
    logarithmic above. NaN passes through.
    """
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    c = grid.values
    with np.errstate(invalid="ignore"):
        out = sigma * np.sqrt(np.log1p((c / sigma) ** 2) / math.log(2.0))
    return grid.copy_with(values=out)


def select_sigma(grid: ScalarGrid, percentile: float = 0.90) -> float:
    """Empirical nearest-rank percentile of the finite pixel intensities."""
    finite = grid.values[np.isfinite(grid.values)]
    if finite.size == 0:
        raise EmptyGrid("grid has no finite pixels")
    return nearest_rank(finite, percentile)


def _nonzero_median(values: np.ndarray) -> float | None:
    day = values[np.isfinite(values) & (values > 0)]
    if day.size == 0:
        return None
    return float(np.median(day))


def equalize_median(prev: ScalarGrid, next_: ScalarGrid) -> ScalarGrid:
    """Scale `prev` so its nonzero-pixel median matches that of `next_`."""
    if prev.values.shape != next_.values.shape:
        raise ShapeMismatch("grids must share shape")
    med_next = _nonzero_median(next_.values)
    if med_next is None:
        raise ZeroMedian("next grid has no nonzero finite pixels")
    med_prev = _nonzero_median(prev.values)
    if med_prev is None or med_prev == 0.0:
        raise ZeroMedian("prev grid's nonzero median is zero or absent")
    return prev.copy_with(values=prev.values * (med_next / med_prev))


def outlier_mask(grid: ScalarGrid, percentile: float = 0.90) -> np.ndarray:
    """Boolean mask of pixels strictly above the nearest-rank percentile.

    The complement (on finite pixels) is the evaluation set used for
    error assessment.
    """
    finite = np.isfinite(grid.values)
    if grid.values.size == 0 or not finite.any():
        raise EmptyGrid("grid has no finite pixels")
    threshold = nearest_rank(grid.values[finite], percentile)
    with np.errstate(invalid="ignore"):
        return finite & (grid.values > threshold)


def prepare_pair(prev: ScalarGrid, next_: ScalarGrid, cfg: PreprocessConfig | None = None):
    """Full conditioning chain for one frame pair prior to flow estimation.

    Masked (NaN) pixels are zero-filled, `prev` is median-equalized to
    `next_`, and both frames are log-transformed with one sigma selected
    from the later frame. Returns (prev_out, next_out, sigma).
    """
    cfg = cfg or PreprocessConfig()
    prev_f = prev.copy_with(values=np.nan_to_num(prev.values, nan=0.0))
    next_f = next_.copy_with(values=np.nan_to_num(next_.values, nan=0.0))
    prev_eq = equalize_median(prev_f, next_f)
    sigma = select_sigma(next_f, cfg.percentile)
    if sigma <= 0:
        # Mostly-clear scene: percentile landed on zero. Fall back to the
        # largest intensity so the transform stays in its linear regime.
        sigma = float(np.max(next_f.values))
    if sigma <= 0:
        raise NonPositiveSigma("cannot select a positive sigma from the later frame")
    return log_transform(prev_eq, sigma), log_transform(next_f, sigma), sigma
