"""Verification scores: RMSE, bias, SSIM, contingency scores, step-CDF CRPS."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import Field2D, GridError
from .rainfall import ThresholdCDF

ACTIVE_RAIN_MM = 5.0
ACTIVE_FRACTION = 0.05


def _pair(pred, obs) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(obs, dtype=np.float64)
    if a.shape != b.shape:
        raise GridError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(pred, obs) -> float:
    a, b = _pair(pred, obs)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def bias(pred, obs) -> float:
    """Mean error, pred - obs."""
    a, b = _pair(pred, obs)
    return float(np.mean(a - b))


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: Optional[float] = None  # None: largest magnitude in either field


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    a = sliding_window_view(a, n, axis=0) @ g
    return sliding_window_view(a, n, axis=1) @ g


def ssim(pred, obs, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM over all fully-inside Gaussian windows."""
    x, y = _pair(pred, obs)
    if x.ndim != 2 or min(x.shape) < cfg.window:
        raise GridError(f"field {x.shape} is smaller than the {cfg.window}px window")
    L = cfg.data_range
    if L is None:
        L = max(np.abs(x).max(), np.abs(y).max()) or 1.0
    c1, c2 = (cfg.k1 * L) ** 2, (cfg.k2 * L) ** 2
    g = gaussian_window(cfg.window, cfg.sigma)
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


class ContingencyCounts(NamedTuple):
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    @property
    def total(self) -> int:
        return sum(self)


def contingency(pred, obs, thr: float) -> ContingencyCounts:
    """Cells at or above ``thr`` are events."""
    a, b = _pair(pred, obs)
    pe, oe = a >= thr, b >= thr
    return ContingencyCounts(
        int(np.sum(pe & oe)),
        int(np.sum(~pe & oe)),
        int(np.sum(pe & ~oe)),
        int(np.sum(~pe & ~oe)),
    )


class CategoricalScores(NamedTuple):
    """None marks a score whose denominator is zero."""

    pod: Optional[float]
    far: Optional[float]
    f1: Optional[float]


def _ratio(num, den) -> Optional[float]:
    return num / den if den > 0 else None


def pod_far_f1(c: ContingencyCounts) -> CategoricalScores:
    h, m, fa = c.hits, c.misses, c.false_alarms
    return CategoricalScores(_ratio(h, h + m), _ratio(fa, h + fa), _ratio(2 * h, 2 * h + fa + m))


def cdf_value(cdf: ThresholdCDF, x: float) -> float:
    """Right-continuous step CDF: 0 before the first knot."""
    k = bisect.bisect_right(cdf.thresholds, x)
    return 0.0 if k == 0 else cdf.probs[k - 1]


def crps_step(cdf: ThresholdCDF, y: float, upper: Optional[float] = None) -> float:
    """Integral of (F(x) - 1{x >= y})^2 from 0 to ``upper``, exactly.

    Both functions are piecewise constant, so the integral is a finite sum
    over the intervals between knots, the observation and the bounds.
    """
    if not isinstance(cdf, ThresholdCDF):
        cdf = ThresholdCDF(tuple(cdf))
    top = max(cdf.thresholds[-1], y)
    if upper is None:
        upper = top + 1.0
    if upper < top:
        raise ValueError(f"upper bound {upper} is below {top}")
    lo = min(0.0, cdf.thresholds[0], y)
    points = sorted({lo, upper, y, *cdf.thresholds})
    total = 0.0
    for a, b in zip(points, points[1:]):
        mid = 0.5 * (a + b)
        diff = cdf_value(cdf, mid) - (1.0 if mid >= y else 0.0)
        total += diff * diff * (b - a)
    return total


def active_scene_filter(
    frames: Sequence[Field2D], rain_mm=ACTIVE_RAIN_MM, fraction=ACTIVE_FRACTION
) -> list[tuple[int, Field2D]]:
    """Keep frames where more than ``fraction`` of cells exceed ``rain_mm``."""
    kept = []
    for i, f in enumerate(frames):
        data = np.asarray(f)
        wet = np.count_nonzero(data > rain_mm)
        if wet / data.size > fraction:
            kept.append((i, f))
    return kept
