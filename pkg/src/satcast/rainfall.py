"""Brightness temperature to rain rate, upsampling, accumulation and CDFs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import Field2D, GridError, Unit

FRAMES_4H = 16
HOURS_4H = 4.0
UPSAMPLE_FACTOR = 6


@dataclass(frozen=True)
class TransformCoeffs:
    """R = alpha * max(0, 300 - T) ** beta, R in mm/h, T in kelvin."""

    alpha: float = 0.0163
    beta: float = 1.56

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")


def bt_to_rain(t: Field2D, c: TransformCoeffs = TransformCoeffs()) -> Field2D:
    if t.unit is not Unit.KELVIN:
        raise GridError(f"rain transform needs kelvin, got {t.unit.name}")
    cooling = np.maximum(0.0, 300.0 - t.data.astype(np.float64))
    return Field2D(c.alpha * cooling**c.beta, Unit.MM_PER_H)


class CalibrationError(ValueError):
    pass


def calibrate_transform(samples: Iterable[tuple[float, float]]) -> TransformCoeffs:
    """Least squares in log space: log R = log alpha + beta * log(300 - T).

    Only samples with T < 300 and R > 0 take part.
    """
    arr = np.asarray(list(samples), dtype=np.float64).reshape(-1, 2)
    t, r = arr[:, 0], arr[:, 1]
    keep = (t < 300.0) & (r > 0) & np.isfinite(t) & np.isfinite(r)
    if keep.sum() < 2:
        raise CalibrationError("need at least two samples with T < 300 K and R > 0")
    x = np.log(300.0 - t[keep])
    y = np.log(r[keep])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx <= 1e-12 * max(1.0, xm * xm) * x.size:
        raise CalibrationError("all samples share one temperature; slope is undetermined")
    beta = float(np.sum((x - xm) * (y - ym)) / sxx)
    alpha = float(np.exp(ym - beta * xm))
    return TransformCoeffs(alpha, beta)


def _interp_axis(a: np.ndarray, factor: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    w = src - i0
    lo = np.take(a, i0, axis=axis)
    hi = np.take(a, i1, axis=axis)
    shape = [1, 1]
    shape[axis] = -1
    # lo + w*(hi-lo) keeps constants bit-exact
    return lo + w.reshape(shape) * (hi - lo)


def upsample_bilinear(
    f: Field2D, factor: int = UPSAMPLE_FACTOR, expect: tuple[int, int] | None = (252, 252)
) -> Field2D:
    """Bilinear upsampling with half-pixel centers and edge clamping.

    Output cell ``i`` samples source coordinate ``(i + 0.5) / factor - 0.5``.
    ``expect`` guards the input size; pass None for arbitrary grids.
    """
    if expect is not None and f.shape != tuple(expect):
        raise GridError(f"expected a {expect} field, got {f.shape}")
    a = f.data.astype(np.float64)
    a = _interp_axis(a, factor, 0)
    a = _interp_axis(a, factor, 1)
    return f.with_data(a)


def cumulative_rain(frames: Sequence[Field2D]) -> Field2D:
    """4-hour accumulation in mm: mean rate over 16 frames times 4 h."""
    frames = list(frames)
    if len(frames) != FRAMES_4H:
        raise GridError(f"need {FRAMES_4H} frames, got {len(frames)}")
    total = np.zeros(frames[0].shape, dtype=np.float64)
    for f in frames:
        if f.shape != total.shape:
            raise GridError("frame shapes differ")
        total += f.data
    return Field2D(total * (HOURS_4H / FRAMES_4H), Unit.MM)


@dataclass(frozen=True)
class RegionOfInterest:
    """Half-open box [row0, row1) x [col0, col1)."""

    row0: int
    col0: int
    row1: int
    col1: int
    name: str = ""

    def __post_init__(self):
        if not (0 <= self.row0 < self.row1 and 0 <= self.col0 < self.col1):
            raise ValueError(f"empty or negative region {self}")


def roi_average(f: Field2D, roi: RegionOfInterest) -> float:
    if roi.row1 > f.rows or roi.col1 > f.cols:
        raise GridError(f"region {roi} exceeds field {f.shape}")
    block = f.data[roi.row0 : roi.row1, roi.col0 : roi.col1]
    return float(np.mean(block, dtype=np.float64))


class CdfError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdCDF:
    """Step CDF through (threshold mm, P(accumulation <= threshold)) knots."""

    pairs: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pairs = tuple((float(t), float(p)) for t, p in self.pairs)
        if not pairs:
            raise CdfError("a CDF needs at least one knot")
        for (t0, p0), (t1, p1) in zip(pairs, pairs[1:]):
            if not t1 > t0:
                raise CdfError("thresholds must be strictly increasing")
            if p1 < p0:
                raise CdfError("probabilities must be non-decreasing")
        if any(not 0.0 <= p <= 1.0 for _, p in pairs):
            raise CdfError("probabilities must lie in [0, 1]")
        if pairs[-1][1] != 1.0:
            raise CdfError("the last probability must be 1")
        object.__setattr__(self, "pairs", pairs)

    @property
    def thresholds(self) -> list[float]:
        return [t for t, _ in self.pairs]

    @property
    def probs(self) -> list[float]:
        return [p for _, p in self.pairs]


def to_threshold_cdf(v: float) -> ThresholdCDF:
    """Adaptive knots around a deterministic accumulation ``v``.

    Below 2 mm the forecast is a single certain knot at ``v``. From 2 mm up,
    knots sit 1 mm and 0.5 mm below ``v`` (P = 0.5, 0.75) and 2 mm above it
    (P = 1).
    """
    if not v >= 0:
        raise CdfError(f"accumulation must be non-negative, got {v}")
    if v < 2.0:
        return ThresholdCDF(((v, 1.0),))
    raw = [(max(0.0, v - 1.0), 0.5), (v - 0.5, 0.75), (v + 2.0, 1.0)]
    pairs: list[tuple[float, float]] = []
    for t, p in raw:
        if pairs and t <= pairs[-1][0]:
            pairs[-1] = (pairs[-1][0], max(p, pairs[-1][1]))
        else:
            pairs.append((t, p))
    return ThresholdCDF(tuple(pairs))


CDF_HEADER = ("roi_id", "threshold_mm", "probability")


def write_cdf_csv(cdfs: Sequence[tuple[str, ThresholdCDF]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_HEADER)
        for roi_id, cdf in cdfs:
            for t, p in cdf.pairs:
                w.writerow([roi_id, f"{t:.6f}", f"{p:.6f}"])


def read_cdf_csv(path) -> list[tuple[str, ThresholdCDF]]:
    grouped: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            grouped.setdefault(row["roi_id"], []).append(
                (float(row["threshold_mm"]), float(row["probability"]))
            )
    return [(k, ThresholdCDF(tuple(v))) for k, v in grouped.items()]


def parse_roi(text: str) -> RegionOfInterest:
    """``name:row0,col0,row1,col1`` or just the four integers."""
    name, _, box = text.rpartition(":")
    parts = [int(p) for p in box.split(",")]
    if len(parts) != 4:
        raise ValueError(f"region needs four integers, got {text!r}")
    return RegionOfInterest(*parts, name=name or f"roi{parts[0]}_{parts[1]}")
