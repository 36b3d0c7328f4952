"""Normalization, Otsu cloud masking and padding of brightness-temperature frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field2D, FrameSequence, GridError, Unit

N_BINS = 256


class DegenerateFieldError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    norm_divisor: float = 300.0
    pad_to: int = 256
    mask_fill: float = 1.0

    def __post_init__(self):
        if not self.norm_divisor > 0:
            raise ValueError("norm_divisor must be positive")
        if self.pad_to < 1:
            raise ValueError("pad_to must be positive")


def normalize_bt(f: Field2D, cfg: PreprocessConfig = PreprocessConfig()) -> Field2D:
    if np.any(f.data < 0):
        raise ValueError("brightness temperature cannot be negative")
    # no clamp: values above the divisor stay above 1
    return Field2D(f.data.astype(np.float64) / cfg.norm_divisor, Unit.NORMALIZED)


def denormalize_bt(f: Field2D, cfg: PreprocessConfig = PreprocessConfig()) -> Field2D:
    return Field2D(f.data.astype(np.float64) * cfg.norm_divisor, Unit.KELVIN)


def otsu_histogram(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """256-bin counts over [min, max]; the max value falls in the last bin."""
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DegenerateFieldError("Otsu threshold needs at least two distinct values")
    idx = np.floor((v - lo) / (hi - lo) * N_BINS).astype(np.int64)
    np.clip(idx, 0, N_BINS - 1, out=idx)
    return np.bincount(idx, minlength=N_BINS), lo, hi


def otsu_bin(counts: np.ndarray) -> int:
    """Bin ``k`` maximizing between-class variance of bins [0..k] vs [k+1..].

    Bin indices stand in for intensities (a positive affine map of the bin
    centers, so the argmax is unchanged). First maximum wins on ties.
    """
    counts = counts.astype(np.float64)
    levels = np.arange(counts.size, dtype=np.float64)
    n0 = np.cumsum(counts)
    s0 = np.cumsum(counts * levels)
    n, s = n0[-1], s0[-1]
    n1, s1 = n - n0, s - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = n0 * n1 * (s0 / n0 - s1 / n1) ** 2
    var[(n0 == 0) | (n1 == 0)] = 0.0
    return int(np.argmax(var))


def otsu_threshold(f: Field2D | np.ndarray) -> float:
    """Threshold at the upper edge of the Otsu bin."""
    counts, lo, hi = otsu_histogram(np.asarray(f))
    k = otsu_bin(counts)
    return lo + (k + 1) * (hi - lo) / N_BINS


def apply_cloud_mask(
    f: Field2D, thr: float, cfg: PreprocessConfig = PreprocessConfig()
) -> Field2D:
    """Warm (non-cloudy) cells at or above ``thr`` become ``mask_fill``."""
    if not np.isfinite(thr):
        raise ValueError("threshold must be finite")
    data = np.where(f.data >= thr, np.float32(cfg.mask_fill), f.data)
    return f.with_data(data)


def pad_center(f: Field2D, pad_to: int) -> Field2D:
    rows, cols = f.shape
    if rows > pad_to or cols > pad_to:
        raise GridError(f"field {f.shape} is larger than pad target {pad_to}")
    r0, c0 = (pad_to - rows) // 2, (pad_to - cols) // 2
    out = np.zeros((pad_to, pad_to), dtype=np.float32)
    out[r0 : r0 + rows, c0 : c0 + cols] = f.data
    return f.with_data(out)


def crop_center(f: Field2D, to: int | tuple[int, int]) -> Field2D:
    """Inverse of :func:`pad_center` for a field originally ``to`` in size."""
    rows_to, cols_to = (to, to) if np.isscalar(to) else to
    rows, cols = f.shape
    if rows_to > rows or cols_to > cols:
        raise GridError(f"cannot crop {f.shape} to {(rows_to, cols_to)}")
    r0 = (rows - rows_to) // 2
    c0 = (cols - cols_to) // 2
    return f.with_data(f.data[r0 : r0 + rows_to, c0 : c0 + cols_to])


def preprocess_input(f: Field2D, cfg: PreprocessConfig = PreprocessConfig()) -> Field2D:
    """Model input: normalize, mask clear sky with a per-frame Otsu threshold, pad.

    A constant frame has no cloud/clear split and is passed through unmasked.
    """
    if f.unit is not Unit.KELVIN:
        raise GridError(f"expected kelvin input, got {f.unit.name}")
    norm = normalize_bt(f, cfg)
    try:
        norm = apply_cloud_mask(norm, otsu_threshold(norm), cfg)
    except DegenerateFieldError:
        pass
    return pad_center(norm, cfg.pad_to)


def preprocess_target(f: Field2D, cfg: PreprocessConfig = PreprocessConfig()) -> Field2D:
    """Training target: normalized and padded, never masked."""
    if f.unit is not Unit.KELVIN:
        raise GridError(f"expected kelvin target, got {f.unit.name}")
    return pad_center(normalize_bt(f, cfg), cfg.pad_to)


def preprocess_sequence(seq: FrameSequence, cfg=PreprocessConfig(), target=False):
    fn = preprocess_target if target else preprocess_input
    return FrameSequence(tuple(fn(f, cfg) for f in seq), seq.step_minutes)
