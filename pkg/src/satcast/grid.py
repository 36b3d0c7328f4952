"""Dense 2D/3D grids shared by every stage of the pipeline.

Fields are stored as read-only float32 arrays; reductions accumulate in
float64. Physical units travel with the data as a tag and are checked at
module boundaries only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

STEP_MINUTES = 15


class GridError(ValueError):
    """Shape or content violation of a grid invariant."""


class Unit(enum.IntEnum):
    KELVIN = 0
    NORMALIZED = 1
    MM_PER_H = 2
    MM = 3


def _frozen(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float32)
    if arr.ndim != ndim:
        raise GridError(f"expected a {ndim}-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GridError("grid contains NaN or Inf")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Field2D:
    """Single-channel 2D grid (row-major) with a unit tag."""

    data: np.ndarray
    unit: Unit = Unit.KELVIN

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 2))
        object.__setattr__(self, "unit", Unit(self.unit))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Field2D):
            return NotImplemented
        return self.unit == other.unit and np.array_equal(self.data, other.data)

    def with_data(self, data, unit: Unit | None = None) -> Field2D:
        return Field2D(data, self.unit if unit is None else unit)


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Time-ordered stack of same-shape fields, 15 minutes apart."""

    frames: tuple[Field2D, ...]
    step_minutes: int = STEP_MINUTES

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise GridError("a frame sequence cannot be empty")
        shape, unit = frames[0].shape, frames[0].unit
        for f in frames[1:]:
            if f.shape != shape or f.unit != unit:
                raise GridError("frames must share shape and unit")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_array(cls, arr, unit: Unit) -> FrameSequence:
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise GridError(f"expected (t, rows, cols), got {arr.shape}")
        return cls(tuple(Field2D(a, unit) for a in arr))

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return FrameSequence(self.frames[i], self.step_minutes)
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    @property
    def unit(self) -> Unit:
        return self.frames[0].unit

    def to_array(self) -> np.ndarray:
        return np.stack([f.data for f in self.frames])


@dataclass(frozen=True, eq=False)
class Volume3D:
    """(t, rows, cols) grid, t-major then row-major."""

    data: np.ndarray
    unit: Unit = Unit.MM_PER_H

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, 3))
        object.__setattr__(self, "unit", Unit(self.unit))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def t(self) -> int:
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


def field_map(f: Field2D, g: Callable, unit: Unit | None = None) -> Field2D:
    """Apply ``g`` elementwise.

    Array-aware callables (ufuncs, numpy expressions) run vectorized; plain
    scalar functions fall back to a per-cell loop.
    """
    x = f.data.astype(np.float64)
    try:
        out = np.asarray(g(x), dtype=np.float64)
    except (TypeError, ValueError):
        out = None
    if out is None or out.shape != f.shape:
        out = np.vectorize(g, otypes=[np.float64])(x)
    return f.with_data(out, unit)


_REDUCERS = {
    "sum": np.sum,
    "max": np.max,
    "min": np.min,
    "mean": np.mean,
}


def field_reduce(f: Field2D, op: str) -> float:
    if f.data.size == 0:
        raise GridError("cannot reduce an empty field")
    try:
        fn = _REDUCERS[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}") from None
    return float(fn(f.data, dtype=np.float64) if op in ("sum", "mean") else fn(f.data))


def stack_to_volume(seq: FrameSequence | Sequence[Field2D]) -> Volume3D:
    frames = list(seq)
    if not frames:
        raise GridError("cannot stack an empty sequence")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise GridError("frame shapes differ")
    return Volume3D(np.stack([f.data for f in frames]), frames[0].unit)
