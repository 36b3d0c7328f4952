"""Frame files on disk, supervised training windows, synthetic cloud fields."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import FrameSequence, GridError, Unit

MAGIC = b"W4CF"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIB")

FRAMES_PER_HOUR = 4
N_INPUT = 4


class FrameFormatError(ValueError):
    """Not a frame file (bad magic, version or unit tag)."""


class FrameCorruptionError(ValueError):
    """Header and payload disagree."""


class FrameDataError(ValueError):
    """Payload decoded but holds non-finite values."""


def frames_to_bytes(seq: FrameSequence) -> bytes:
    arr = seq.to_array()
    t, rows, cols = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, t, rows, cols, int(seq.unit))
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def frames_from_bytes(raw: bytes) -> FrameSequence:
    if len(raw) < _HEADER.size:
        raise FrameCorruptionError(f"file too short for header ({len(raw)} bytes)")
    magic, version, t, rows, cols, unit = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FrameFormatError(f"unsupported version {version}")
    try:
        unit = Unit(unit)
    except ValueError:
        raise FrameFormatError(f"unknown unit tag {unit}") from None
    n = t * rows * cols
    if len(raw) != _HEADER.size + 4 * n:
        raise FrameCorruptionError(
            f"payload is {len(raw) - _HEADER.size} bytes, header implies {4 * n}"
        )
    if t == 0:
        raise FrameCorruptionError("file holds zero frames")
    arr = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size)
    if not np.all(np.isfinite(arr)):
        raise FrameDataError("payload contains NaN or Inf")
    return FrameSequence.from_array(arr.reshape(t, rows, cols), unit)


def save_frames(seq: FrameSequence, path) -> None:
    Path(path).write_bytes(frames_to_bytes(seq))


def load_frames(path) -> FrameSequence:
    return frames_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class TrainingWindow:
    input: FrameSequence
    target: FrameSequence
    offset_hours: int
    start: int = 0


def window_indices(start: int, offset_hours: int) -> tuple[range, range]:
    """Input and target frame indices of the window beginning at ``start``."""
    last = start + N_INPUT - 1
    first_target = last + FRAMES_PER_HOUR * (offset_hours - 1) + 1
    return range(start, last + 1), range(first_target, first_target + FRAMES_PER_HOUR)


def make_windows(seq: FrameSequence, offset_hours: int) -> list[TrainingWindow]:
    """Every stride-1 window whose target hour lies inside ``seq``."""
    if offset_hours not in (1, 2, 3, 4):
        raise ValueError(f"offset_hours must be 1..4, got {offset_hours}")
    count = len(seq) - N_INPUT - FRAMES_PER_HOUR * offset_hours + 1
    out = []
    for s in range(max(count, 0)):
        inp, tgt = window_indices(s, offset_hours)
        out.append(
            TrainingWindow(
                FrameSequence(tuple(seq[i] for i in inp)),
                FrameSequence(tuple(seq[i] for i in tgt)),
                offset_hours,
                s,
            )
        )
    return out


# -- synthetic data ---------------------------------------------------------

BACKGROUND_K = 290.0
BT_RANGE = (180.0, 300.0)


def gen_synthetic(
    seed: int,
    n_frames: int,
    rows: int,
    cols: int,
    *,
    velocity: tuple[float, float] | None = None,
    n_blobs: int | None = None,
    sigma: tuple[float, float] = (1.2, 2.5),
    lifetime: tuple[float, float] = (10.0, 28.0),
    density: float = 1 / 64,
    depth: tuple[float, float] = (30.0, 90.0),
) -> FrameSequence:
    """Cold Gaussian cloud cells advecting over a 290 K background.

    Each cell has a constant velocity ``(dx, dy)`` in pixels per frame
    (x along columns) of magnitude at most 2, and a peak depth. Amplitudes follow
    a half-sine envelope so cells grow and decay smoothly. ``depth`` bounds
    the peak cooling below the background in kelvin; the default puts cell
    minima in [200, 260] K.

    Without ``n_blobs``, cells are born and die throughout the sequence with
    on average ``density * rows * cols`` alive at once. With ``n_blobs``,
    exactly that many cells live for the whole sequence. ``velocity`` gives
    every cell the same motion; otherwise directions are random and speeds
    uniform in [0.5, 2].
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if velocity is not None and math.hypot(*velocity) > 2.0 + 1e-9:
        raise ValueError("cell speed is limited to 2 px/frame")
    rng = np.random.default_rng(seed)

    if n_blobs is None:
        mean_life = 0.5 * (lifetime[0] + lifetime[1])
        active = max(1.0, density * rows * cols)
        k = int(math.ceil(active * (n_frames + lifetime[1]) / mean_life))
        life = rng.uniform(*lifetime, size=k)
        birth = rng.uniform(-lifetime[1], n_frames, size=k)
        margin = 3 * sigma[1]
        r0 = rng.uniform(-margin, rows + margin, size=k)
        c0 = rng.uniform(-margin, cols + margin, size=k)
    else:
        k = n_blobs
        life = np.full(k, 1.5 * n_frames + 2.0)
        birth = np.full(k, -1.0 - 0.25 * n_frames)
        r0 = rng.uniform(0.25 * rows, 0.75 * rows, size=k)
        c0 = rng.uniform(0.25 * cols, 0.75 * cols, size=k)

    depth = rng.uniform(*depth, size=k)
    width = rng.uniform(*sigma, size=k)
    if velocity is None:
        angle = rng.uniform(0, 2 * np.pi, size=k)
        speed = rng.uniform(0.5, 2.0, size=k)
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
    else:
        vx, vy = np.full(k, float(velocity[0])), np.full(k, float(velocity[1]))

    rr = np.arange(rows, dtype=np.float64)[:, None, None]
    cc = np.arange(cols, dtype=np.float64)[None, :, None]
    out = np.empty((n_frames, rows, cols), dtype=np.float32)
    for t in range(n_frames):
        age = t - birth
        alive = (age >= 0) & (age <= life)
        env = np.sin(np.pi * age[alive] / life[alive])
        pr = r0[alive] + vy[alive] * age[alive]
        pc = c0[alive] + vx[alive] * age[alive]
        s2 = 2.0 * width[alive] ** 2
        g = np.exp(-((rr - pr) ** 2 + (cc - pc) ** 2) / s2)
        field = BACKGROUND_K - (g * (depth[alive] * env)).sum(axis=2)
        out[t] = np.clip(field, *BT_RANGE)
    return FrameSequence.from_array(out, Unit.KELVIN)


def require_frames(seq: FrameSequence, n: int, what="sequence") -> None:
    if len(seq) != n:
        raise GridError(f"{what} must hold exactly {n} frames, got {len(seq)}")


def gen_layered(
    seed: int, n_frames: int, rows: int, cols: int, layers: Sequence[dict]
) -> FrameSequence:
    """Superpose independent cell populations over one background.

    Each entry of ``layers`` holds keyword arguments for :func:`gen_synthetic`.
    Coolings add, so a fast convective layer can ride on a slow stratiform
    one. Layer seeds are derived from ``seed`` and the layer index.
    """
    if not layers:
        raise ValueError("need at least one layer")
    cooling = np.zeros((n_frames, rows, cols), dtype=np.float64)
    for i, kw in enumerate(layers):
        sub = gen_synthetic(seed * 1000 + i, n_frames, rows, cols, **kw).to_array()
        cooling += BACKGROUND_K - sub.astype(np.float64)
    out = np.clip(BACKGROUND_K - cooling, *BT_RANGE).astype(np.float32)
    return FrameSequence.from_array(out, Unit.KELVIN)
