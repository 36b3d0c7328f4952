"""Extreme-rain event detection on a (t, row, col) rain-rate volume.

Voxels above the rain-rate threshold are grouped with 18-connectivity
(shared faces or edges, not corners), each group is summarized, and the
most intense groups are exported as CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .grid import STEP_MINUTES, GridError, Volume3D

EVENT_THRESHOLD = 2.0

# Neighbors already visited in (t, row, col) raster order: offsets that are
# lexicographically negative with |dt|+|dr|+|dc| <= 2.
_PRIOR_18 = np.array(
    [
        (dt, dr, dc)
        for dt in (-1, 0, 1)
        for dr in (-1, 0, 1)
        for dc in (-1, 0, 1)
        if (dt, dr, dc) < (0, 0, 0) and abs(dt) + abs(dr) + abs(dc) <= 2
    ],
    dtype=np.int64,
)


def threshold_volume(v: Volume3D | np.ndarray, thr: float = EVENT_THRESHOLD) -> np.ndarray:
    """Boolean mask of voxels strictly above ``thr``."""
    if not np.isfinite(thr):
        raise ValueError("threshold must be finite")
    return np.asarray(v) > thr


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _label(mask, offsets):
    nt, nr, nc = mask.shape
    flat = mask.ravel()
    parent = np.full(flat.size, -1, dtype=np.int64)
    for t in range(nt):
        for r in range(nr):
            for c in range(nc):
                i = (t * nr + r) * nc + c
                if not flat[i]:
                    continue
                parent[i] = i
                for k in range(offsets.shape[0]):
                    tt = t + offsets[k, 0]
                    rr = r + offsets[k, 1]
                    cc = c + offsets[k, 2]
                    if tt < 0 or rr < 0 or rr >= nr or cc < 0 or cc >= nc:
                        continue
                    j = (tt * nr + rr) * nc + cc
                    if not flat[j]:
                        continue
                    a = _find(parent, i)
                    b = _find(parent, j)
                    # the smaller index (first in scan order) stays root
                    if a < b:
                        parent[b] = a
                    elif b < a:
                        parent[a] = b
    labels = np.zeros(flat.size, dtype=np.int32)
    next_label = 0
    for i in range(flat.size):
        if parent[i] < 0:
            continue
        root = _find(parent, i)
        if root == i:
            next_label += 1
            labels[i] = next_label
        else:
            labels[i] = labels[root]
    return labels.reshape(mask.shape), next_label


def label_components_18(mask: np.ndarray) -> np.ndarray:
    """Union-find labeling; labels 1..K in order of first voxel in scan order."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if mask.ndim != 3:
        raise GridError(f"expected a 3-D mask, got shape {mask.shape}")
    labels, _ = _label(mask, _PRIOR_18)
    return labels


@dataclass(frozen=True)
class EventRecord:
    event_id: int
    t_start: int
    t_end: int
    bbox: tuple[int, int, int, int]  # row0, col0, row1, col1 (inclusive), central frame
    centroid_row: float
    centroid_col: float
    footprint_px: int
    max_intensity: float
    voxel_count: int

    @property
    def duration_frames(self) -> int:
        return self.t_end - self.t_start + 1

    @property
    def central_frame(self) -> int:
        return (self.t_start + self.t_end) // 2


def extract_events(labels: np.ndarray, v: Volume3D | np.ndarray) -> list[EventRecord]:
    """One record per label; location attributes come from the central frame."""
    values = np.asarray(v)
    labels = np.asarray(labels)
    if labels.shape != values.shape:
        raise GridError(f"labels {labels.shape} and volume {values.shape} differ")
    k = int(labels.max(initial=0))
    if k == 0:
        return []
    t, r, c = np.nonzero(labels)
    lab = labels[t, r, c].astype(np.int64) - 1
    val = values[t, r, c].astype(np.float64)

    t_start = np.full(k, np.iinfo(np.int64).max)
    t_end = np.full(k, -1)
    np.minimum.at(t_start, lab, t)
    np.maximum.at(t_end, lab, t)
    peak = np.full(k, -np.inf)
    np.maximum.at(peak, lab, val)
    count = np.bincount(lab, minlength=k)

    cols = values.shape[2]
    cells = np.unique(lab * (values.shape[1] * cols) + r * cols + c)
    footprint = np.bincount(cells // (values.shape[1] * cols), minlength=k)

    central = (t_start + t_end) // 2
    sel = t == central[lab]
    lc, rc, cc = lab[sel], r[sel], c[sel]
    n_c = np.bincount(lc, minlength=k)
    row_mean = np.bincount(lc, weights=rc, minlength=k) / n_c
    col_mean = np.bincount(lc, weights=cc, minlength=k) / n_c
    box = np.empty((4, k), dtype=np.int64)
    box[0], box[1] = np.iinfo(np.int64).max, np.iinfo(np.int64).max
    box[2], box[3] = -1, -1
    np.minimum.at(box[0], lc, rc)
    np.minimum.at(box[1], lc, cc)
    np.maximum.at(box[2], lc, rc)
    np.maximum.at(box[3], lc, cc)

    return [
        EventRecord(
            event_id=i + 1,
            t_start=int(t_start[i]),
            t_end=int(t_end[i]),
            bbox=tuple(int(b) for b in box[:, i]),
            centroid_row=float(row_mean[i]),
            centroid_col=float(col_mean[i]),
            footprint_px=int(footprint[i]),
            max_intensity=float(peak[i]),
            voxel_count=int(count[i]),
        )
        for i in range(k)
    ]


def select_top_events(events: Sequence[EventRecord], k: int = 5) -> list[EventRecord]:
    """Most intense first; ties by voxel count (desc) then event id."""
    ranked = sorted(events, key=lambda e: (-e.max_intensity, -e.voxel_count, e.event_id))
    return ranked[: max(k, 0)]


def detect_events(v: Volume3D, thr=EVENT_THRESHOLD, top=5) -> list[EventRecord]:
    labels = label_components_18(threshold_volume(v, thr))
    return select_top_events(extract_events(labels, v), top)


# -- CSV --------------------------------------------------------------------

CSV_COLUMNS = (
    "sequence_id",
    "event_rank",
    "t_start",
    "t_end",
    "centroid_row",
    "centroid_col",
    "bbox_row0",
    "bbox_col0",
    "bbox_row1",
    "bbox_col1",
    "footprint_px",
    "max_intensity_mm_h",
    "duration_min",
)


@dataclass(frozen=True)
class EventRow:
    """One exported event, as it appears in the CSV."""

    sequence_id: str
    event_rank: int
    t_start: int
    t_end: int
    centroid_row: float
    centroid_col: float
    bbox_row0: int
    bbox_col0: int
    bbox_row1: int
    bbox_col1: int
    footprint_px: int
    max_intensity_mm_h: float
    duration_min: int

    @classmethod
    def from_event(cls, e: EventRecord, sequence_id: str, rank: int,
                   frame_minutes: int = STEP_MINUTES) -> EventRow:
        return cls(
            str(sequence_id), rank, e.t_start, e.t_end,
            round(e.centroid_row, 3), round(e.centroid_col, 3), *e.bbox,
            e.footprint_px, round(e.max_intensity, 3),
            e.duration_frames * frame_minutes,
        )

    def cells(self) -> list[str]:
        out = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            out.append(f"{v:.3f}" if isinstance(v, float) else str(v))
        return out


def export_events_csv(events: Sequence[EventRecord], sequence_id, path,
                      frame_minutes: int = STEP_MINUTES) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rank, e in enumerate(events, start=1):
            w.writerow(EventRow.from_event(e, sequence_id, rank, frame_minutes).cells())


def read_events_csv(path) -> list[EventRow]:
    rows = []
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            kwargs = {}
            for name, typ in EventRow.__annotations__.items():
                raw = rec[name]
                kwargs[name] = raw if typ == "str" else (float(raw) if typ == "float" else int(raw))
            rows.append(EventRow(**kwargs))
    return rows
