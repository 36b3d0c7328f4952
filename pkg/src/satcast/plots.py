"""Minimal line plots written as binary portable pixmaps (P6)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

PALETTE = (
    (31, 119, 180),
    (214, 39, 40),
    (44, 160, 44),
    (148, 103, 189),
    (255, 127, 14),
    (23, 190, 207),
)


def _line(img: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    """Bresenham segment, clipped to the image."""
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    h, w = img.shape[:2]
    while True:
        if 0 <= x0 < w and 0 <= y0 < h:
            img[y0, x0] = color
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def render_lines(
    series: Mapping[str, Sequence[float]], width=480, height=320, margin=24
) -> np.ndarray:
    """RGB image of each series against its index, on shared axes.

    Series colors follow insertion order through a fixed palette. There is no
    text; the companion CSV carries the numbers and the legend.
    """
    img = np.full((height, width, 3), 255, dtype=np.uint8)
    values = [np.asarray(v, dtype=np.float64) for v in series.values()]
    if not values or not any(v.size for v in values):
        return img
    lo = min(float(np.min(v)) for v in values if v.size)
    hi = max(float(np.max(v)) for v in values if v.size)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    n = max(v.size for v in values)
    x_span, y_span = width - 2 * margin - 1, height - 2 * margin - 1

    def px(i, v):
        x = margin + (i / max(n - 1, 1)) * x_span
        y = height - 1 - margin - (v - lo) / (hi - lo) * y_span
        return int(round(x)), int(round(y))

    axis = (0, 0, 0)
    _line(img, margin, height - 1 - margin, width - 1 - margin, height - 1 - margin, axis)
    _line(img, margin, margin, margin, height - 1 - margin, axis)
    for k, v in enumerate(values):
        color = PALETTE[k % len(PALETTE)]
        pts = [px(i, x) for i, x in enumerate(v)]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            _line(img, x0, y0, x1, y1, color)
        for x, y in pts:
            img[max(y - 1, 0) : y + 2, max(x - 1, 0) : x + 2] = color
    return img


def write_ppm(img: np.ndarray, path) -> None:
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.astype(np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)


def write_series_csv(series: Mapping[str, Sequence[float]], path, x_label="lead_min",
                     step=15) -> None:
    """Long-format CSV (series, x, value) matching a rendered plot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("series", x_label, "value"))
        for name, vals in series.items():
            for i, v in enumerate(vals):
                w.writerow((name, (i + 1) * step, f"{v:.6f}"))


def line_plot(series: Mapping[str, Sequence[float]], stem) -> tuple[Path, Path]:
    """Write ``stem.ppm`` and ``stem.csv``; return both paths."""
    stem = Path(stem)
    ppm, table = stem.with_suffix(".ppm"), stem.with_suffix(".csv")
    write_ppm(render_lines(series), ppm)
    write_series_csv(series, table)
    return ppm, table
