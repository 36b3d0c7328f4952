"""Encoder / recurrent stack / decoder forecaster and its BPTT gradient.

The network reads 4 normalized frames and emits 4 forecast frames:

    frame -> conv-ReLU -> conv-ReLU -> rnn1 -> rnn2 -> conv-ReLU -> conv-ReLU -> conv

The encoder is shared across the 4 input steps. After the inputs are
consumed, the recurrent stack is unrolled 4 more steps with a zero input
and each of those rnn2 states is decoded into one output frame.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cells import (
    ConvGRUCellParams,
    ConvLSTMCellParams,
    gru_backward,
    gru_forward,
    lstm_backward,
    lstm_forward,
)
from .layers import ConvLayerParams, ShapeError, conv_backward_cols, conv_cols, im2col

N_IN = 4
N_OUT = 4
CELL_KINDS = ("convgru", "convlstm")


@dataclass(frozen=True)
class Arch:
    """Channel widths of the network; defaults are the full-size model."""

    enc: tuple[int, int] = (16, 32)
    hidden: tuple[int, int] = (64, 64)
    dec: tuple[int, int] = (32, 16)

    def layer_shapes(self, cell: str) -> dict[str, tuple[int, ...]]:
        (e1, e2), (h1, h2), (d1, d2) = self.enc, self.hidden, self.dec
        n_gates = 2 if cell == "convgru" else 4
        shapes = {"enc1.w": (e1, 1, 3, 3), "enc1.b": (e1,)}
        shapes.update({"enc2.w": (e2, e1, 3, 3), "enc2.b": (e2,)})
        for name, cin, ch in (("rnn1", e2, h1), ("rnn2", h1, h2)):
            shapes[f"{name}.w_gates"] = (n_gates * ch, cin + ch, 3, 3)
            shapes[f"{name}.b_gates"] = (n_gates * ch,)
            if cell == "convgru":
                shapes[f"{name}.w_cand"] = (ch, cin + ch, 3, 3)
                shapes[f"{name}.b_cand"] = (ch,)
        for name, cin, cout in (("dec1", h2, d1), ("dec2", d1, d2), ("dec3", d2, 1)):
            shapes[f"{name}.w"] = (cout, cin, 3, 3)
            shapes[f"{name}.b"] = (cout,)
        return shapes


class NetParams:
    """All learnable arrays of one model, keyed by ``layer.param`` names."""

    def __init__(self, arrays: dict[str, np.ndarray], cell: str = "convgru"):
        if cell not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {cell!r}")
        self.cell = cell
        self.arrays = dict(arrays)
        self.arch = _infer_arch(self.arrays, cell)
        expected = self.arch.layer_shapes(cell)
        if set(expected) != set(self.arrays):
            raise ShapeError("parameter names do not match the architecture")
        for k, shape in expected.items():
            if self.arrays[k].shape != shape:
                raise ShapeError(f"{k}: shape {self.arrays[k].shape}, expected {shape}")

    @classmethod
    def init(cls, arch: Arch = Arch(), cell="convgru", seed=0, dtype=np.float32):
        """Kernels uniform in +-sqrt(1 / (9 * in_channels)); biases zero."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for k, shape in arch.layer_shapes(cell).items():
            if len(shape) == 4:
                bound = np.sqrt(1.0 / (shape[1] * 9))
                arrays[k] = rng.uniform(-bound, bound, size=shape).astype(dtype)
            else:
                arrays[k] = np.zeros(shape, dtype=dtype)
        return cls(arrays, cell)

    def zeros_like(self) -> NetParams:
        return NetParams({k: np.zeros_like(v) for k, v in self.arrays.items()}, self.cell)

    def copy(self) -> NetParams:
        return NetParams({k: v.copy() for k, v in self.arrays.items()}, self.cell)

    def astype(self, dtype) -> NetParams:
        return NetParams({k: v.astype(dtype) for k, v in self.arrays.items()}, self.cell)

    @property
    def dtype(self):
        return self.arrays["enc1.w"].dtype

    def names(self) -> list[str]:
        return list(self.arch.layer_shapes(self.cell))

    def conv(self, layer: str) -> ConvLayerParams:
        return ConvLayerParams(self.arrays[f"{layer}.w"], self.arrays[f"{layer}.b"])

    def rnn(self, layer: str):
        a = self.arrays
        if self.cell == "convgru":
            return ConvGRUCellParams(
                a[f"{layer}.w_gates"], a[f"{layer}.b_gates"],
                a[f"{layer}.w_cand"], a[f"{layer}.b_cand"],
            )
        return ConvLSTMCellParams(a[f"{layer}.w_gates"], a[f"{layer}.b_gates"])

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def __eq__(self, other):
        if not isinstance(other, NetParams):
            return NotImplemented
        return (
            self.cell == other.cell
            and self.arrays.keys() == other.arrays.keys()
            and all(
                self.arrays[k].dtype == other.arrays[k].dtype
                and np.array_equal(self.arrays[k], other.arrays[k])
                for k in self.arrays
            )
        )


# Gradients share the parameter container; the alias documents intent.
GradStore = NetParams


def _infer_arch(arrays, cell) -> Arch:
    try:
        enc = (arrays["enc1.w"].shape[0], arrays["enc2.w"].shape[0])
        dec = (arrays["dec1.w"].shape[0], arrays["dec2.w"].shape[0])
        div = 2 if cell == "convgru" else 4
        hidden = tuple(arrays[f"rnn{i}.w_gates"].shape[0] // div for i in (1, 2))
    except KeyError as e:
        raise ShapeError(f"missing parameter {e}") from None
    return Arch(enc, hidden, dec)


def _to_internal(frames: np.ndarray, n_expected: int):
    """(T, H, W) or (N, T, H, W) -> (T, 1, N, H, W) plus an unbatch flag."""
    frames = np.asarray(frames)
    single = frames.ndim == 3
    if single:
        frames = frames[None]
    if frames.ndim != 4 or frames.shape[1] != n_expected:
        raise ShapeError(f"expected {n_expected} frames, got array of shape {frames.shape}")
    return np.ascontiguousarray(frames.transpose(1, 0, 2, 3))[:, None], single


def _forward(p: NetParams, x: np.ndarray, keep: bool):
    """x is (T_in, 1, N, H, W). Returns outputs (T_out, N, H, W) and a tape."""
    shape = x.shape[2:]
    dtype = p.dtype
    x = x.astype(dtype, copy=False)
    rnn1, rnn2 = p.rnn("rnn1"), p.rnn("rnn2")
    gru = p.cell == "convgru"
    h1 = h2 = c1 = c2 = None
    tape = []
    outs = []
    for t in range(N_IN + N_OUT):
        rec = {}
        if t < N_IN:
            cols0 = im2col(x[t])
            e1 = np.maximum(conv_cols(cols0, p.conv("enc1"), shape), 0)
            cols1 = im2col(e1)
            e2 = np.maximum(conv_cols(cols1, p.conv("enc2"), shape), 0)
            if keep:
                rec["enc"] = (cols0, e1, cols1, e2)
        else:
            e2 = None
        if gru:
            h1, rec1 = gru_forward(rnn1, e2, h1, shape)
            h2, rec2 = gru_forward(rnn2, h1, h2, shape)
        else:
            h1, c1, rec1 = lstm_forward(rnn1, e2, h1, c1, shape)
            h2, c2, rec2 = lstm_forward(rnn2, h1, h2, c2, shape)
        if t >= N_IN:
            cols2 = im2col(h2)
            d1 = np.maximum(conv_cols(cols2, p.conv("dec1"), shape), 0)
            cols3 = im2col(d1)
            d2 = np.maximum(conv_cols(cols3, p.conv("dec2"), shape), 0)
            cols4 = im2col(d2)
            y = conv_cols(cols4, p.conv("dec3"), shape)
            outs.append(y[0])
            if keep:
                rec["dec"] = (cols2, d1, cols3, d2, cols4)
        if keep:
            rec["rnn"] = (rec1, rec2)
            tape.append(rec)
    return np.stack(outs), tape


def model_forward(p: NetParams, frames) -> np.ndarray:
    """Forecast 4 frames from 4 frames.

    ``frames`` is ``(4, H, W)`` or a batch ``(N, 4, H, W)``; the result has
    the same layout with 4 forecast frames.
    """
    x, single = _to_internal(frames, N_IN)
    y, _ = _forward(p, x, keep=False)
    y = y.transpose(1, 0, 2, 3)
    return y[0] if single else y


def _conv_back(cols, p: NetParams, layer, grad, g: NetParams, in_shape, need_dx=True):
    dx, dk, db = conv_backward_cols(cols, p.arrays[f"{layer}.w"], grad, in_shape, need_dx)
    g.arrays[f"{layer}.w"] += dk
    g.arrays[f"{layer}.b"] += db
    return dx


def model_backward(p: NetParams, frames, targets) -> tuple[float, NetParams]:
    """Mean squared error over all output cells and its exact gradient.

    Gradients flow through the full 8-step unrolled graph. For a batch the
    loss is the mean over every element, i.e. the mean of per-sample losses.
    """
    x, _ = _to_internal(frames, N_IN)
    tgt, _ = _to_internal(targets, N_OUT)
    tgt = tgt[:, 0]
    y, tape = _forward(p, x, keep=True)
    if tgt.shape != y.shape:
        raise ShapeError(f"target shape {tgt.shape} does not match output {y.shape}")
    diff = y - tgt.astype(y.dtype)
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    dy = (2.0 / diff.size) * diff

    g = p.zeros_like()
    rnn1, rnn2 = p.rnn("rnn1"), p.rnn("rnn2")
    g1, g2 = g.rnn("rnn1"), g.rnn("rnn2")
    gru = p.cell == "convgru"
    shape = x.shape[2:]
    (e1c, _), (_, h2c), (d1c, d2c) = p.arch.enc, p.arch.hidden, p.arch.dec
    dh1 = dh2 = dc1 = dc2 = None
    for t in reversed(range(N_IN + N_OUT)):
        rec = tape[t]
        if t >= N_IN:
            cols2, d1, cols3, d2, cols4 = rec["dec"]
            gy = dy[t - N_IN][None]
            dd2 = _conv_back(cols4, p, "dec3", gy, g, (d2c,) + shape) * (d2 > 0)
            dd1 = _conv_back(cols3, p, "dec2", dd2, g, (d1c,) + shape) * (d1 > 0)
            dh = _conv_back(cols2, p, "dec1", dd1, g, (h2c,) + shape)
            dh2 = dh if dh2 is None else dh2 + dh
        rec1, rec2 = rec["rnn"]
        if dh2 is None:
            continue
        if gru:
            dx2, dh2 = gru_backward(rnn2, rec2, dh2, g2)
        else:
            dx2, dh2, dc2 = lstm_backward(rnn2, rec2, dh2, dc2, g2)
        dh1 = dx2 if dh1 is None else dh1 + dx2
        need = t < N_IN
        if gru:
            de2, dh1 = gru_backward(rnn1, rec1, dh1, g1, need_dx=need)
        else:
            de2, dh1, dc1 = lstm_backward(rnn1, rec1, dh1, dc1, g1, need_dx=need)
        if need:
            cols0, e1, cols1, e2 = rec["enc"]
            de2 = de2 * (e2 > 0)
            de1 = _conv_back(cols1, p, "enc2", de2, g, (e1c,) + shape) * (e1 > 0)
            _conv_back(cols0, p, "enc1", de1, g, (1,) + shape, need_dx=False)
    return loss, g


# -- serialization ----------------------------------------------------------

PARAM_MAGIC = b"W4CP"
PARAM_VERSION = 1


class ParamFormatError(ValueError):
    pass


def params_to_bytes(p: NetParams) -> bytes:
    """Versioned container of named, shape-tagged little-endian float32 arrays."""
    buf = io.BytesIO()
    cell = p.cell.encode()
    buf.write(PARAM_MAGIC)
    buf.write(struct.pack("<HB", PARAM_VERSION, len(cell)))
    buf.write(cell)
    buf.write(struct.pack("<I", len(p.arrays)))
    for name in p.names():
        arr = p.arrays[name]
        key = name.encode()
        buf.write(struct.pack("<H", len(key)))
        buf.write(key)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def params_from_bytes(raw: bytes) -> NetParams:
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ParamFormatError("truncated parameter file")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != PARAM_MAGIC:
        raise ParamFormatError("not a parameter file (bad magic)")
    version, ncell = struct.unpack("<HB", take(3))
    if version != PARAM_VERSION:
        raise ParamFormatError(f"unsupported parameter file version {version}")
    cell = bytes(take(ncell)).decode()
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (klen,) = struct.unpack("<H", take(2))
        name = bytes(take(klen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape))
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        arrays[name] = arr
    if pos != len(view):
        raise ParamFormatError("trailing bytes after parameter arrays")
    return NetParams(arrays, cell)


def save_params(p: NetParams, path) -> None:
    Path(path).write_bytes(params_to_bytes(p))


def load_params(path) -> NetParams:
    return params_from_bytes(Path(path).read_bytes())
