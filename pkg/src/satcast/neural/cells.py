"""Convolutional GRU and LSTM cells with exact backward passes.

Both cells convolve the channel concatenation ``[x; h]``. The concatenation
is never materialized: the kernel is split column-wise into its x and h
parts, which lets zero inputs (forecast unroll) and zero initial states skip
their half of the work entirely. ``None`` stands for an all-zero tensor.

GRU:  z, r = sigmoid(conv([x; h]));  c = tanh(conv([x; r*h]))
      h' = (1 - z) * h + z * c
LSTM: i, f, o = sigmoid(conv([x; h]));  g = tanh(conv([x; h]))
      c' = f * c + i * g;  h' = o * tanh(c')
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .layers import ShapeError, col2im, im2col, sigmoid


class ConvGRUCellParams(NamedTuple):
    w_gates: np.ndarray  # (2*Ch, Cx+Ch, 3, 3), update gate then reset gate
    b_gates: np.ndarray  # (2*Ch,)
    w_cand: np.ndarray  # (Ch, Cx+Ch, 3, 3)
    b_cand: np.ndarray  # (Ch,)

    @property
    def hidden(self) -> int:
        return self.b_cand.shape[0]


class ConvLSTMCellParams(NamedTuple):
    w_gates: np.ndarray  # (4*Ch, Cx+Ch, 3, 3), order i, f, o, g
    b_gates: np.ndarray  # (4*Ch,)

    @property
    def hidden(self) -> int:
        return self.b_gates.shape[0] // 4


def _split(w: np.ndarray, cx: int):
    w2 = w.reshape(w.shape[0], -1)
    return w2[:, : cx * 9], w2[:, cx * 9 :]


def _input_channels(p) -> int:
    return p.w_gates.shape[1] - p.hidden


def _preact(w, b, cols_x, cols_h, cx, shape):
    wx, wh = _split(w, cx)
    out = np.broadcast_to(b[:, None], (w.shape[0], int(np.prod(shape)))).copy()
    if cols_x is not None:
        out += wx @ cols_x
    if cols_h is not None:
        out += wh @ cols_h
    return out.reshape((w.shape[0],) + tuple(shape))


def _check_state(p, x, h):
    ch, cx = p.hidden, _input_channels(p)
    if x is not None and x.shape[0] != cx:
        raise ShapeError(f"input has {x.shape[0]} channels, cell expects {cx}")
    if h is not None and h.shape[0] != ch:
        raise ShapeError(f"state has {h.shape[0]} channels, cell expects {ch}")
    if x is not None and h is not None and x.shape[1:] != h.shape[1:]:
        raise ShapeError("input and state spatial shapes differ")


def gru_forward(p: ConvGRUCellParams, x, h, shape):
    """One batched GRU step. ``shape`` is (N, H, W). Returns (h_next, cache)."""
    _check_state(p, x, h)
    cx, ch = _input_channels(p), p.hidden
    cols_x = im2col(x) if x is not None else None
    cols_h = im2col(h) if h is not None else None
    gates = sigmoid(_preact(p.w_gates, p.b_gates, cols_x, cols_h, cx, shape))
    z, r = gates[:ch], gates[ch:]
    cols_rh = im2col(r * h) if h is not None else None
    c = np.tanh(_preact(p.w_cand, p.b_cand, cols_x, cols_rh, cx, shape))
    if h is None:
        h_next = z * c
    else:
        h_next = (1 - z) * h + z * c
    return h_next, (x, h, z, r, c, cols_x, cols_h, cols_rh)


def gru_backward(p: ConvGRUCellParams, cache, dh_next, grads, need_dx=True):
    """Accumulate parameter grads into ``grads`` (a ConvGRUCellParams of
    arrays); return (dx, dh)."""
    x, h, z, r, c, cols_x, cols_h, cols_rh = cache
    cx, ch = _input_channels(p), p.hidden
    shape = z.shape[1:]
    dz = dh_next * (c if h is None else c - h)
    da_c = dh_next * z * (1 - c * c)
    dh = dh_next * (1 - z) if h is not None else None

    wcx, wch = _split(p.w_cand, cx)
    gwcx, gwch = _split(grads.w_cand, cx)
    g2 = da_c.reshape(ch, -1)
    grads.b_cand[...] += g2.sum(axis=1)
    dcols_x = None
    if cols_x is not None:
        gwcx += g2 @ cols_x.T
        dcols_x = wcx.T @ g2
    if h is not None:
        gwch += g2 @ cols_rh.T
        drh = col2im(wch.T @ g2, (ch,) + shape)
        dr = drh * h
        dh += drh * r
    else:
        dr = np.zeros_like(r)

    da_g = np.concatenate([dz * z * (1 - z), dr * r * (1 - r)])
    wgx, wgh = _split(p.w_gates, cx)
    ggx, ggh = _split(grads.w_gates, cx)
    g2 = da_g.reshape(2 * ch, -1)
    grads.b_gates[...] += g2.sum(axis=1)
    if cols_x is not None:
        ggx += g2 @ cols_x.T
        dcols_x = dcols_x + wgx.T @ g2
    if h is not None:
        ggh += g2 @ cols_h.T
        dh += col2im(wgh.T @ g2, (ch,) + shape)

    dx = None
    if need_dx and cols_x is not None:
        dx = col2im(dcols_x, (cx,) + shape)
    return dx, dh


def lstm_forward(p: ConvLSTMCellParams, x, h, c, shape):
    """One batched LSTM step. Returns (h_next, c_next, cache)."""
    _check_state(p, x, h)
    cx, ch = _input_channels(p), p.hidden
    cols_x = im2col(x) if x is not None else None
    cols_h = im2col(h) if h is not None else None
    a = _preact(p.w_gates, p.b_gates, cols_x, cols_h, cx, shape)
    ifo = sigmoid(a[: 3 * ch])
    i, f, o = ifo[:ch], ifo[ch : 2 * ch], ifo[2 * ch :]
    g = np.tanh(a[3 * ch :])
    c_next = i * g if c is None else f * c + i * g
    tc = np.tanh(c_next)
    h_next = o * tc
    return h_next, c_next, (h, c, i, f, o, g, tc, cols_x, cols_h)


def lstm_backward(p: ConvLSTMCellParams, cache, dh_next, dc_next, grads, need_dx=True):
    """Accumulate parameter grads; return (dx, dh, dc)."""
    h, c, i, f, o, g, tc, cols_x, cols_h = cache
    cx, ch = _input_channels(p), p.hidden
    shape = i.shape[1:]
    do = dh_next * tc
    dcn = dh_next * o * (1 - tc * tc)
    if dc_next is not None:
        dcn = dcn + dc_next
    df = dcn * c if c is not None else np.zeros_like(f)
    dc = dcn * f if c is not None else None
    da = np.concatenate(
        [
            dcn * g * i * (1 - i),
            df * f * (1 - f),
            do * o * (1 - o),
            dcn * i * (1 - g * g),
        ]
    )
    wgx, wgh = _split(p.w_gates, cx)
    ggx, ggh = _split(grads.w_gates, cx)
    g2 = da.reshape(4 * ch, -1)
    grads.b_gates[...] += g2.sum(axis=1)
    dx = dh = None
    if cols_x is not None:
        ggx += g2 @ cols_x.T
        if need_dx:
            dx = col2im(wgx.T @ g2, (cx,) + shape)
    if cols_h is not None:
        ggh += g2 @ cols_h.T
        dh = col2im(wgh.T @ g2, (ch,) + shape)
    return dx, dh, dc


def _batched(a):
    if a is None:
        return None, False
    if a.ndim == 3:
        return a[:, None], True
    return a, False


def _spatial(x, h):
    ref = x if x is not None else h
    if ref is None:
        raise ShapeError("at least one of input or state must be given")
    return ref.shape[1:]


def convgru_step(x, h, p: ConvGRUCellParams):
    """h_next for a ``(C, H, W)`` or ``(C, N, H, W)`` input/state pair."""
    xb, single = _batched(x)
    hb, hsingle = _batched(h)
    single = single or hsingle
    h_next, _ = gru_forward(p, xb, hb, _spatial(xb, hb))
    return h_next[:, 0] if single else h_next


def convlstm_step(x, h, c, p: ConvLSTMCellParams):
    """(h_next, c_next) for one LSTM step; same shape conventions as GRU."""
    xb, single = _batched(x)
    hb, hsingle = _batched(h)
    cb, _ = _batched(c)
    single = single or hsingle
    h_next, c_next, _ = lstm_forward(p, xb, hb, cb, _spatial(xb, hb))
    if single:
        return h_next[:, 0], c_next[:, 0]
    return h_next, c_next
