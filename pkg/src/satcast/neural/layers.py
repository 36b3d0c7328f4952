"""3x3 same-padding convolution and pointwise activations.

Activations are laid out channel-major, ``(C, N, H, W)``, so that the
im2col matrix of a batch is one contiguous ``(C*9, N*H*W)`` block and the
convolution is a single matmul with no transposes on either pass.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class ShapeError(ValueError):
    pass


class ConvLayerParams(NamedTuple):
    kernels: np.ndarray  # (out_ch, in_ch, 3, 3)
    bias: np.ndarray  # (out_ch,)


def im2col(x: np.ndarray) -> np.ndarray:
    """(C, N, H, W) -> (C*9, N*H*W), zero border."""
    c, n, h, w = x.shape
    xp = np.zeros((c, n, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((c, 3, 3, n, h, w), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(c * 9, n * h * w)


def col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Adjoint of :func:`im2col`."""
    c, n, h, w = shape
    dcols = dcols.reshape(c, 3, 3, n, h, w)
    dxp = np.zeros((c, n, h + 2, w + 2), dtype=dcols.dtype)
    for dy in range(3):
        for dx in range(3):
            dxp[:, :, dy : dy + h, dx : dx + w] += dcols[:, dy, dx]
    return dxp[:, :, 1:-1, 1:-1]


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[:, None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (C, H, W) or (C, N, H, W), got {x.shape}")


def _check(x: np.ndarray, p: ConvLayerParams):
    if p.kernels.ndim != 4 or p.kernels.shape[2:] != (3, 3):
        raise ShapeError(f"kernels must be (out, in, 3, 3), got {p.kernels.shape}")
    if x.shape[0] != p.kernels.shape[1]:
        raise ShapeError(
            f"input has {x.shape[0]} channels, kernels expect {p.kernels.shape[1]}"
        )


def conv_cols(cols: np.ndarray, p: ConvLayerParams, shape) -> np.ndarray:
    """Convolution given precomputed im2col columns; ``shape`` is (N, H, W)."""
    out_ch = p.kernels.shape[0]
    out = p.kernels.reshape(out_ch, -1) @ cols
    out += p.bias[:, None]
    return out.reshape((out_ch,) + tuple(shape))


def conv2d_forward(x: np.ndarray, p: ConvLayerParams) -> np.ndarray:
    """Same-padding 3x3 cross-correlation plus bias.

    ``x`` is ``(C_in, H, W)`` or batched ``(C_in, N, H, W)``; the result has
    the same rank with ``C_out`` leading channels.
    """
    xb, single = _as_batched(x)
    _check(xb, p)
    out = conv_cols(im2col(xb), p, xb.shape[1:])
    return out[:, 0] if single else out


def conv_backward_cols(
    cols: np.ndarray, kernels: np.ndarray, grad: np.ndarray, in_shape, need_dx=True
):
    """Gradients of a conv given its cached columns.

    Returns ``(dx, dkernels, dbias)``; ``dx`` is None when not requested.
    """
    out_ch = kernels.shape[0]
    g2 = grad.reshape(out_ch, -1)
    dk = (g2 @ cols.T).reshape(kernels.shape)
    db = g2.sum(axis=1)
    dx = None
    if need_dx:
        dx = col2im(kernels.reshape(out_ch, -1).T @ g2, in_shape)
    return dx, dk, db


def conv2d_backward(x: np.ndarray, p: ConvLayerParams, upstream: np.ndarray):
    """Return ``(grad_x, ConvLayerParams(grad_kernels, grad_bias))``."""
    xb, single = _as_batched(x)
    _check(xb, p)
    gb = upstream[:, None] if single else upstream
    expected = (p.kernels.shape[0],) + xb.shape[1:]
    if gb.shape != expected:
        raise ShapeError(f"upstream gradient {upstream.shape} does not match output")
    dx, dk, db = conv_backward_cols(im2col(xb), p.kernels, gb, xb.shape)
    return (dx[:, 0] if single else dx), ConvLayerParams(dk, db)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for large |x| and saturates to exact 0/1
    return 0.5 * (1.0 + np.tanh(0.5 * x))
