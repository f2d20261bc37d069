"""Batched layer primitives with hand-written reverse passes.

Activations are ``(B, C, H, W)`` float64 arrays. Each ``*_forward`` returns
its output together with whatever the matching ``*_backward`` needs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..grid import mirror_pad_adjoint


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-size convolution (cross-correlation) with edge-duplication padding.

    ``w`` has shape ``(C_out, C_in, k, k)`` with odd ``k``.
    """
    k = w.shape[-1]
    pad = k // 2
    bsz, _, h, wd = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="symmetric")
    # cols: (B, H, W, C_in * k * k)
    cols = sliding_window_view(x, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
    cols = np.ascontiguousarray(cols).reshape(bsz * h * wd, -1)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    out = out.reshape(bsz, h, wd, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    """Return ``(dx, dw, db)`` for :func:`conv_forward`."""
    c_out, c_in, k, _ = w.shape
    pad = k // 2
    bsz, _, h, wd = x_shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(c_out, -1)).reshape(bsz, h, wd, c_in, k, k)
    dxp = np.zeros((bsz, c_in, h + 2 * pad, wd + 2 * pad))
    for di in range(k):
        for dj in range(k):
            dxp[:, :, di:di + h, dj:dj + wd] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    dx = mirror_pad_adjoint(dxp, pad) if pad else dxp
    return dx, dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout: np.ndarray, active: np.ndarray) -> np.ndarray:
    return dout * active


def maxpool_forward(x: np.ndarray):
    """2x2 max-pool; ties go to the first window entry in row-major order."""
    bsz, c, h, w = x.shape
    win = x.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h // 2, w // 2, 4)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray) -> np.ndarray:
    bsz, c, h2, w2 = dout.shape
    win = np.zeros((bsz, c, h2, w2, 4))
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
    return win.reshape(bsz, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, 2 * h2, 2 * w2)


def upsample_forward(x: np.ndarray) -> np.ndarray:
    """2x nearest-neighbour upsampling."""
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_backward(dout: np.ndarray) -> np.ndarray:
    bsz, c, h, w = dout.shape
    return dout.reshape(bsz, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
