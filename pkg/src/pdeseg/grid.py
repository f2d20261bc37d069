"""Dense 2-D fields and the finite-difference operators the losses are built on.

Fields are plain ``numpy`` float64 arrays of shape ``(M, N)`` indexed as
``f[i, j]`` with ``i`` the row and ``j`` the column. Boundaries use
edge-duplication padding (index -1 maps to 0, -2 to 1, ...), which realises
zero normal flux and keeps the discrete Laplacian symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Grid spacing ``h`` for the stencils and cell factors ``dx``, ``dy`` for sums."""

    h: float = 1.0
    dx: float = 1.0
    dy: float = 1.0

    def __post_init__(self):
        for name in ("h", "dx", "dy"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"GridSpec.{name} must be a positive finite number, got {v!r}")

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy


def as_field(f, name: str = "field") -> np.ndarray:
    """Validate ``f`` as a finite 2-D array and return it as float64."""
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def reflect_index(k: np.ndarray, n: int) -> np.ndarray:
    """Map possibly out-of-range indices into ``[0, n)`` by edge-duplicating reflection."""
    k = np.asarray(k)
    period = 2 * n
    k = np.mod(k, period)
    return np.where(k < n, k, period - 1 - k)


def mirror_pad(f, width: int) -> np.ndarray:
    f = as_field(f)
    if int(width) != width or width < 1:
        raise ValueError(f"pad width must be a positive integer, got {width!r}")
    if width > min(f.shape):
        raise ValueError(f"pad width {width} exceeds field dimensions {f.shape}")
    return np.pad(f, int(width), mode="symmetric")


def _fold_matrix(n: int, width: int) -> np.ndarray:
    idx = reflect_index(np.arange(-width, n + width), n)
    m = np.zeros((n, n + 2 * width))
    m[idx, np.arange(n + 2 * width)] = 1.0
    return m


def mirror_pad_adjoint(g, width: int) -> np.ndarray:
    """Adjoint of :func:`mirror_pad`: fold padded-border values back onto the edges they copy.

    Works on the last two axes, so batched ``(..., M+2w, N+2w)`` arrays are accepted.
    """
    g = np.asarray(g, dtype=np.float64)
    if width == 1:
        r = g[..., 1:-1, :].copy()
        r[..., 0, :] += g[..., 0, :]
        r[..., -1, :] += g[..., -1, :]
        out = r[..., 1:-1].copy()
        out[..., 0] += r[..., 0]
        out[..., -1] += r[..., -1]
        return out
    h, w = g.shape[-2] - 2 * width, g.shape[-1] - 2 * width
    return _fold_matrix(h, width) @ g @ _fold_matrix(w, width).T


def laplacian(f, g: GridSpec = GridSpec()) -> np.ndarray:
    """Five-point Laplacian with Neumann (edge-duplication) boundaries."""
    p = mirror_pad(f, 1)
    c = p[1:-1, 1:-1]
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * c) / g.h**2


def grad_central(f, g: GridSpec = GridSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Central differences ``(dx_f, dy_f)``; ``dx`` runs along columns, ``dy`` along rows."""
    p = mirror_pad(f, 1)
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * g.h)
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * g.h)
    return gx, gy


def grad_central_adjoint(gx, gy, g: GridSpec = GridSpec()) -> np.ndarray:
    """Transpose of the linear map ``f -> grad_central(f)`` applied to ``(gx, gy)``."""
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    m, n = gx.shape
    p = np.zeros((m + 2, n + 2))
    s = 1.0 / (2.0 * g.h)
    p[1:-1, 2:] += s * gx
    p[1:-1, :-2] -= s * gx
    p[2:, 1:-1] += s * gy
    p[:-2, 1:-1] -= s * gy
    return mirror_pad_adjoint(p, 1)


def grad_mag_sq(f, g: GridSpec = GridSpec()) -> np.ndarray:
    gx, gy = grad_central(f, g)
    return gx * gx + gy * gy
