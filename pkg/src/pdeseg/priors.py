"""Physics priors on the segmentation field.

Two regularizers, each with its value and exact gradient:

* steady-state reaction-diffusion residual ``D * lap(u) + u(1-u)(u-a)``,
  penalised by its mean square;
* phase-field interface energy ``sum (eps/2)|grad u|^2 + W(u)/eps`` with the
  double well ``W(u) = u^2 (1-u)^2``.

Gradients are the exact reverse-mode derivatives of the discrete forward
formulas, padding included, so they agree with finite differences of the
losses themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, as_field, grad_central, grad_central_adjoint, laplacian


@dataclass(frozen=True)
class RDParams:
    D: float = 5.0
    a: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.D) and self.D > 0):
            raise ValueError(f"diffusion coefficient D must be > 0, got {self.D!r}")
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"reaction threshold a must lie in (0, 1), got {self.a!r}")


PF_MODES = ("mean", "raw_sum")


@dataclass(frozen=True)
class PFParams:
    eps: float = 1.5
    mode: str = "mean"

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"interface width eps must be > 0, got {self.eps!r}")
        if self.mode not in PF_MODES:
            raise ValueError(f"mode must be one of {PF_MODES}, got {self.mode!r}")


def reaction(u, a: float) -> np.ndarray:
    u = as_field(u, "u")
    return u * (1.0 - u) * (u - a)


def reaction_prime(u, a: float) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return (1.0 - 2.0 * u) * (u - a) + u * (1.0 - u)


def rd_residual(u, p: RDParams, g: GridSpec = GridSpec()) -> np.ndarray:
    return p.D * laplacian(u, g) + reaction(u, p.a)


def rd_loss(u, p: RDParams, g: GridSpec = GridSpec()) -> float:
    """Mean squared reaction-diffusion residual."""
    r = rd_residual(u, p, g)
    return float(np.mean(r * r))


def rd_loss_grad(u, p: RDParams, g: GridSpec = GridSpec()) -> np.ndarray:
    u = as_field(u, "u")
    r = rd_residual(u, p, g)
    # the edge-duplicated Laplacian is symmetric, so it is its own adjoint
    return (2.0 / u.size) * (p.D * laplacian(r, g) + reaction_prime(u, p.a) * r)


def double_well(u) -> np.ndarray:
    u = as_field(u, "u")
    return u * u * (1.0 - u) ** 2


def double_well_prime(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return 2.0 * u * (1.0 - u) * (1.0 - 2.0 * u)


def _pf_scale(u: np.ndarray, p: PFParams, g: GridSpec) -> float:
    scale = g.cell_area
    if p.mode == "mean":
        scale /= u.size
    return scale


def pf_terms(u, p: PFParams, g: GridSpec = GridSpec()) -> tuple[float, float]:
    """Return the (gradient, well) contributions to :func:`pf_energy` separately."""
    u = as_field(u, "u")
    gx, gy = grad_central(u, g)
    scale = _pf_scale(u, p, g)
    grad_term = 0.5 * p.eps * float(np.sum(gx * gx + gy * gy)) * scale
    well_term = float(np.sum(double_well(u))) / p.eps * scale
    return grad_term, well_term


def pf_energy(u, p: PFParams, g: GridSpec = GridSpec()) -> float:
    grad_term, well_term = pf_terms(u, p, g)
    return grad_term + well_term


def pf_energy_grad(u, p: PFParams, g: GridSpec = GridSpec()) -> np.ndarray:
    u = as_field(u, "u")
    gx, gy = grad_central(u, g)
    smooth = p.eps * grad_central_adjoint(gx, gy, g)
    return (smooth + double_well_prime(u) / p.eps) * _pf_scale(u, p, g)
