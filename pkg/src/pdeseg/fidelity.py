"""Data-fidelity losses and the composite objective.

Every loss returns ``(value, gradient)`` where the gradient is taken with
respect to the continuous field ``u``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .grid import GridSpec, as_field
from .priors import PFParams, RDParams, pf_energy, pf_energy_grad, rd_loss, rd_loss_grad

BCE_CLAMP = 1e-7
DICE_SMOOTH = 1.0


def as_mask(m, name: str = "mask") -> np.ndarray:
    """Validate a binary mask and return it as a ``uint8`` array of zeros and ones."""
    arr = np.asarray(m)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8)


def _check_pair(u, y) -> tuple[np.ndarray, np.ndarray]:
    u = as_field(u, "u")
    y = as_mask(y, "y")
    if u.shape != y.shape:
        raise ValueError(f"shape mismatch: field {u.shape} vs mask {y.shape}")
    return u, y.astype(np.float64)


@dataclass(frozen=True)
class CompositeWeights:
    lambda_rd: float = 0.0
    lambda_pf: float = 0.0

    def __post_init__(self):
        for name in ("lambda_rd", "lambda_pf"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted term values plus the weighted total.

    PDE terms whose weight is zero are not evaluated and are recorded as 0.
    """

    dice: float
    bce: float
    rd: float
    pf: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def bce_loss(u, y) -> tuple[float, np.ndarray]:
    u, y = _check_pair(u, y)
    uc = np.clip(u, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -np.mean(y * np.log(uc) + (1.0 - y) * np.log1p(-uc))
    grad = (uc - y) / (uc * (1.0 - uc)) / u.size
    # the clamp is flat outside [c, 1-c]
    grad[(u < BCE_CLAMP) | (u > 1.0 - BCE_CLAMP)] = 0.0
    return float(loss), grad


def soft_dice_loss(u, y) -> tuple[float, np.ndarray]:
    """``1 - (2 sum(u*y) + s) / (sum(u) + sum(y) + s)`` with smoothing ``s = 1``."""
    u, y = _check_pair(u, y)
    inter = float(np.sum(u * y))
    denom = float(np.sum(u) + np.sum(y)) + DICE_SMOOTH
    numer = 2.0 * inter + DICE_SMOOTH
    loss = 1.0 - numer / denom
    grad = -(2.0 * y * denom - numer) / denom**2
    return loss, grad


def composite_loss(
    u,
    y,
    w: CompositeWeights,
    rd: RDParams,
    pf: PFParams,
    g: GridSpec = GridSpec(),
) -> tuple[float, np.ndarray, LossBreakdown]:
    """Dice + BCE + lambda_rd * L_RD + lambda_pf * L_PF, with its gradient."""
    dice, g_dice = soft_dice_loss(u, y)
    bce, g_bce = bce_loss(u, y)
    total = dice + bce
    grad = g_dice + g_bce
    rd_val = pf_val = 0.0
    if w.lambda_rd > 0:
        rd_val = rd_loss(u, rd, g)
        total += w.lambda_rd * rd_val
        grad = grad + w.lambda_rd * rd_loss_grad(u, rd, g)
    if w.lambda_pf > 0:
        pf_val = pf_energy(u, pf, g)
        total += w.lambda_pf * pf_val
        grad = grad + w.lambda_pf * pf_energy_grad(u, pf, g)
    return total, grad, LossBreakdown(dice=dice, bce=bce, rd=rd_val, pf=pf_val, total=total)
