"""Overlap and boundary metrics on binary masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fidelity import as_mask
from .grid import as_field


@dataclass(frozen=True)
class BoundaryParams:
    eta: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be > 0, got {self.eta!r}")


def binarize(u, tau: float = 0.5) -> np.ndarray:
    """Foreground where ``u >= tau``."""
    return (as_field(u, "u") >= tau).astype(np.uint8)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = as_mask(pred, "pred").astype(bool)
    g = as_mask(gt, "gt").astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def dice(pred, gt) -> float:
    p, g = _pair(pred, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(p & g)) / total


def iou(pred, gt) -> float:
    p, g = _pair(pred, gt)
    union = int(np.count_nonzero(p | g))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(p & g)) / union


def boundary_pixels(m) -> np.ndarray:
    """Boolean mask of foreground pixels with a 4-neighbour that is background or off-frame."""
    fg = as_mask(m).astype(bool)
    padded = np.pad(fg, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return fg & ~interior


def _matched_fraction(src: np.ndarray, dst: np.ndarray, eta: float) -> float:
    # distance from every pixel centre to the nearest dst boundary pixel
    dist = ndimage.distance_transform_edt(~dst)
    return float(np.count_nonzero(dist[src] <= eta)) / int(src.sum())


def boundary_f1(pred, gt, p: BoundaryParams = BoundaryParams()) -> tuple[float, float, float]:
    """Boundary precision, recall and F1 at Euclidean tolerance ``p.eta``.

    Both boundaries empty scores (1, 1, 1); exactly one empty scores (0, 0, 0).
    """
    pm, gm = _pair(pred, gt)
    bp, bg = boundary_pixels(pm), boundary_pixels(gm)
    np_, ng = int(bp.sum()), int(bg.sum())
    if np_ == 0 and ng == 0:
        return 1.0, 1.0, 1.0
    if np_ == 0 or ng == 0:
        return 0.0, 0.0, 0.0
    precision = _matched_fraction(bp, bg, p.eta)
    recall = _matched_fraction(bg, bp, p.eta)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def evaluate_masks(pred, gt, p: BoundaryParams = BoundaryParams()) -> dict[str, float]:
    """Dice, IoU and boundary F1 for one prediction."""
    return {"dice": dice(pred, gt), "iou": iou(pred, gt), "boundary_f1": boundary_f1(pred, gt, p)[2]}
