"""Direct variational solve of a single segmentation field.

The field is parameterised as ``u = sigmoid(z)`` and ``z`` is optimised with
Adam on the composite objective. Stage 1 uses only the data terms, stage 2
switches the PDE priors on with the configured weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fidelity import CompositeWeights, LossBreakdown, as_mask, composite_loss
from .grid import GridSpec
from .priors import PFParams, RDParams

LOG_COLUMNS = ("iter", "stage", "dice", "bce", "rd", "pf", "total")
NO_PRIORS = CompositeWeights(0.0, 0.0)


class DivergenceError(RuntimeError):
    """Raised when the objective becomes non-finite; ``where`` names the iteration or epoch."""

    def __init__(self, message: str, where: int):
        super().__init__(message)
        self.where = where


@dataclass(frozen=True)
class SolveConfig:
    stage1_iters: int = 300
    stage2_iters: int = 300
    step_size: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: CompositeWeights = CompositeWeights(0.1, 0.1)
    rd: RDParams = RDParams()
    pf: PFParams = PFParams()
    seed: int = 0
    init: str = "zeros"
    init_sigma: float = 0.1

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.stage1_iters + self.stage2_iters == 0:
            raise ValueError("stage1_iters and stage2_iters cannot both be 0")
        if self.step_size <= 0 or self.adam_eps <= 0:
            raise ValueError("step_size and adam_eps must be > 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError(f"Adam betas must lie in (0, 1), got {b!r}")
        if self.init not in ("zeros", "noisy"):
            raise ValueError(f"init must be 'zeros' or 'noisy', got {self.init!r}")
        if self.init_sigma < 0:
            raise ValueError("init_sigma must be >= 0")


@dataclass
class OptState:
    """Adam first/second moment estimates."""

    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros_like(cls, x: np.ndarray) -> "OptState":
        return cls(np.zeros_like(x, dtype=np.float64), np.zeros_like(x, dtype=np.float64))


def adam_update(state: OptState, grad, cfg, t: int) -> tuple[OptState, np.ndarray]:
    """One bias-corrected Adam step; returns the new state and the parameter delta.

    ``cfg`` is anything exposing ``step_size``, ``adam_beta1``, ``adam_beta2``
    and ``adam_eps``.
    """
    if t < 1:
        raise ValueError("Adam iteration counter starts at 1")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state {state.m.shape}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    delta = -cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return OptState(m, v), delta


def sigmoid(z):
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class SolveReport:
    final_field: np.ndarray
    loss_log: list[LossBreakdown] = field(default_factory=list)
    stage_boundary: int = 0

    def stage_of(self, it: int) -> int:
        return 1 if it < self.stage_boundary else 2

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for it, b in enumerate(self.loss_log):
                w.writerow([it, self.stage_of(it)] + [f"{x:.6g}" for x in (b.dice, b.bce, b.rd, b.pf, b.total)])


def _initial_latent(shape, cfg: SolveConfig) -> np.ndarray:
    if cfg.init == "zeros":
        return np.zeros(shape)
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, cfg.init_sigma, size=shape)


def solve_variational(target, cfg: SolveConfig, grid: GridSpec = GridSpec()) -> SolveReport:
    """Fit ``u = sigmoid(z)`` to ``target`` under the two-stage composite objective.

    Raises :class:`DivergenceError` if the loss becomes non-finite.
    """
    y = as_mask(target, "target")
    z = _initial_latent(y.shape, cfg)
    state = OptState.zeros_like(z)
    log: list[LossBreakdown] = []
    schedule = [NO_PRIORS] * cfg.stage1_iters + [cfg.weights] * cfg.stage2_iters
    for it, weights in enumerate(schedule):
        u = sigmoid(z)
        total, g_u, parts = composite_loss(u, y, weights, cfg.rd, cfg.pf, grid)
        if not np.isfinite(total) or not np.all(np.isfinite(g_u)):
            raise DivergenceError(f"non-finite loss at iteration {it}", it)
        log.append(parts)
        state, delta = adam_update(state, g_u * u * (1.0 - u), cfg, it + 1)
        z = z + delta
    return SolveReport(final_field=sigmoid(z), loss_log=log, stage_boundary=cfg.stage1_iters)
