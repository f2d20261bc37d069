"""Two-stage minibatch training of the predictor."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..fidelity import CompositeWeights
from ..grid import GridSpec
from ..metrics import binarize, dice
from ..priors import PFParams, RDParams
from ..solver import NO_PRIORS, DivergenceError, OptState, adam_update
from .network import ArchConfig, ParamSet, batch_loss_and_grad, forward_batch, init_params

TRAIN_LOG_COLUMNS = ("epoch", "stage", "dice", "bce", "rd", "pf", "total", "val_dice")


@dataclass(frozen=True)
class TrainConfig:
    epochs_stage1: int = 50
    epochs_stage2: int = 50
    batch_size: int = 4
    step_size: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: CompositeWeights = CompositeWeights(0.1, 0.1)
    rd: RDParams = RDParams()
    pf: PFParams = PFParams()
    seed: int = 0

    def __post_init__(self):
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.epochs_stage1 + self.epochs_stage2 == 0:
            raise ValueError("epochs_stage1 and epochs_stage2 cannot both be 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.step_size <= 0 or self.adam_eps <= 0:
            raise ValueError("step_size and adam_eps must be > 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError(f"Adam betas must lie in (0, 1), got {b!r}")


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    dice: float
    bce: float
    rd: float
    pf: float
    total: float
    val_dice: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    # parameters at the end of stage 1 (the stage-2 starting point)
    stage1_params: ParamSet | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAIN_LOG_COLUMNS)
            for r in self.epochs:
                vals = (r.dice, r.bce, r.rd, r.pf, r.total, r.val_dice)
                w.writerow([r.epoch, r.stage] + [f"{v:.6g}" for v in vals])


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def mean_dice(images, masks, params: ParamSet, arch: ArchConfig) -> float:
    if len(images) == 0:
        return float("nan")
    u = forward_batch(np.stack(images), params, arch)
    return float(np.mean([dice(binarize(ui), m) for ui, m in zip(u, masks)]))


def train(
    corpus,
    cfg: TrainConfig,
    arch: ArchConfig,
    grid: GridSpec = GridSpec(),
    init: ParamSet | None = None,
) -> tuple[ParamSet, TrainLog]:
    """Train on ``corpus.split("train")``; validation Dice uses ``corpus.split("val")``.

    Stage 1 optimises Dice + BCE only. Stage 2 continues from the stage-1
    parameters and optimiser state with the PDE priors weighted by
    ``cfg.weights``. Raises :class:`DivergenceError` carrying the epoch index.
    """
    train_set = corpus.split("train")
    if not train_set:
        raise ValueError("corpus has no training samples")
    images = np.stack([s.image for s in train_set])
    masks = np.stack([s.mask for s in train_set])
    arch.check_dims(images.shape)
    val = corpus.split("val")
    val_images = [s.image for s in val]
    val_masks = [s.mask for s in val]

    params = init if init is not None else init_params(arch, int(_rng(cfg.seed, 0).integers(2**31)))
    theta = params.flat()
    state = OptState.zeros_like(theta)
    drop_rng = _rng(cfg.seed, 2) if arch.dropout_rate > 0 else None
    log = TrainLog()
    t = 0
    n = len(images)
    schedule = [(1, NO_PRIORS)] * cfg.epochs_stage1 + [(2, cfg.weights)] * cfg.epochs_stage2
    for epoch, (stage, weights) in enumerate(schedule):
        if stage == 2 and log.stage1_params is None:
            log.stage1_params = params.with_flat(theta)
        order = _rng(cfg.seed, 1, epoch).permutation(n)
        sums = np.zeros(5)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            current = params.with_flat(theta)
            loss, grads, parts = batch_loss_and_grad(
                images[idx], masks[idx], current, arch, weights, cfg.rd, cfg.pf, grid, drop_rng
            )
            g = grads.flat()
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite loss in epoch {epoch}", epoch)
            t += 1
            state, delta = adam_update(state, g, cfg, t)
            theta = theta + delta
            sums += len(idx) * np.array([parts.dice, parts.bce, parts.rd, parts.pf, parts.total])
        params = params.with_flat(theta)
        means = sums / n
        log.epochs.append(
            EpochRecord(epoch, stage, *map(float, means), mean_dice(val_images, val_masks, params, arch))
        )
    if log.stage1_params is None:
        log.stage1_params = params.with_flat(theta)
    return params.with_flat(theta), log
