"""Experiment orchestration: data-fraction sweeps, constraint ablations, parameter sweeps.

Every (fraction, sweep value, seed) cell trains one model. Stage-1 metrics
come from the parameters at the end of stage 1 of that same run, so the
stage-1 and stage-2 rows of a cell always share their baseline.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .grid import GridSpec
from .metrics import BoundaryParams, binarize, evaluate_masks
from .predictor import ArchConfig, ParamSet, TrainConfig, forward_batch, train
from .solver import DivergenceError

CONSTRAINTS = ("baseline", "rd_only", "pf_only", "rd_pf")
SWEEP_AXES = ("none", "a", "D", "eps", "lambda_rd", "lambda_pf")
METRICS = ("dice", "iou", "boundary_f1")
EVAL_SPLITS = ("test_in", "test_ood")
ROW_COLUMNS = ("constraint", "fraction", "sweep_param", "sweep_value", "split", "metric", "stage", "seed", "value")

# default value grids for the a, D and eps sensitivity sweeps
DEFAULT_SWEEPS = {
    "a": (0.3, 0.4, 0.5, 0.6, 0.7),
    "D": (0.5, 1.0, 2.0, 5.0, 10.0, 100.0),
    "eps": (0.001, 0.01, 0.05, 0.1, 0.2),
}


@dataclass(frozen=True)
class ExperimentSpec:
    constraint: str = "rd_pf"
    fractions: tuple[float, ...] = (10, 25, 50, 75, 100)
    sweep_param: str = "none"
    sweep_values: tuple[float, ...] = ()
    repeats: int = 1
    metrics: tuple[str, ...] = METRICS
    splits: tuple[str, ...] = EVAL_SPLITS
    eta: float = 2.0

    def __post_init__(self):
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}, got {self.constraint!r}")
        if not self.fractions or any(not 0 < f <= 100 for f in self.fractions):
            raise ValueError("fractions must be a nonempty list of percentages in (0, 100]")
        if self.sweep_param not in SWEEP_AXES:
            raise ValueError(f"sweep_param must be one of {SWEEP_AXES}, got {self.sweep_param!r}")
        if self.sweep_param != "none" and not self.sweep_values:
            raise ValueError(f"sweep over {self.sweep_param!r} needs sweep_values")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.metrics or any(m not in METRICS for m in self.metrics):
            raise ValueError(f"metrics must be a nonempty subset of {METRICS}")
        if not self.splits or any(s not in EVAL_SPLITS for s in self.splits):
            raise ValueError(f"splits must be a nonempty subset of {EVAL_SPLITS}")

    @property
    def stages(self) -> tuple[int, ...]:
        return (1,) if self.constraint == "baseline" else (1, 2)

    def values(self) -> tuple:
        return tuple(self.sweep_values) if self.sweep_param != "none" else (None,)

    def expected_rows(self) -> int:
        return (len(self.fractions) * len(self.values()) * self.repeats
                * len(self.metrics) * len(self.splits) * len(self.stages))


@dataclass(frozen=True)
class ResultRow:
    constraint: str
    fraction: float
    sweep_param: str
    sweep_value: float | None
    split: str
    metric: str
    stage: int
    seed: int
    value: float
    diverged: bool = False

    def csv_fields(self) -> list[str]:
        return [
            self.constraint,
            _fmt(self.fraction),
            self.sweep_param,
            "" if self.sweep_value is None else _fmt(self.sweep_value),
            self.split,
            self.metric,
            str(self.stage),
            str(self.seed),
            _fmt(self.value),
        ]


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.6g}"


def configure(spec: ExperimentSpec, cfg: TrainConfig, value, seed: int) -> TrainConfig:
    """Training config for one cell: constraint switches, sweep override, seed."""
    w = cfg.weights
    rd, pf = cfg.rd, cfg.pf
    axis = spec.sweep_param
    if axis == "a":
        rd = replace(rd, a=value)
    elif axis == "D":
        rd = replace(rd, D=value)
    elif axis == "eps":
        pf = replace(pf, eps=value)
    elif axis == "lambda_rd":
        w = replace(w, lambda_rd=value)
    elif axis == "lambda_pf":
        w = replace(w, lambda_pf=value)
    if spec.constraint == "rd_only":
        w = replace(w, lambda_pf=0.0)
    elif spec.constraint == "pf_only":
        w = replace(w, lambda_rd=0.0)
    epochs2 = 0 if spec.constraint == "baseline" else cfg.epochs_stage2
    return replace(cfg, weights=w, rd=rd, pf=pf, seed=seed, epochs_stage2=epochs2)


def evaluate_split(samples, params: ParamSet, arch: ArchConfig, eta: float = 2.0) -> list[dict[str, float]]:
    """Per-image metric dicts for ``samples``."""
    if not samples:
        return []
    u = forward_batch(np.stack([s.image for s in samples]), params, arch)
    bp = BoundaryParams(eta)
    return [evaluate_masks(binarize(ui), s.mask, bp) for ui, s in zip(u, samples)]


def _run_cell(args) -> list[ResultRow]:
    spec, corpus, base_cfg, arch, grid, fraction, value, seed = args
    cfg = configure(spec, base_cfg, value, seed)
    sub = corpus.with_train_fraction(fraction / 100.0)
    try:
        final, log = train(sub, cfg, arch, grid)
        by_stage = {1: log.stage1_params, 2: final}
        scores = {
            (split, stage): evaluate_split(corpus.split(split), by_stage[stage], arch, spec.eta)
            for split in spec.splits
            for stage in spec.stages
        }
        diverged = False
    except DivergenceError:
        scores, diverged = {}, True
    rows = []
    for split in spec.splits:
        for metric in spec.metrics:
            for stage in spec.stages:
                if diverged:
                    value_ = float("nan")
                else:
                    value_ = float(np.mean([s[metric] for s in scores[(split, stage)]]))
                rows.append(ResultRow(spec.constraint, fraction, spec.sweep_param, value,
                                      split, metric, stage, seed, value_, diverged))
    return rows


def run_experiment(
    spec: ExperimentSpec,
    corpus,
    train_cfg: TrainConfig,
    arch: ArchConfig,
    grid: GridSpec = GridSpec(),
    jobs: int = 1,
) -> list[ResultRow]:
    """Train and evaluate every cell; seeds are ``train_cfg.seed + k`` for ``k < spec.repeats``.

    Divergent cells produce rows with ``value = nan`` and ``diverged = True``.
    Row order is fixed by the cell enumeration, independent of ``jobs``.
    """
    for split in spec.splits:
        if not corpus.split(split):
            raise ValueError(f"corpus split {split!r} is empty")
    seeds = [train_cfg.seed + k for k in range(spec.repeats)]
    cells = [
        (spec, corpus, train_cfg, arch, grid, f, v, s)
        for f, v, s in itertools.product(spec.fractions, spec.values(), seeds)
    ]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_cell, cells))
    else:
        chunks = [_run_cell(c) for c in cells]
    return [row for chunk in chunks for row in chunk]


def improvement(stage1: float, stage2: float) -> float | None:
    """Relative change in percent; ``None`` when the stage-1 value is not positive."""
    if not stage1 > 0:
        return None
    return 100.0 * (stage2 - stage1) / stage1


def summarize(rows: list[ResultRow]) -> tuple[list[str], list[dict]]:
    """Wide summary, one line per (constraint, fraction, sweep value).

    For each metric/split pair present: stage means and population standard
    deviations over seeds, plus the stage-2-over-stage-1 improvement of the means.
    Divergent rows are excluded from the statistics.
    """
    keys: dict[tuple, None] = {}
    pairs: dict[tuple[str, str], None] = {}
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        key = (r.constraint, r.fraction, r.sweep_param, r.sweep_value)
        keys.setdefault(key)
        pairs.setdefault((r.metric, r.split))
        if not r.diverged:
            groups.setdefault(key + (r.metric, r.split, r.stage), []).append(r.value)
    columns = ["constraint", "fraction", "sweep_param", "sweep_value"]
    for metric, split in pairs:
        p = f"{metric}_{split}"
        columns += [f"{p}_s1_mean", f"{p}_s1_std", f"{p}_s2_mean", f"{p}_s2_std", f"{p}_improvement"]
    table = []
    for key in keys:
        line = dict(zip(columns[:4], key))
        for metric, split in pairs:
            p = f"{metric}_{split}"
            stats = {}
            for stage in (1, 2):
                vals = groups.get(key + (metric, split, stage))
                stats[stage] = (float(np.mean(vals)), float(np.std(vals))) if vals else (None, None)
            line[f"{p}_s1_mean"], line[f"{p}_s1_std"] = stats[1]
            line[f"{p}_s2_mean"], line[f"{p}_s2_std"] = stats[2]
            s1, s2 = stats[1][0], stats[2][0]
            line[f"{p}_improvement"] = improvement(s1, s2) if s1 is not None and s2 is not None else None
        table.append(line)
    return columns, table


def write_rows_csv(path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_COLUMNS)
        for r in rows:
            w.writerow(r.csv_fields())


def write_summary_csv(path, columns: list[str], table: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for line in table:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in (line[c] for c in columns)])


def grid_search(
    corpus,
    train_cfg: TrainConfig,
    arch: ArchConfig,
    axis: str,
    values,
    grid: GridSpec = GridSpec(),
) -> tuple[float, dict[float, float]]:
    """Pick the ``axis`` value (``lambda_rd`` or ``lambda_pf``) with the best final validation Dice."""
    if axis not in ("lambda_rd", "lambda_pf"):
        raise ValueError("grid search runs over lambda_rd or lambda_pf")
    spec = ExperimentSpec(constraint="rd_pf", fractions=(100,), sweep_param=axis, sweep_values=tuple(values))
    scores = {}
    for v in values:
        cfg = configure(spec, train_cfg, v, train_cfg.seed)
        try:
            _, log = train(corpus, cfg, arch, grid)
            scores[v] = log.epochs[-1].val_dice
        except DivergenceError:
            scores[v] = float("nan")
    ranked = [v for v in values if not math.isnan(scores[v])]
    if not ranked:
        raise DivergenceError("every grid-search candidate diverged", -1)
    best = max(ranked, key=lambda v: scores[v])
    return best, scores

