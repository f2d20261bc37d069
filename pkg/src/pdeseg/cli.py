"""Command-line entry point: ``pdeseg {gen,solve,train,eval,sweep} --config FILE``.

Configs are JSON objects whose sections map one-to-one onto the library's
config dataclasses; unknown keys are rejected. Every run writes the fully
resolved config to ``<out>/config.json``, which can be fed back to ``--config``.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from . import harness, io
from .datagen import FRACTIONS, SPLITS, CorpusConfig, make_corpus
from .grid import GridSpec
from .metrics import BoundaryParams, binarize, boundary_f1, dice, iou
from .predictor import ArchConfig, ParamSet, TrainConfig, forward_batch, train
from .solver import DivergenceError, SolveConfig, solve_variational

log = logging.getLogger("pdeseg")

EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 1, 2, 3


class ConfigError(ValueError):
    pass


def build(cls, data, where: str, exclude: tuple[str, ...] = ()):
    """Instantiate dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown config key '{where}.{key}'")
    kwargs = {}
    for key, value in data.items():
        t = hints[key]
        if dataclasses.is_dataclass(t):
            kwargs[key] = build(t, value, f"{where}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _section(doc: dict, key: str, default=None):
    value = doc.get(key, default)
    return {} if value is None else value


def _check_keys(doc: dict, allowed: set[str], where: str = "config") -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{where}.{key}'")


def _path(doc: dict, key: str, base: Path, required: bool = True) -> Path | None:
    value = doc.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing required config key '{key}'")
        return None
    if not isinstance(value, str):
        raise ConfigError(f"config key '{key}' must be a path string")
    p = Path(value)
    return (p if p.is_absolute() else base / p).resolve()


def _seed(doc: dict) -> int:
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("config key 'seed' must be an integer")
    return seed


def _asdict(obj) -> dict:
    return dataclasses.asdict(obj)


def _echo(obj) -> dict:
    # section seeds are omitted: the global seed is authoritative
    d = dataclasses.asdict(obj)
    d.pop("seed", None)
    return d


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _grid(doc: dict) -> GridSpec:
    return build(GridSpec, _section(doc, "grid"), "grid")


def cmd_gen(doc: dict, base: Path, out: Path, jobs: int) -> dict:
    _check_keys(doc, {"seed", "corpus", "fractions"})
    seed = _seed(doc)
    cfg = build(CorpusConfig, _section(doc, "corpus"), "corpus", exclude=("seed",))
    cfg = dataclasses.replace(cfg, seed=seed)
    fractions = doc.get("fractions", [round(100 * f) for f in FRACTIONS])
    if not isinstance(fractions, list) or not fractions:
        raise ConfigError("config key 'fractions' must be a nonempty list of percentages")
    try:
        counts = cfg.split_counts()
    except ValueError as exc:
        raise ConfigError(f"corpus: {exc}") from exc
    for f in fractions:
        if not isinstance(f, (int, float)) or not 0 < f <= 100:
            raise ConfigError(f"config key 'fractions': {f!r} is not a percentage in (0, 100]")
        if int(np.floor(f / 100 * counts[0] + 1e-9)) < 1:
            raise ConfigError(
                f"config key 'fractions': {f:g}% of {counts[0]} training images leaves the train split empty"
            )
    corpus = make_corpus(cfg)
    io.save_corpus(corpus, out)
    subsets = {
        _fmt(f): sorted(s.index for s in corpus.with_train_fraction(f / 100).split("train"))
        for f in fractions
    }
    _write_json(out / "fractions.json", subsets)
    log.info("wrote %d samples to %s", len(corpus.samples), out)
    return {"seed": seed, "corpus": _echo(cfg), "fractions": fractions}


def _read_mask(path: Path) -> np.ndarray:
    return io.read_mask_pgm(path)


def cmd_solve(doc: dict, base: Path, out: Path, jobs: int) -> dict:
    _check_keys(doc, {"seed", "target", "clean", "solve", "grid", "threshold", "eta"})
    seed = _seed(doc)
    cfg = build(SolveConfig, _section(doc, "solve"), "solve", exclude=("seed",))
    cfg = dataclasses.replace(cfg, seed=seed)
    grid = _grid(doc)
    target_path = _path(doc, "target", base)
    clean_path = _path(doc, "clean", base, required=False)
    threshold = float(doc.get("threshold", 0.5))
    bp = build(BoundaryParams, {"eta": doc.get("eta", 2.0)}, "eta")
    target = _read_mask(target_path)
    clean = _read_mask(clean_path) if clean_path else None
    if clean is not None and clean.shape != target.shape:
        raise ConfigError(f"clean mask shape {clean.shape} differs from target {target.shape}")
    report = solve_variational(target, cfg, grid)
    u = report.final_field
    io.write_pgm(out / "field.pgm", io.quantize(u))
    io.write_field_raw(out / "field.raw", u)
    report.write_csv(out / "loss_log.csv")
    pred = binarize(u, threshold)
    metrics = {}
    for name, ref in (("target", target), ("clean", clean)):
        if ref is None:
            continue
        p_b, r_b, f_b = boundary_f1(pred, ref, bp)
        metrics[name] = {
            "dice": dice(pred, ref),
            "iou": iou(pred, ref),
            "boundary_precision": p_b,
            "boundary_recall": r_b,
            "boundary_f1": f_b,
        }
    _write_json(out / "metrics.json", metrics)
    return {
        "seed": seed,
        "target": str(target_path),
        "clean": str(clean_path) if clean_path else None,
        "solve": _echo(cfg),
        "grid": _asdict(grid),
        "threshold": threshold,
        "eta": bp.eta,
    }


def _load_corpus(path: Path):
    return io.load_corpus(path)


def _check_arch(arch: ArchConfig, corpus) -> None:
    try:
        arch.check_dims(corpus.samples[0].image.shape)
    except ValueError as exc:
        raise ConfigError(f"arch: {exc}") from exc


def cmd_train(doc: dict, base: Path, out: Path, jobs: int) -> dict:
    _check_keys(doc, {"seed", "manifest", "fraction", "arch", "train", "grid"})
    seed = _seed(doc)
    manifest = _path(doc, "manifest", base)
    fraction = doc.get("fraction", 100)
    if not isinstance(fraction, (int, float)) or not 0 < fraction <= 100:
        raise ConfigError("config key 'fraction' must be a percentage in (0, 100]")
    arch = build(ArchConfig, _section(doc, "arch"), "arch")
    cfg = dataclasses.replace(build(TrainConfig, _section(doc, "train"), "train", exclude=("seed",)), seed=seed)
    grid = _grid(doc)
    corpus = _load_corpus(manifest)
    _check_arch(arch, corpus)
    try:
        corpus = corpus.with_train_fraction(fraction / 100)
    except ValueError as exc:
        raise ConfigError(f"fraction: {exc}") from exc
    params, tlog = train(corpus, cfg, arch, grid)
    params.save(out / "params.json", arch)
    tlog.write_csv(out / "train_log.csv")
    return {
        "seed": seed,
        "manifest": str(manifest),
        "fraction": fraction,
        "arch": _asdict(arch),
        "train": _echo(cfg),
        "grid": _asdict(grid),
    }


def cmd_eval(doc: dict, base: Path, out: Path, jobs: int) -> dict:
    _check_keys(doc, {"seed", "manifest", "params", "splits", "eta", "threshold"})
    manifest = _path(doc, "manifest", base)
    params_path = _path(doc, "params", base)
    splits = doc.get("splits", ["test_in", "test_ood"])
    if not isinstance(splits, list) or any(s not in SPLITS for s in splits):
        raise ConfigError(f"config key 'splits' must list names from {SPLITS}")
    bp = build(BoundaryParams, {"eta": doc.get("eta", 2.0)}, "eta")
    threshold = float(doc.get("threshold", 0.5))
    params, arch = ParamSet.load(params_path)
    if arch is None:
        raise ConfigError(f"{params_path}: parameter file carries no architecture")
    corpus = _load_corpus(manifest)
    _check_arch(arch, corpus)
    per_image = []
    for split in splits:
        samples = corpus.split(split)
        if not samples:
            continue
        u = forward_batch(np.stack([s.image for s in samples]), params, arch)
        for ui, s in zip(u, samples):
            pred = binarize(ui, threshold)
            per_image.append({
                "index": s.index,
                "split": split,
                "morphology": s.morphology,
                "dice": dice(pred, s.mask),
                "iou": iou(pred, s.mask),
                "boundary_f1": boundary_f1(pred, s.mask, bp)[2],
            })
    metrics = ("dice", "iou", "boundary_f1")
    with open(out / "per_image.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "split", "morphology") + metrics)
        for r in per_image:
            w.writerow([r["index"], r["split"], r["morphology"]] + [_fmt(r[m]) for m in metrics])
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("split", "metric", "mean", "std", "n"))
        for split in splits:
            rows = [r for r in per_image if r["split"] == split]
            for m in metrics:
                vals = [r[m] for r in rows]
                if vals:
                    w.writerow([split, m, _fmt(np.mean(vals)), _fmt(np.std(vals)), len(vals)])
    return {
        "seed": _seed(doc),
        "manifest": str(manifest),
        "params": str(params_path),
        "splits": splits,
        "eta": bp.eta,
        "threshold": threshold,
    }


def cmd_sweep(doc: dict, base: Path, out: Path, jobs: int) -> dict:
    _check_keys(doc, {"seed", "manifest", "experiment", "arch", "train", "grid"})
    seed = _seed(doc)
    manifest = _path(doc, "manifest", base)
    exp = dict(_section(doc, "experiment"))
    constraints = exp.pop("constraint", "rd_pf")
    if isinstance(constraints, str):
        constraints = [constraints]
    if not isinstance(constraints, list) or not constraints:
        raise ConfigError("experiment.constraint must be a name or a nonempty list of names")
    specs = [build(harness.ExperimentSpec, exp | {"constraint": c}, "experiment") for c in constraints]
    arch = build(ArchConfig, _section(doc, "arch"), "arch")
    cfg = dataclasses.replace(build(TrainConfig, _section(doc, "train"), "train", exclude=("seed",)), seed=seed)
    grid = _grid(doc)
    corpus = _load_corpus(manifest)
    _check_arch(arch, corpus)
    for f in specs[0].fractions:
        if corpus.fraction_count(f / 100) < 1:
            raise ConfigError(f"experiment.fractions: {f:g}% leaves the train split empty")
    rows = []
    for spec in specs:
        rows += harness.run_experiment(spec, corpus, cfg, arch, grid, jobs=jobs)
    harness.write_rows_csv(out / "rows.csv", rows)
    columns, table = harness.summarize(rows)
    harness.write_summary_csv(out / "summary.csv", columns, table)
    exp_echo = _asdict(specs[0]) | {"constraint": constraints}
    return {
        "seed": seed,
        "manifest": str(manifest),
        "experiment": exp_echo,
        "arch": _asdict(arch),
        "train": _echo(cfg),
        "grid": _asdict(grid),
    }


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pdeseg", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--out", help="output directory (overrides the config's 'out')")
    parser.add_argument("--seed-override", type=int, help="replace the config's global seed")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    try:
        config_path = Path(args.config).resolve()
        try:
            doc = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{config_path}: top level must be a JSON object")
        out = args.out or doc.pop("out", None)
        doc.pop("out", None)
        if out is None:
            raise ConfigError("no output directory: pass --out or set 'out' in the config")
        if args.seed_override is not None:
            doc["seed"] = args.seed_override
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        echo = COMMANDS[args.command](doc, config_path.parent, out, args.jobs)
        _write_json(out / "config.json", echo)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.PGMError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())
