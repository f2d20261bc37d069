import csv
import json

import numpy as np
import pytest

from pdeseg import io
from pdeseg.cli import main
from pdeseg.datagen import corrupt_mask, rasterize_polygon


def run(tmp_path, command, doc, name, *extra):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / name
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def disk(size=32, r=9.0):
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    return rasterize_polygon(np.stack([size / 2 + r * np.cos(t), size / 2 + r * np.sin(t)], axis=1), (size, size))


GEN = {"seed": 3, "corpus": {"total": 8, "size": 32}, "fractions": [50, 100]}


def test_gen_minimal(tmp_path):
    code, out = run(tmp_path, "gen", GEN, "gen")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["samples"]) == 8
    splits = [s["split"] for s in manifest["samples"]]
    assert {s: splits.count(s) for s in set(splits)} == {"train": 4, "val": 2, "test_in": 1, "test_ood": 1}
    assert all(s["morphology"] == "spherical" for s in manifest["samples"] if s["split"] == "test_ood")
    assert io.read_pgm(out / manifest["samples"][0]["image"]).shape == (32, 32)
    assert json.loads((out / "config.json").read_text())["seed"] == 3
    fractions = json.loads((out / "fractions.json").read_text())
    assert len(fractions["50"]) == 2 and set(fractions["50"]) <= set(fractions["100"])


def test_gen_byte_identical(tmp_path):
    _, a = run(tmp_path, "gen", GEN, "a")
    _, b = run(tmp_path, "gen", GEN, "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    _, c = run(tmp_path, "gen", GEN, "c", "--seed-override", "4")
    assert (a / "manifest.json").read_bytes() != (c / "manifest.json").read_bytes()


def test_gen_fraction_empties_train(tmp_path, capsys):
    code, _ = run(tmp_path, "gen", GEN | {"fractions": [10]}, "g")
    assert code == 1
    assert "fractions" in capsys.readouterr().err


def test_unknown_key(tmp_path, capsys):
    code, _ = run(tmp_path, "gen", GEN | {"corpus": {"total": 8, "sizes": 32}}, "g")
    assert code == 1
    assert "corpus.sizes" in capsys.readouterr().err
    code, _ = run(tmp_path, "gen", GEN | {"bogus": 1}, "h")
    assert code == 1


def test_solve_clean_mask(tmp_path):
    io.write_mask_pgm(tmp_path / "y.pgm", disk())
    doc = {"target": "y.pgm", "clean": "y.pgm", "solve": {"stage1_iters": 500, "stage2_iters": 0}}
    code, out = run(tmp_path, "solve", doc, "s")
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["clean"]["dice"] >= 0.99
    assert io.read_pgm(out / "field.pgm").shape == (32, 32)
    assert io.read_field_raw(out / "field.raw").shape == (32, 32)
    assert len((out / "loss_log.csv").read_text().splitlines()) == 501


def test_solve_priors_help_on_corrupted(tmp_path):
    clean = disk(32, 8)
    io.write_mask_pgm(tmp_path / "clean.pgm", clean)
    io.write_mask_pgm(tmp_path / "noisy.pgm", corrupt_mask(clean, 0.1, 0))
    base = {"target": "noisy.pgm", "clean": "clean.pgm"}
    _, with_p = run(tmp_path, "solve", base | {"solve": {"weights": {"lambda_rd": 0.1, "lambda_pf": 0.1}}}, "p")
    _, without = run(tmp_path, "solve", base | {"solve": {"weights": {"lambda_rd": 0, "lambda_pf": 0}}}, "n")
    d_with = json.loads((with_p / "metrics.json").read_text())["clean"]["dice"]
    d_without = json.loads((without / "metrics.json").read_text())["clean"]["dice"]
    assert d_with > d_without


def test_solve_malformed_pgm(tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x00")
    code, _ = run(tmp_path, "solve", {"target": "bad.pgm"}, "s")
    assert code == 2
    assert "byte offset" in capsys.readouterr().err
    code, _ = run(tmp_path, "solve", {"target": "missing.pgm"}, "t")
    assert code == 2


@pytest.fixture(scope="module")
def one_image(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("one")
    doc = {"seed": 2, "corpus": {"counts": [1, 1, 1, 1], "size": 16}, "fractions": [100]}
    code, out = run(tmp, "gen", doc, "corpus")
    assert code == 0
    return out / "manifest.json"


def test_arch_mismatch(tmp_path, one_image, capsys):
    doc = {"manifest": str(one_image), "arch": {"depth": 5}, "train": {"epochs_stage1": 1, "epochs_stage2": 0}}
    code, _ = run(tmp_path, "train", doc, "t")
    assert code == 1
    assert "divisible by 2**depth = 32" in capsys.readouterr().err


def test_train_eval_overfit(tmp_path, one_image):
    doc = {
        "manifest": str(one_image),
        "arch": {"depth": 1, "base_channels": 4},
        "train": {"epochs_stage1": 300, "epochs_stage2": 0, "batch_size": 1, "step_size": 0.02},
    }
    code, out = run(tmp_path, "train", doc, "t")
    assert code == 0
    assert len(read_csv(out / "train_log.csv")) == 300
    ev = {"manifest": str(one_image), "params": str(out / "params.json"), "splits": ["train"]}
    code, ev_out = run(tmp_path, "eval", ev, "e")
    assert code == 0
    (row,) = read_csv(ev_out / "per_image.csv")
    assert float(row["dice"]) >= 0.99
    agg = read_csv(ev_out / "aggregate.csv")
    assert [r["metric"] for r in agg] == ["dice", "iou", "boundary_f1"]

    # the echo re-runs to byte-identical outputs
    code = main(["train", "--config", str(out / "config.json"), "--out", str(tmp_path / "t2")])
    assert code == 0
    assert (out / "params.json").read_bytes() == (tmp_path / "t2" / "params.json").read_bytes()


def test_eval_eta_monotone(tmp_path):
    code, corpus = run(tmp_path, "gen", {"seed": 1, "corpus": {"counts": [2, 1, 3, 3], "size": 16},
                                         "fractions": [100]}, "c")
    manifest = str(corpus / "manifest.json")
    train_doc = {"manifest": manifest, "arch": {"depth": 1, "base_channels": 2},
                 "train": {"epochs_stage1": 3, "epochs_stage2": 0}}
    code, model = run(tmp_path, "train", train_doc, "m")
    assert code == 0
    scores = {}
    for eta in (1, 3):
        ev = {"manifest": manifest, "params": str(model / "params.json"), "eta": eta}
        code, out = run(tmp_path, "eval", ev, f"e{eta}")
        assert code == 0
        scores[eta] = [float(r["boundary_f1"]) for r in read_csv(out / "per_image.csv")]
    assert len(scores[1]) == 6
    assert all(a <= b for a, b in zip(scores[1], scores[3]))


def test_sweep_ablation_shape(tmp_path):
    _, corpus = run(tmp_path, "gen", {"seed": 0, "corpus": {"counts": [4, 1, 1, 1], "size": 16},
                                      "fractions": [100]}, "c")
    doc = {
        "manifest": str(corpus / "manifest.json"),
        "experiment": {"constraint": ["baseline", "rd_only", "pf_only", "rd_pf"], "fractions": [100]},
        "arch": {"depth": 1, "base_channels": 2},
        "train": {"epochs_stage1": 1, "epochs_stage2": 1},
    }
    code, out = run(tmp_path, "sweep", doc, "s")
    assert code == 0
    rows = read_csv(out / "rows.csv")
    assert list(rows[0]) == ["constraint", "fraction", "sweep_param", "sweep_value", "split", "metric",
                             "stage", "seed", "value"]
    assert len(rows) == 6 + 3 * 12
    summary = read_csv(out / "summary.csv")
    assert [r["constraint"] for r in summary] == ["baseline", "rd_only", "pf_only", "rd_pf"]
    improvement_cols = [c for c in summary[0] if c.endswith("_improvement")]
    assert sorted(improvement_cols) == sorted(
        f"{m}_{s}_improvement" for m in ("dice", "iou", "boundary_f1") for s in ("test_in", "test_ood")
    )
    assert summary[0]["dice_test_in_improvement"] == ""
