import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import arc_points
from polytraj.cli import main
from polytraj.evalharness import EvalReport, MetricSpec
from polytraj.fitting import split_until_fit


def write_csv(path, pts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows(pts.tolist())
    return path


def test_fit_straight(tmp_path, capsys):
    xs = np.linspace(0, 200, 201)
    src = write_csv(tmp_path / "lane.csv", np.column_stack([xs, 0.5 * xs]))
    assert main(["fit", str(src), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "lane.fit.json").read_text())
    assert doc["stats"]["n_segments"] == 1
    assert (tmp_path / "o" / "resolved_config.json").exists()


def test_fit_semicircle_matches_library(tmp_path):
    pts = arc_points(30.0, 0.0, np.pi)
    src = write_csv(tmp_path / "semi.csv", pts)
    assert main(["fit", str(src), "--threshold", "0.1", "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "semi.fit.json").read_text())
    assert doc["stats"]["n_segments"] == len(split_until_fit(pts, 3, 0.1)) > 1
    assert all(s["max_error"] < 0.1 for s in doc["segments"])


def test_fit_missing_file(tmp_path, capsys):
    xs = np.linspace(0, 10, 11)
    good = write_csv(tmp_path / "good.csv", np.column_stack([xs, xs]))
    out = tmp_path / "o"
    assert main(["fit", str(good), str(tmp_path / "missing.csv"), "--out", str(out)]) == 2
    assert not out.exists()


def test_fit_irreducible_warns(tmp_path, capsys):
    pts = np.array([[0, 0], [1, 1], [2, 0], [3, 1], [4, 0], [5, 1]], float)
    src = write_csv(tmp_path / "zig.csv", pts)
    assert main(["fit", str(src), "--threshold", "0.01", "--out", str(tmp_path / "o")]) == 0
    assert "irreducible" in capsys.readouterr().err


def test_global_flags_before_or_after(tmp_path):
    xs = np.linspace(0, 10, 11)
    src = write_csv(tmp_path / "a.csv", np.column_stack([xs, xs]))
    assert main(["--out", str(tmp_path / "a"), "fit", str(src)]) == 0
    assert main(["fit", str(src), "--seed", "4", "--out", str(tmp_path / "b")]) == 0
    snap = json.loads((tmp_path / "b" / "resolved_config.json").read_text())
    assert snap["seed"] == 4


def test_config_file_precedence(tmp_path):
    xs = np.linspace(0, 10, 11)
    src = write_csv(tmp_path / "a.csv", np.column_stack([xs, xs]))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"threshold": 0.5, "fit": {"threshold": 0.25}, "seed": 3}))
    out = tmp_path / "o"
    assert main(["fit", str(src), "--config", str(cfg), "--out", str(out)]) == 0
    snap = json.loads((out / "resolved_config.json").read_text())
    assert snap["threshold"] == 0.25 and snap["seed"] == 3
    assert main(["fit", str(src), "--config", str(cfg), "--threshold", "0.05", "--out", str(out)]) == 0
    assert json.loads((out / "resolved_config.json").read_text())["threshold"] == 0.05


@pytest.mark.parametrize("variant,lr", [("ep-f", 1e-3), ("ep-q", 5e-4), ("ep-noaug", 1e-3)])
def test_train_default_lr(tmp_path, scenario_dir, variant, lr, capsys):
    out = tmp_path / variant
    argv = ["train", "--train", str(scenario_dir), "--variant", variant, "--dim", "16", "--epochs", "1", "--limit", "2"]
    assert main(argv + ["--out", str(out)]) == 0
    snap = json.loads((out / "resolved_config.json").read_text())
    assert snap["resolved_model"]["lr"] == lr


def test_train_smoke_deterministic(tmp_path, scenario_dir, capsys):
    lines = []
    for run in ("a", "b"):
        t0 = time.perf_counter()
        rc = main(["train", "--train", str(scenario_dir), "--epochs", "1", "--limit", "4", "--out", str(tmp_path / run)])
        assert rc == 0 and time.perf_counter() - t0 < 60
        text = capsys.readouterr().out
        assert "parameters: 216857" in text
        lines.append([l for l in text.splitlines() if l.startswith("final")])
        assert (tmp_path / run / "checkpoint.npz").exists() and (tmp_path / run / "train_log.csv").exists()
    assert lines[0] == lines[1] and lines[0]


def test_train_missing_input(tmp_path):
    assert main(["train", "--train", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--out", str(tmp_path / "o")]) == 2


def test_train_nan_exit_code(tmp_path, scenario_dir, capsys):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rc = main(["train", "--train", str(scenario_dir), "--dim", "16", "--epochs", "1", "--batch-size", "2",
                   "--lr", "1e300", "--warmup", "0", "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "layer norms" in capsys.readouterr().err


def test_evaluate_after_overfit(overfit_run, scenario_dir, tmp_path, capsys):
    assert overfit_run["rc"] == 0
    ck = overfit_run["out"] / "checkpoint.npz"
    out = tmp_path / "ev"
    assert main(["evaluate", "--checkpoint", str(ck), "--scenarios", str(scenario_dir), "--horizon", "6.0", "--out", str(out)]) == 0
    rep = EvalReport.load(out / "report.json")
    assert rep.n_scenarios == 10 and rep.metrics["minade6"] < 0.5
    assert set(rep.metrics) == {"minade1", "minfde1", "minade6", "minfde6"}


def test_evaluate_contract_mismatch(overfit_run, scenario_dir, tmp_path):
    ck = overfit_run["out"] / "checkpoint.npz"
    assert main(["evaluate", "--checkpoint", str(ck), "--scenarios", str(scenario_dir), "--k", "7", "--out", str(tmp_path)]) == 4


def _report(path, spec=MetricSpec(), **metrics):
    EvalReport(spec, 1, metrics).save(path)
    return str(path)


def test_delta_commands(tmp_path, capsys):
    a = _report(tmp_path / "id.json", minade6=0.483, minfde1=2.617)
    b = _report(tmp_path / "ood.json", minade6=0.626, minfde1=3.563)
    assert main(["delta", "--id", a, "--ood", a, "--out", str(tmp_path / "same")]) == 0
    same = json.loads((tmp_path / "same" / "delta.json").read_text())
    assert all(v == 0 for v in same["delta"].values()) and all(v == 0 for v in same["relative"].values())
    capsys.readouterr()
    assert main(["delta", "--id", a, "--ood", b, "--out", str(tmp_path / "d")]) == 0
    assert "minade6: 0.483 -> 0.626  +0.143 m (+29.6%)" in capsys.readouterr().out
    d = json.loads((tmp_path / "d" / "delta.json").read_text())
    assert d["delta"]["minfde1"] == pytest.approx(0.946, abs=1e-3)
    c = _report(tmp_path / "six.json", MetricSpec(horizon=6.0), minade6=0.5, minfde1=2.0)
    assert main(["delta", "--id", a, "--ood", c, "--out", str(tmp_path / "x")]) == 4


def test_stats_command(tmp_path, scenario_dir, scenarios10, capsys):
    assert main(["stats", "--scenarios", str(scenario_dir), "--out", str(tmp_path)]) == 0
    n = sum(m.semantic == "lane_center" for s in scenarios10 for m in s.map)
    assert f"{n} rows" in capsys.readouterr().out
    assert len((tmp_path / "lane_stats.csv").read_text().strip().splitlines()) == n + 1


def test_generate_and_homogenize(tmp_path, capsys):
    raw = tmp_path / "raw"
    assert main(["generate", "--preset", "straight", "--n", "2", "--raw", "--out", str(raw)]) == 0
    assert len(list(raw.glob("*.raw.json"))) == 2
    out = tmp_path / "h"
    assert main(["homogenize", str(raw), "--out", str(out)]) == 0
    assert len(list(out.glob("*.scn.json"))) == 2
    again = tmp_path / "g"
    assert main(["generate", "--preset", "straight", "--n", "2", "--raw", "--out", str(again)]) == 0
    for p in raw.glob("*.raw.json"):
        assert p.read_bytes() == (again / p.name).read_bytes()


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "polytraj.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
