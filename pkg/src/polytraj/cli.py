"""Command-line interface.

Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 contract mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import scenario as scn
from .evalharness import EvalReport, EvaluationError, MetricSpec, SpecMismatchError, delta_report, evaluate_set
from .fitting import Polyline, split_until_fit

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CONTRACT = 4

log = logging.getLogger("polytraj")


class InputError(Exception):
    pass


class ContractError(Exception):
    pass


# defaults per command; a config file value overrides these, a flag overrides both
DEFAULTS: dict[str, dict[str, Any]] = {
    "fit": {"degree": 3, "threshold": 0.1},
    "homogenize": {"source": None, "threshold": 0.1},
    "generate": {"preset": "default", "profile": None, "n": 10, "start": 0, "raw": False},
    "train": {
        "train": None,
        "val": None,
        "variant": "ep-f",
        "lr": None,
        "batch_size": None,
        "epochs": None,
        "warmup": 60000,
        "dim": 64,
        "modes": 6,
        "blocks": 1,
        "heads": 4,
        "max_iters": None,
        "limit": None,
        "flip": False,
    },
    "evaluate": {"checkpoint": None, "scenarios": None, "k": 6, "horizon": 4.1, "name": "report.json"},
    "delta": {"id": None, "ood": None},
    "stats": {"scenarios": None},
}
GLOBAL_DEFAULTS = {"seed": 0, "jobs": 1, "out": "out"}


# ---------------------------------------------------------------- helpers


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read config {path}: {e}") from e


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, the config file (top level, then a section named after the command) and flags."""
    cfg = _read_config(args.config)
    cmd = args.command
    section = cfg.get(cmd, {}) if isinstance(cfg.get(cmd), dict) else {}
    out: dict[str, Any] = {"command": cmd}
    for key, default in {**GLOBAL_DEFAULTS, **DEFAULTS[cmd]}.items():
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            out[key] = flag
        elif key in section:
            out[key] = section[key]
        elif key in cfg and not isinstance(cfg[key], dict):
            out[key] = cfg[key]
        else:
            out[key] = default
    if "inputs" in vars(args):
        out["inputs"] = list(args.inputs)
    return out


def _out_dir(opts: dict) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(opts: dict, out: Path) -> None:
    (out / "resolved_config.json").write_text(json.dumps({**opts, "version": __version__}, indent=2, sort_keys=True))


def _require(opts: dict, *keys: str) -> None:
    for k in keys:
        if opts.get(k) in (None, ""):
            raise InputError(f"missing required option --{k.replace('_', '-')}")


def _load_scenarios(path: str, limit: int | None = None) -> list[scn.HomogenizedScenario]:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file or directory: {path}")
    try:
        items = scn.load_dir(p)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot read scenarios from {path}: {e}") from e
    items = [s for s in items if isinstance(s, scn.HomogenizedScenario)]
    if not items:
        raise InputError(f"no homogenized scenarios in {path}")
    return items[:limit] if limit else items


# ------------------------------------------------------------------- fit


def _read_polylines(path: Path) -> list[tuple[str, Polyline]]:
    """Polylines from CSV (x,y columns), polyline JSON, or a raw scenario's map."""
    if path.suffix.lower() == ".csv":
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        return [(path.stem, Polyline(np.array([[float(r["x"]), float(r["y"])] for r in rows])))]
    d = json.loads(path.read_text())
    if isinstance(d, dict) and d.get("kind") == "raw":
        r = scn.raw_from_dict(d)
        return [(e.id, Polyline(e.points, e.semantic)) for e in r.map if e.semantic in scn.KEPT_SEMANTICS]
    items = d.get("polylines", [d]) if isinstance(d, dict) else d
    out = []
    for i, item in enumerate(items):
        out.append((str(item.get("id", f"{path.stem}.{i}")), Polyline(item["points"], item.get("semantic", "lane_center"))))
    return out


def cmd_fit(opts: dict) -> int:
    paths = [Path(p) for p in opts.get("inputs", [])]
    if not paths:
        raise InputError("no input files")
    # read everything first so that a bad input leaves no partial output
    loaded = []
    for p in paths:
        try:
            loaded.append((p, _read_polylines(p)))
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise InputError(f"cannot read {p}: {e}") from e
    out = _out_dir(opts)
    irreducible = 0
    for p, polylines in loaded:
        rows = []
        for pid, pl in polylines:
            segs = split_until_fit(pl, opts["degree"], opts["threshold"])
            for k, f in enumerate(segs):
                irreducible += "irreducible" in f.flags
                rows.append(
                    {
                        "id": f"{pid}/{k}",
                        "semantic": pl.semantic.value,
                        "curve": f.curve.to_dict(),
                        "max_error": f.max_error,
                        "rms_error": f.rms_error,
                        "flags": list(f.flags),
                    }
                )
        errs = [r["max_error"] for r in rows]
        doc = {
            "source": str(p),
            "degree": opts["degree"],
            "threshold": opts["threshold"],
            "segments": rows,
            "stats": {"n_segments": len(rows), "max_error": max(errs), "mean_max_error": float(np.mean(errs))},
        }
        (out / f"{p.stem}.fit.json").write_text(json.dumps(doc, indent=1))
        print(f"{p}: {len(rows)} segments, max error {max(errs):.4g} m")
    if irreducible:
        print(f"warning: {irreducible} irreducible segments", file=sys.stderr)
    _snapshot(opts, out)
    return EXIT_OK


# ------------------------------------------------------------ homogenize


def _homogenize_one(args) -> tuple[str, dict | None, str | None]:
    path, source, threshold = args
    try:
        raw = scn.load(path)
        h = scn.homogenize(raw, source, threshold)
        return str(path), scn.scenario_to_dict(h), None
    except scn.ScenarioRejected as e:
        return str(path), None, f"{e.code}: {e.detail}"


def cmd_homogenize(opts: dict) -> int:
    paths = []
    for p in opts.get("inputs", []):
        p = Path(p)
        if not p.exists():
            raise InputError(f"no such file or directory: {p}")
        paths += sorted(p.glob("*.raw.json")) if p.is_dir() else [p]
    if not paths:
        raise InputError("no input files")
    source = scn.Source(opts["source"]) if opts["source"] else None
    jobs = [(p, source, opts["threshold"]) for p in paths]
    try:
        if opts["jobs"] > 1:
            with ProcessPoolExecutor(opts["jobs"]) as ex:
                results = list(ex.map(_homogenize_one, jobs))
        else:
            results = [_homogenize_one(j) for j in jobs]
    except (OSError, ValueError, KeyError) as e:
        raise InputError(str(e)) from e
    out = _out_dir(opts)
    rejected = []
    for path, d, reason in results:
        if d is None:
            rejected.append({"file": path, "reason": reason})
            continue
        (out / f"{d['scenario_id'] or Path(path).stem}.scn.json").write_text(json.dumps(d, separators=(",", ":")))
    (out / "rejected.json").write_text(json.dumps(rejected, indent=1))
    print(f"homogenized {len(results) - len(rejected)} scenarios, rejected {len(rejected)}")
    _snapshot(opts, out)
    return EXIT_OK


# -------------------------------------------------------------- generate


def _generator_config(opts: dict):
    from .synthetic import CONFIG_CURVY, CONFIG_STRAIGHT, GeneratorConfig

    base = {"default": GeneratorConfig(), "curvy": CONFIG_CURVY, "straight": CONFIG_STRAIGHT}
    if opts["preset"] not in base:
        raise InputError(f"unknown preset {opts['preset']!r}")
    d = base[opts["preset"]].to_dict()
    d["seed"] = opts["seed"]
    if opts["profile"]:
        d["profile"] = opts["profile"]
    d.update(opts.get("generator", {}) or {})
    try:
        cfg = GeneratorConfig.from_dict(d)
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise InputError(f"invalid generator config: {e}") from e
    return cfg


def cmd_generate(opts: dict) -> int:
    from .synthetic import generate_raw, generate_synthetic

    cfg = _generator_config(opts)
    n, start = int(opts["n"]), int(opts["start"])
    if n < 1:
        raise InputError("--n must be >= 1")
    out = _out_dir(opts)
    if opts["raw"]:
        docs = [scn.raw_to_dict(generate_raw(cfg, start + i)) for i in range(n)]
        suffix = ".raw.json"
    else:
        docs = [scn.scenario_to_dict(s) for s in generate_synthetic(cfg, n, start)]
        suffix = ".scn.json"
    for d in docs:
        (out / f"{d['scenario_id']}{suffix}").write_text(json.dumps(d, separators=(",", ":")))
    (out / "generator_config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    print(f"wrote {len(docs)} scenarios to {out}")
    _snapshot(opts, out)
    return EXIT_OK


# ----------------------------------------------------------------- train


def cmd_train(opts: dict) -> int:
    from .model.network import EPConfig
    from .model.train import save_checkpoint, train

    _require(opts, "train")
    train_set = _load_scenarios(opts["train"], opts["limit"])
    val_set = _load_scenarios(opts["val"]) if opts["val"] else []
    try:
        config = EPConfig(
            variant=opts["variant"],
            dim=int(opts["dim"]),
            blocks=int(opts["blocks"]),
            heads=int(opts["heads"]),
            modes=int(opts["modes"]),
            lr=opts["lr"],
            batch_size=opts["batch_size"],
            epochs=opts["epochs"],
            warmup_iters=int(opts["warmup"]),
            flip=bool(opts["flip"]),
            max_iters=opts["max_iters"],
            seed=int(opts["seed"]),
        )
    except ValueError as e:
        raise InputError(str(e)) from e
    out = _out_dir(opts)
    _snapshot({**opts, "resolved_model": config.to_dict()}, out)
    result = train(config, train_set, val_set)
    print(f"parameters: {result.n_params}")
    save_checkpoint(result.model, out / "checkpoint.npz", {"n_params": result.n_params, "iterations": result.iterations})
    (out / "train_log.csv").write_text(result.log_csv())
    last = result.log_rows[-1]
    print(f"final epoch {last['epoch']} iter {last['iter']} loss_total {last['loss_total']}")
    if result.excluded:
        print(f"agents excluded from loss for missing ground truth: {result.excluded}")
    return EXIT_OK


# -------------------------------------------------------------- evaluate


def cmd_evaluate(opts: dict) -> int:
    from .model.train import load_checkpoint

    _require(opts, "checkpoint", "scenarios")
    if not Path(opts["checkpoint"]).exists():
        raise InputError(f"no such checkpoint: {opts['checkpoint']}")
    try:
        model, _ = load_checkpoint(opts["checkpoint"])
    except (KeyError, ValueError) as e:
        raise ContractError(f"incompatible checkpoint: {e}") from e
    scenarios = _load_scenarios(opts["scenarios"])
    try:
        spec = MetricSpec(int(opts["k"]), float(opts["horizon"]))
    except ValueError as e:
        raise InputError(str(e)) from e
    if spec.k > model.config.modes:
        raise ContractError(f"metric k={spec.k} exceeds the model's {model.config.modes} modes")
    report = evaluate_set(model, scenarios, spec)
    out = _out_dir(opts)
    report.save(out / opts["name"])
    print(json.dumps({"n_scenarios": report.n_scenarios, "metrics": report.metrics, "rejected": len(report.rejected)}))
    _snapshot(opts, out)
    return EXIT_OK


def cmd_delta(opts: dict) -> int:
    _require(opts, "id", "ood")
    reports = []
    for key in ("id", "ood"):
        try:
            reports.append(EvalReport.load(opts[key]))
        except (OSError, ValueError, KeyError) as e:
            raise InputError(f"cannot read report {opts[key]}: {e}") from e
    d = delta_report(*reports)
    out = _out_dir(opts)
    (out / "delta.json").write_text(json.dumps(d.to_dict(), indent=2))
    print(d.format())
    _snapshot(opts, out)
    return EXIT_OK


def cmd_stats(opts: dict) -> int:
    from .scenario import lane_stats, write_lane_stats

    _require(opts, "scenarios")
    rows = lane_stats(_load_scenarios(opts["scenarios"]))
    out = _out_dir(opts)
    write_lane_stats(rows, out / "lane_stats.csv")
    print(f"{len(rows)} rows")
    _snapshot(opts, out)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "homogenize": cmd_homogenize,
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "delta": cmd_delta,
    "stats": cmd_stats,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON key-value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="polytraj", parents=[common], description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="fit polylines with split-until-fit cubic curves")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--degree", type=int)
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("homogenize", parents=[common], help="homogenize raw scenario files")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--source", choices=[x.value for x in scn.Source])
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("generate", parents=[common], help="generate synthetic scenarios")
    s.add_argument("--preset", choices=["default", "curvy", "straight"])
    s.add_argument("--profile", choices=["a2like", "wolike", "synthetic"])
    s.add_argument("--n", type=int)
    s.add_argument("--start", type=int)
    s.add_argument("--raw", action="store_true", help="write raw (not homogenized) scenarios")

    s = sub.add_parser("train", parents=[common], help="train a network")
    s.add_argument("--train", help="directory of homogenized scenarios")
    s.add_argument("--val")
    s.add_argument("--variant", choices=["ep-f", "ep-q", "ep-noaug"])
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--warmup", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--modes", type=int)
    s.add_argument("--blocks", type=int)
    s.add_argument("--heads", type=int)
    s.add_argument("--max-iters", dest="max_iters", type=int)
    s.add_argument("--limit", type=int, help="use only the first N training scenarios")
    s.add_argument("--flip", action="store_true")

    s = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--scenarios")
    s.add_argument("--k", type=int)
    s.add_argument("--horizon", type=float)
    s.add_argument("--name", help="report file name")

    s = sub.add_parser("delta", parents=[common], help="ID vs OoD delta of two reports")
    s.add_argument("--id")
    s.add_argument("--ood")

    s = sub.add_parser("stats", parents=[common], help="lane curvature/length statistics")
    s.add_argument("--scenarios")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    for k in ("config", "seed", "jobs", "out", "verbose"):
        if not hasattr(args, k):
            setattr(args, k, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .model.train import NumericalError

    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContractError, SpecMismatchError) as e:
        print(f"contract mismatch: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except EvaluationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
