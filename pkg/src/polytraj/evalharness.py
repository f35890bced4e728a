"""Displacement metrics, set evaluation and ID/OoD delta reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .polycore import PolyCurve2D, evaluate
from .scenario import HomogenizedScenario, InvalidScenario, validate

METRIC_NAMES = ("minade", "minfde")


class EvaluationError(ValueError):
    pass


class TruthGapError(EvaluationError):
    pass


class SpecMismatchError(EvaluationError):
    pass


@dataclass(frozen=True)
class MetricSpec:
    k: int = 6
    horizon: float = 4.1  # seconds
    step: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        n = self.horizon / self.step
        if self.horizon <= 0 or abs(n - round(n)) > 1e-9:
            raise ValueError(f"horizon {self.horizon} is not a whole number of {self.step} s steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def times(self) -> np.ndarray:
        """Future timestamps step, 2*step, ..., horizon."""
        return np.arange(1, self.n_steps + 1) * self.step

    @property
    def keys(self) -> tuple[str, ...]:
        ks = (1, self.k) if self.k != 1 else (1,)
        return tuple(f"{m}{k}" for k in ks for m in METRIC_NAMES)

    def to_dict(self) -> dict:
        return {"k": self.k, "horizon": self.horizon, "step": self.step}

    @classmethod
    def from_dict(cls, d: Mapping) -> MetricSpec:
        return cls(int(d["k"]), float(d["horizon"]), float(d["step"]))


def _sampled(predictions, spec: MetricSpec) -> np.ndarray:
    """(K, n, 2) positions at the spec's timestamps."""
    if isinstance(predictions, PolyCurve2D):
        predictions = [predictions]
    if isinstance(predictions, np.ndarray):
        out = np.asarray(predictions, dtype=float)
        if out.ndim == 2:
            out = out[None]
    else:
        out = np.stack([evaluate(c, spec.times) for c in predictions])
    if out.ndim != 3 or out.shape[2] != 2:
        raise ValueError(f"predictions must have shape (K, n, 2), got {out.shape}")
    if out.shape[1] < spec.n_steps:
        raise ValueError("predictions do not cover the horizon")
    return out[:, : spec.n_steps]


def _truth(truth, spec: MetricSpec, valid=None) -> np.ndarray:
    truth = np.asarray(truth, dtype=float)
    if truth.ndim != 2 or truth.shape[1] != 2:
        raise ValueError(f"truth must have shape (n, 2), got {truth.shape}")
    if truth.shape[0] < spec.n_steps:
        raise TruthGapError(f"truth has {truth.shape[0]} steps, horizon needs {spec.n_steps}")
    if valid is not None and not np.asarray(valid, dtype=bool)[: spec.n_steps].all():
        raise TruthGapError("truth gap inside horizon")
    truth = truth[: spec.n_steps]
    if not np.all(np.isfinite(truth)):
        raise TruthGapError("non-finite truth inside horizon")
    return truth


def _distances(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    dx = pred[..., 0] - truth[..., 0]
    dy = pred[..., 1] - truth[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def min_ade(predictions, truth, spec: MetricSpec = MetricSpec(), valid=None) -> float:
    """Best-of-K mean displacement over steps ``step .. horizon``.

    ``predictions`` are curves (evaluated at the spec's timestamps) or an
    array (K, n, 2) already sampled there; ``truth`` is (n, 2) from ``step``.
    """
    pred = _sampled(predictions, spec)
    d = _distances(pred, _truth(truth, spec, valid)[None])
    return min(math.fsum(row) / spec.n_steps for row in d)


def min_fde(predictions, truth, spec: MetricSpec = MetricSpec(), valid=None) -> float:
    """Best-of-K displacement at the final step (index ``horizon / step``)."""
    pred = _sampled(predictions, spec)
    t = _truth(truth, spec, valid)
    d = _distances(pred[:, -1], t[-1][None])
    return float(min(d))


def top_modes(probs, k: int) -> np.ndarray:
    """Indices of the ``k`` most probable modes, ties to the lower index."""
    probs = np.asarray(probs, dtype=float)
    return np.argsort(-probs, kind="stable")[:k]


def score(predictions, probs, truth, spec: MetricSpec = MetricSpec(), valid=None) -> dict[str, float]:
    """All report metrics for one agent. K=1 uses the most probable mode."""
    pred = _sampled(predictions, spec)
    out = {}
    for key in spec.keys:
        k = int(key[6:])
        sel = pred[top_modes(probs, k)]
        fn = min_ade if key.startswith("minade") else min_fde
        out[key] = fn(sel, truth, spec, valid)
    return out


@dataclass
class EvalReport:
    spec: MetricSpec
    n_scenarios: int
    metrics: dict[str, float]
    per_scenario: list[dict] = field(default_factory=list)
    rejected: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_scenarios": self.n_scenarios,
            "metrics": dict(self.metrics),
            "rejected": list(self.rejected),
            "per_scenario": list(self.per_scenario),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> EvalReport:
        return cls(
            MetricSpec.from_dict(d["spec"]),
            int(d["n_scenarios"]),
            {k: float(v) for k, v in d["metrics"].items()},
            list(d.get("per_scenario", [])),
            list(d.get("rejected", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _focal_truth(s: HomogenizedScenario, spec: MetricSpec) -> tuple[np.ndarray, np.ndarray]:
    f = s.focal
    idx = np.rint(f.fut_t / spec.step).astype(int)
    if len(idx) < spec.n_steps or not np.array_equal(idx[: spec.n_steps], np.arange(1, spec.n_steps + 1)):
        raise TruthGapError("future timestamps do not cover the horizon at the spec's step")
    return f.fut_xy[: spec.n_steps], f.fut_valid[: spec.n_steps]


def aggregate(per_scenario: Sequence[Mapping[str, float]], spec: MetricSpec) -> dict[str, float]:
    n = len(per_scenario)
    return {k: math.fsum(r[k] for r in per_scenario) / n for k in spec.keys}


def score_predictions(
    predictions: Mapping[str, tuple[Sequence[PolyCurve2D] | np.ndarray, Sequence[float]]],
    scenarios: Sequence[HomogenizedScenario],
    spec: MetricSpec = MetricSpec(),
) -> EvalReport:
    """Score focal predictions ``{scenario_id: (curves, probs)}`` in scenario coordinates."""
    if not scenarios:
        raise EvaluationError("empty evaluation set")
    rows, rejected = [], []
    for s in scenarios:
        try:
            validate(s)
            truth, valid = _focal_truth(s, spec)
            curves, probs = predictions[s.scenario_id]
            m = score(curves, probs, truth, spec, valid)
        except (TruthGapError, InvalidScenario) as e:
            rejected.append({"scenario_id": s.scenario_id, "reason": str(e)})
            continue
        rows.append({"scenario_id": s.scenario_id, **m})
    if not rows:
        raise EvaluationError(f"no scorable scenarios ({len(rejected)} rejected)")
    return EvalReport(spec, len(rows), aggregate(rows, spec), rows, rejected)


def predict_focal(model, scenarios: Sequence[HomogenizedScenario], batch_size: int = 64) -> dict:
    """Focal curves (scenario coordinates) and mode probabilities from a trained network."""
    from .model.data import collate, scene_arrays

    out = {}
    for i in range(0, len(scenarios), batch_size):
        chunk = scenarios[i : i + batch_size]
        groups: dict[int, list] = {}
        for s in chunk:  # batch scenarios with equal future length together
            arr = scene_arrays(s, model.config.variant)
            groups.setdefault(len(arr.fut_t), []).append(arr)
        for scenes in groups.values():
            for scene, pset in zip(scenes, model.predict(collate(scenes))):
                p = pset[0]
                out[scene.scenario_id] = (p.curves(world=True), p.probs)
    return out


def evaluate_set(model, scenarios: Sequence[HomogenizedScenario], spec: MetricSpec = MetricSpec()) -> EvalReport:
    """Evaluate a network (or a checkpoint path) on the focal agents of ``scenarios``."""
    if not scenarios:
        raise EvaluationError("empty evaluation set")
    if isinstance(model, (str, Path)):
        from .model.train import load_checkpoint

        model, _ = load_checkpoint(model)
    return score_predictions(predict_focal(model, list(scenarios)), scenarios, spec)


# ---------------------------------------------------------------------- deltas


@dataclass
class DeltaReport:
    spec: MetricSpec
    id: dict[str, float]
    ood: dict[str, float]
    delta: dict[str, float]
    relative: dict[str, float]  # percent of the ID value

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "id": self.id,
            "ood": self.ood,
            "delta": self.delta,
            "relative": self.relative,
        }

    def format(self) -> str:
        lines = []
        for k in self.delta:
            lines.append(
                f"{k}: {self.id[k]:.3f} -> {self.ood[k]:.3f}  {self.delta[k]:+.3f} m ({self.relative[k]:+.1f}%)"
            )
        return "\n".join(lines)


def delta_report(id_report: EvalReport, ood_report: EvalReport) -> DeltaReport:
    """Absolute (OoD - ID) and relative (percent of ID) differences."""
    if id_report.spec != ood_report.spec:
        raise SpecMismatchError(f"metric specs differ: {id_report.spec} vs {ood_report.spec}")
    keys = [k for k in id_report.metrics if k in ood_report.metrics]
    if set(keys) != set(id_report.metrics) or set(keys) != set(ood_report.metrics):
        raise SpecMismatchError("reports carry different metrics")
    delta, rel = {}, {}
    for k in keys:
        a, b = id_report.metrics[k], ood_report.metrics[k]
        delta[k] = b - a
        if a != 0:
            rel[k] = 100.0 * (b - a) / a
        else:
            rel[k] = 0.0 if b == a else math.copysign(math.inf, b - a)
    return DeltaReport(id_report.spec, dict(id_report.metrics), dict(ood_report.metrics), delta, rel)
