"""Scenario data model, homogenization and persistence.

Raw scenarios carry absolute timestamps and unfitted map polylines.
Homogenized scenarios are re-sliced to a common layout: a 5 s history at
10 Hz ending at the current time (t = 0), the future after it, lane centers
and crosswalks fitted with cubic Bezier segments, and a single focal agent.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import FramePose, history_frame
from .fitting import (
    DEFAULT_NOISE_STD,
    HISTORY_DEGREE,
    MAP_DEGREE,
    SPLIT_THRESHOLD,
    FitResult,
    ObservedTrack,
    Polyline,
    Semantic,
    fit_history_wls,
    split_until_fit,
)
from .polycore import PolyCurve2D, arc_length, max_abs_curvature

FORMAT_VERSION = 1
DT = 0.1
HISTORY_STEPS = 50
HISTORY_SECONDS = 5.0
TRAIN_HORIZON = 6.0
EVAL_HORIZON = 4.1
MIN_SCENARIO_SPAN = HISTORY_SECONDS + EVAL_HORIZON
WO_ANCHOR = 5.0  # seconds after scenario start
KEPT_SEMANTICS = ("lane_center", "crosswalk")


class Source(str, enum.Enum):
    A2LIKE = "a2like"
    WOLIKE = "wolike"
    SYNTHETIC = "synthetic"


class AgentClass(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    EGO = "ego"


HORIZON_BY_SOURCE = {Source.A2LIKE: TRAIN_HORIZON, Source.WOLIKE: EVAL_HORIZON, Source.SYNTHETIC: TRAIN_HORIZON}


class ScenarioRejected(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class InvalidScenario(ValueError):
    pass


def step_times(start: int, stop: int) -> np.ndarray:
    """Timestamps k * 0.1 s for k in [start, stop], rounded to clean decimals."""
    return np.round(np.arange(start, stop + 1) * DT, 10)


# ---------------------------------------------------------------- raw layout


@dataclass
class RawAgent:
    id: str
    agent_class: AgentClass
    t: np.ndarray
    xy: np.ndarray
    valid: np.ndarray
    is_focal: bool = False  # labeled focal (A2) or focal candidate (WO)


@dataclass
class RawMapElement:
    id: str
    semantic: str
    points: np.ndarray
    attributes: dict = field(default_factory=dict)


@dataclass
class RawScenario:
    scenario_id: str
    source: Source
    current_time: float
    agents: list[RawAgent]
    map: list[RawMapElement]

    def timeline(self) -> np.ndarray:
        ts = [a.t for a in self.agents if len(a.t)]
        return np.unique(np.concatenate(ts)) if ts else np.zeros(0)


# ---------------------------------------------------------- homogenized layout


@dataclass
class Agent:
    id: str
    agent_class: AgentClass
    is_focal: bool
    hist_t: np.ndarray  # (51,) from -5.0 to 0.0
    hist_xy: np.ndarray
    hist_valid: np.ndarray
    fut_t: np.ndarray  # (F,) from 0.1
    fut_xy: np.ndarray
    fut_valid: np.ndarray
    history: FitResult

    @property
    def p_track(self) -> np.ndarray:
        """Tracked current position: the end of the fitted history."""
        return self.history.curve.coeffs[-1].copy()

    @property
    def time_window(self) -> tuple[float, float]:
        t = self.hist_t[self.hist_valid]
        return float(t[0]), float(t[-1])

    def fully_observed(self, horizon: float) -> bool:
        need = self.fut_t <= horizon + 1e-9
        covers = len(self.fut_t) and self.fut_t[need][-1] >= horizon - 1e-9
        return bool(self.hist_valid.all() and covers and self.fut_valid[need].all())


@dataclass
class MapElement:
    id: str
    semantic: str
    fit: FitResult

    @property
    def curve(self) -> PolyCurve2D:
        return self.fit.curve


@dataclass
class HomogenizedScenario:
    scenario_id: str
    source: Source
    focal_id: str
    horizon: float  # evaluable future length in seconds
    agents: list[Agent]
    map: list[MapElement]

    @property
    def focal(self) -> Agent:
        return next(a for a in self.agents if a.id == self.focal_id)

    def focal_frame(self) -> FramePose:
        return history_frame(self.focal.history.curve)


# ------------------------------------------------------------------ homogenize


def _resample(agent: RawAgent, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xy = np.zeros((len(times), 2))
    valid = np.zeros(len(times), dtype=bool)
    if len(agent.t) == 0:
        return xy, valid
    idx = np.searchsorted(agent.t, times - 1e-6)
    idx = np.clip(idx, 0, len(agent.t) - 1)
    hit = np.abs(agent.t[idx] - times) < 1e-6
    xy[hit] = agent.xy[idx[hit]]
    valid[hit] = agent.valid[idx[hit]]
    xy[~valid] = 0.0
    return xy, valid


def _fit_history(t, xy, valid, agent_class: AgentClass) -> FitResult:
    std = DEFAULT_NOISE_STD[agent_class.value]
    return fit_history_wls(ObservedTrack(t, xy, valid, std), HISTORY_DEGREE)


def homogenize(
    raw: RawScenario | HomogenizedScenario,
    source: Source | str | None = None,
    threshold: float = SPLIT_THRESHOLD,
) -> HomogenizedScenario:
    """Re-slice a raw scenario into the common layout.

    History is the 5 s window ending at the current time (A2-like uses the
    raw current-time marker, WO-like re-anchors at 5.0 s after the start).
    The evaluable horizon is 6 s for A2-like and 4.1 s for WO-like data.
    Only lane centers and crosswalks are kept and fitted with cubic
    segments; every agent history gets a degree-5 fit.

    Already homogenized input is validated and returned unchanged.

    Raises:
        ScenarioRejected: with code ``bad_sampling``, ``short_history``,
            ``short_future`` or ``no_focal``.
    """
    if isinstance(raw, HomogenizedScenario):
        validate(raw)
        return raw
    source = Source(source or raw.source)
    timeline = raw.timeline()
    if len(timeline) < 2 or np.any(np.abs(np.diff(timeline) - DT) > 1e-6):
        raise ScenarioRejected("bad_sampling", "timeline must be uniform at 10 Hz")
    span = timeline[-1] - timeline[0]
    if span < MIN_SCENARIO_SPAN - 1e-6:
        raise ScenarioRejected("short_future", f"scenario spans {span:.1f} s < {MIN_SCENARIO_SPAN} s")
    current = timeline[0] + WO_ANCHOR if source is Source.WOLIKE else raw.current_time
    if current - timeline[0] < HISTORY_SECONDS - 1e-6:
        raise ScenarioRejected("short_history", f"only {current - timeline[0]:.1f} s before current time")
    available = round(timeline[-1] - current, 6)
    horizon = HORIZON_BY_SOURCE[source]
    if available < horizon - 1e-6:
        if available < EVAL_HORIZON - 1e-6:
            raise ScenarioRejected("short_future", f"{available:.1f} s of future < {EVAL_HORIZON} s")
        horizon = EVAL_HORIZON
    n_future = int(round(min(available, TRAIN_HORIZON) / DT))

    hist_rel = step_times(-HISTORY_STEPS, 0)
    fut_rel = step_times(1, n_future)
    agents: list[Agent] = []
    labeled: list[str] = []
    for ra in raw.agents:
        hist_xy, hist_valid = _resample(ra, np.round(current + hist_rel, 10))
        fut_xy, fut_valid = _resample(ra, np.round(current + fut_rel, 10))
        if hist_valid.sum() < 2:
            continue
        ac = AgentClass(ra.agent_class)
        fit = _fit_history(hist_rel, hist_xy, hist_valid, ac)
        agents.append(Agent(ra.id, ac, False, hist_rel.copy(), hist_xy, hist_valid, fut_rel.copy(), fut_xy, fut_valid, fit))
        if ra.is_focal:
            labeled.append(ra.id)

    by_id = {a.id: a for a in agents}
    focal_id = None
    if source is Source.WOLIKE:
        for aid in labeled:
            a = by_id[aid]
            if a.agent_class is not AgentClass.EGO and a.fully_observed(horizon):
                focal_id = aid
                break
    else:
        if len(labeled) == 1:
            a = by_id[labeled[0]]
            if a.agent_class is not AgentClass.EGO and a.fully_observed(horizon):
                focal_id = a.id
    if focal_id is None:
        raise ScenarioRejected("no_focal", "no fully observed non-ego focal agent")
    by_id[focal_id].is_focal = True

    elements = [e for e in raw.map if e.semantic in KEPT_SEMANTICS]
    map_out: list[MapElement] = []
    for e in elements:
        pl = Polyline(e.points, Semantic(e.semantic))
        for k, fit in enumerate(split_until_fit(pl, MAP_DEGREE, threshold)):
            map_out.append(MapElement(f"{e.id}/{k}", e.semantic, fit))

    out = HomogenizedScenario(raw.scenario_id, source, focal_id, horizon, agents, map_out)
    validate(out)
    return out


def validate(s: HomogenizedScenario) -> None:
    """Raise :class:`InvalidScenario` if ``s`` breaks the homogenized layout."""
    hist = step_times(-HISTORY_STEPS, 0)
    focal = [a for a in s.agents if a.is_focal]
    if len(focal) != 1 or focal[0].id != s.focal_id:
        raise InvalidScenario("exactly one focal agent matching focal_id required")
    f = focal[0]
    if f.agent_class is AgentClass.EGO:
        raise InvalidScenario("focal agent is ego")
    if s.horizon < EVAL_HORIZON - 1e-9:
        raise InvalidScenario("evaluable horizon below 4.1 s")
    if not f.fully_observed(s.horizon):
        raise InvalidScenario("focal agent not fully observed")
    for a in s.agents:
        if len(a.hist_t) != HISTORY_STEPS + 1 or np.max(np.abs(a.hist_t - hist)) > 1e-9:
            raise InvalidScenario(f"agent {a.id}: history must be 5 s at 10 Hz")
    for m in s.map:
        if m.semantic not in KEPT_SEMANTICS:
            raise InvalidScenario(f"map element {m.id} has semantic {m.semantic}")


# ------------------------------------------------------------------------ flip


def _reflect(frame: FramePose) -> tuple[np.ndarray, np.ndarray]:
    c2, s2 = math.cos(2 * frame.heading), math.sin(2 * frame.heading)
    return np.array([[c2, s2], [s2, -c2]]), np.asarray(frame.origin)


def flip_scenario(s: HomogenizedScenario, frame: FramePose | None = None) -> HomogenizedScenario:
    """Mirror the scenario across the focal agent's longitudinal axis.

    Lateral coordinates in the focal frame change sign, turning left turns
    into right turns. Coordinates stay in the scenario's own frame. The
    frame is computed once from the unflipped scenario; it is invariant
    under the flip, so applying this twice is the identity.
    """
    frame = frame or s.focal_frame()
    r, o = _reflect(frame)

    def refl(xy):
        return (np.asarray(xy) - o) @ r.T + o

    agents = []
    for a in s.agents:
        fit = a.history
        curve = fit.curve.with_coeffs(refl(fit.curve.coeffs))
        agents.append(
            replace(
                a,
                hist_xy=np.where(a.hist_valid[:, None], refl(a.hist_xy), 0.0),
                fut_xy=np.where(a.fut_valid[:, None], refl(a.fut_xy), 0.0),
                history=replace(fit, curve=curve),
            )
        )
    elements = [
        replace(m, fit=replace(m.fit, curve=m.fit.curve.with_coeffs(refl(m.fit.curve.coeffs)))) for m in s.map
    ]
    return replace(s, agents=agents, map=elements, scenario_id=s.scenario_id)


# ------------------------------------------------------------------- stats


@dataclass(frozen=True)
class LaneStat:
    lane_id: str
    max_abs_curvature: float
    length_m: float


def lane_stats(scenarios: Iterable[HomogenizedScenario], samples: int = 1001) -> list[LaneStat]:
    """Max |curvature| and arc length of every fitted lane-center segment."""
    rows = []
    for s in scenarios:
        for m in s.map:
            if m.semantic != "lane_center":
                continue
            rows.append(
                LaneStat(f"{s.scenario_id}:{m.id}", max_abs_curvature(m.curve, samples), arc_length(m.curve))
            )
    return rows


def write_lane_stats(rows: Sequence[LaneStat], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lane_id", "max_abs_curvature", "length_m"])
    for r in rows:
        w.writerow([r.lane_id, repr(r.max_abs_curvature), repr(r.length_m)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def representation_floats(s: HomogenizedScenario) -> dict[str, int]:
    """Float counts of sample-based vs polynomial storage of histories and map."""
    samples = sum(2 * int(a.hist_valid.sum()) for a in s.agents)
    poly = sum(a.history.curve.coeffs.size for a in s.agents)
    for m in s.map:
        poly += m.curve.coeffs.size
        if m.fit.params is not None:
            samples += 2 * len(m.fit.params)
    return {"samples": samples, "polynomial": poly}


# --------------------------------------------------------------- persistence


def _obs(t, xy, valid) -> list[dict]:
    return [
        {"t": float(ti), "x": float(p[0]), "y": float(p[1]), "valid": bool(v)} for ti, p, v in zip(t, xy, valid)
    ]


def _unobs(rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.array([r["t"] for r in rows], dtype=float)
    xy = np.array([[r["x"], r["y"]] for r in rows], dtype=float).reshape(-1, 2)
    valid = np.array([r["valid"] for r in rows], dtype=bool)
    return t, xy, valid


def _fit_to_dict(fit: FitResult) -> dict:
    d = {"curve": fit.curve.to_dict(), "max_error": fit.max_error, "rms_error": fit.rms_error}
    if fit.flags:
        d["flags"] = list(fit.flags)
    if fit.params is not None:
        d["params"] = fit.params.tolist()
    return d


def _fit_from_dict(d: dict) -> FitResult:
    params = np.asarray(d["params"], dtype=float) if "params" in d else None
    return FitResult(
        PolyCurve2D.from_dict(d["curve"]), float(d["max_error"]), float(d["rms_error"]), tuple(d.get("flags", ())), params
    )


def scenario_to_dict(s: HomogenizedScenario) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "homogenized",
        "scenario_id": s.scenario_id,
        "source": s.source.value,
        "focal_id": s.focal_id,
        "horizon": s.horizon,
        "agents": [
            {
                "id": a.id,
                "class": a.agent_class.value,
                "is_focal": a.is_focal,
                "observations": _obs(a.hist_t, a.hist_xy, a.hist_valid),
                "future": _obs(a.fut_t, a.fut_xy, a.fut_valid),
                "history_fit": _fit_to_dict(a.history),
            }
            for a in s.agents
        ],
        "map": [{"id": m.id, "semantic": m.semantic, **_fit_to_dict(m.fit)} for m in s.map],
    }


def scenario_from_dict(d: dict) -> HomogenizedScenario:
    if d.get("version") != FORMAT_VERSION:
        raise InvalidScenario(f"unsupported scenario version {d.get('version')}")
    agents = []
    for a in d["agents"]:
        ht, hxy, hv = _unobs(a["observations"])
        ft, fxy, fv = _unobs(a["future"])
        ac = AgentClass(a["class"])
        fit = _fit_from_dict(a["history_fit"]) if "history_fit" in a else _fit_history(ht, hxy, hv, ac)
        agents.append(Agent(a["id"], ac, bool(a["is_focal"]), ht, hxy, hv, ft, fxy, fv, fit))
    elements = [MapElement(m.get("id", str(i)), m["semantic"], _fit_from_dict(m)) for i, m in enumerate(d["map"])]
    return HomogenizedScenario(
        d.get("scenario_id", ""), Source(d["source"]), d["focal_id"], float(d["horizon"]), agents, elements
    )


def raw_to_dict(r: RawScenario) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "raw",
        "scenario_id": r.scenario_id,
        "source": r.source.value,
        "current_time": r.current_time,
        "agents": [
            {"id": a.id, "class": AgentClass(a.agent_class).value, "is_focal": a.is_focal, "observations": _obs(a.t, a.xy, a.valid)}
            for a in r.agents
        ],
        "map": [
            {"id": e.id, "semantic": e.semantic, "points": np.asarray(e.points).tolist(), "attributes": e.attributes}
            for e in r.map
        ],
    }


def raw_from_dict(d: dict) -> RawScenario:
    if d.get("version") != FORMAT_VERSION:
        raise InvalidScenario(f"unsupported scenario version {d.get('version')}")
    agents = []
    for a in d["agents"]:
        t, xy, v = _unobs(a["observations"])
        agents.append(RawAgent(a["id"], AgentClass(a["class"]), t, xy, v, bool(a.get("is_focal", False))))
    elements = [
        RawMapElement(e["id"], e["semantic"], np.asarray(e["points"], dtype=float), e.get("attributes", {}))
        for e in d["map"]
    ]
    return RawScenario(d.get("scenario_id", ""), Source(d["source"]), float(d["current_time"]), agents, elements)


def dumps(obj: HomogenizedScenario | RawScenario) -> str:
    d = scenario_to_dict(obj) if isinstance(obj, HomogenizedScenario) else raw_to_dict(obj)
    return json.dumps(d, indent=None, separators=(",", ":"))


def loads(text: str) -> HomogenizedScenario | RawScenario:
    d = json.loads(text)
    return raw_from_dict(d) if d.get("kind") == "raw" else scenario_from_dict(d)


def save(obj: HomogenizedScenario | RawScenario, path: str | Path) -> None:
    Path(path).write_text(dumps(obj))


def load(path: str | Path) -> HomogenizedScenario | RawScenario:
    return loads(Path(path).read_text())


def load_dir(path: str | Path, pattern: str = "*.scn.json") -> list[HomogenizedScenario]:
    files = sorted(Path(path).glob(pattern)) if Path(path).is_dir() else [Path(path)]
    return [load(f) for f in files]
