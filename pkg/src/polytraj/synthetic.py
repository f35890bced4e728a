"""Synthetic raw scenarios standing in for real motion datasets.

Roads are chains of constant-curvature lane segments. Agents move along
lanes with constant-acceleration speed profiles and a slowly drifting lateral
offset, observed with Gaussian noise. Two configs with different lane
length/curvature distributions give an ID/OoD pair.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .scenario import (
    DT,
    AgentClass,
    HomogenizedScenario,
    RawAgent,
    RawMapElement,
    RawScenario,
    ScenarioRejected,
    Source,
    homogenize,
)

LANE_WIDTH = 3.5
SAMPLE_SPACING = 1.0


@dataclass(frozen=True)
class GeneratorConfig:
    profile: str = "a2like"
    lane_length: tuple[float, float] = (20.0, 60.0)  # meters, uniform
    lane_curvature: tuple[float, float] = (0.0, 0.03)  # 1/m, uniform magnitude, random sign
    straight_fraction: float = 0.3
    agent_count: tuple[int, int] = (2, 6)
    speed: tuple[float, float] = (4.0, 14.0)  # m/s for vehicles
    accel: tuple[float, float] = (-0.8, 0.8)
    noise_std: float = 0.05
    lanes_per_road: int = 2
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.lane_length
        if lo <= 0 or hi < lo:
            raise ValueError(f"infeasible lane_length {self.lane_length}")
        if self.lane_curvature[0] < 0 or self.lane_curvature[1] < self.lane_curvature[0]:
            raise ValueError(f"infeasible lane_curvature {self.lane_curvature}")
        if self.agent_count[0] < 1 or self.agent_count[1] < self.agent_count[0]:
            raise ValueError(f"infeasible agent_count {self.agent_count}")
        if self.speed[0] < 0 or self.speed[1] < self.speed[0]:
            raise ValueError(f"infeasible speed {self.speed}")
        if self.noise_std < 0 or not 0 <= self.straight_fraction <= 1:
            raise ValueError("noise_std and straight_fraction out of range")
        if self.lanes_per_road < 1:
            raise ValueError("lanes_per_road must be >= 1")
        Source(self.profile)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorConfig:
        d = dict(d)
        for k in ("lane_length", "lane_curvature", "agent_count", "speed", "accel"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ID-like: moderate lanes; OoD-like: long and nearly straight lanes
CONFIG_CURVY = GeneratorConfig(lane_length=(15.0, 40.0), lane_curvature=(0.01, 0.05), straight_fraction=0.1)
CONFIG_STRAIGHT = GeneratorConfig(
    profile="wolike", lane_length=(60.0, 150.0), lane_curvature=(0.0, 0.005), straight_fraction=0.6
)


@dataclass
class _Road:
    """Centerline of the rightmost lane sampled densely by arc length."""

    s: np.ndarray
    xy: np.ndarray
    heading: np.ndarray
    breaks: list[int] = field(default_factory=list)

    def at(self, s, offset=0.0):
        s = np.asarray(s, dtype=float)
        x = np.interp(s, self.s, self.xy[:, 0])
        y = np.interp(s, self.s, self.xy[:, 1])
        h = np.interp(s, self.s, np.unwrap(self.heading))
        return np.stack([x - np.sin(h) * offset, y + np.cos(h) * offset], axis=-1)


def _build_road(rng, cfg: GeneratorConfig, length: float, start, heading: float) -> _Road:
    ds = 0.05
    xs, hs, breaks = [np.asarray(start, float)], [heading], [0]
    p, h = np.asarray(start, float), heading
    total = 0.0
    while total < length:
        seg = rng.uniform(*cfg.lane_length)
        kappa = 0.0 if rng.random() < cfg.straight_fraction else rng.uniform(*cfg.lane_curvature) * rng.choice([-1, 1])
        n = max(int(round(seg / ds)), 1)
        for _ in range(n):
            h_mid = h + 0.5 * kappa * ds
            p = p + ds * np.array([math.cos(h_mid), math.sin(h_mid)])
            h = h + kappa * ds
            xs.append(p)
            hs.append(h)
        total += n * ds
        breaks.append(len(xs) - 1)
    xy = np.array(xs)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    return _Road(s, xy, np.array(hs), breaks)


def _lane_polylines(road: _Road, lane: int, road_id: str) -> list[RawMapElement]:
    out = []
    offset = lane * LANE_WIDTH
    for k, (a, b) in enumerate(zip(road.breaks[:-1], road.breaks[1:])):
        s0, s1 = road.s[a], road.s[b]
        n = max(int(math.ceil((s1 - s0) / SAMPLE_SPACING)), 3)
        pts = road.at(np.linspace(s0, s1, n + 1), offset)
        out.append(RawMapElement(f"{road_id}.l{lane}.{k}", "lane_center", np.round(pts, 6)))
    return out


def _boundaries(road: _Road, lanes: int, road_id: str) -> list[RawMapElement]:
    s = np.arange(0.0, road.s[-1], 2.0)
    out = []
    for j in range(lanes + 1):
        pts = road.at(s, (j - 0.5) * LANE_WIDTH)
        out.append(RawMapElement(f"{road_id}.b{j}", "lane_boundary", np.round(pts, 6)))
    return out


def _timeline(profile: Source) -> tuple[np.ndarray, float]:
    if profile is Source.WOLIKE:
        return np.round(np.arange(92) * DT, 10), 1.0
    return np.round(np.arange(111) * DT, 10), 5.0


def _track(rng, road: _Road, t, s0, v0, acc, offset, drift, noise):
    tt = t - t[0]
    v = np.maximum(v0 + acc * tt, 0.0)
    s = s0 + np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(tt))])
    s = np.clip(s, 0.0, road.s[-1])
    xy = road.at(s, offset + drift * tt)
    return xy + rng.normal(0.0, noise, xy.shape)


def generate_raw(config: GeneratorConfig, index: int) -> RawScenario:
    """One raw scenario; deterministic in (config.seed, index)."""
    config.validate()
    profile = Source(config.profile)
    rng = np.random.default_rng(config.seed ^ index)
    t, current = _timeline(profile)
    duration = t[-1] - t[0]
    vmax = config.speed[1] + max(config.accel[1], 0.0) * duration
    need = 20.0 + vmax * duration + 40.0

    heading = rng.uniform(-math.pi, math.pi)
    road = _build_road(rng, config, need, rng.uniform(-50, 50, 2), heading)
    elements: list[RawMapElement] = []
    for lane in range(config.lanes_per_road):
        elements += _lane_polylines(road, lane, "r0")
    elements += _boundaries(road, config.lanes_per_road, "r0")
    # a crosswalk across the road near the focal agent's current position
    s_cross = float(rng.uniform(30.0, min(80.0, road.s[-1] - 10.0)))
    c = road.at(s_cross, (config.lanes_per_road - 1) * LANE_WIDTH / 2)
    h = float(np.interp(s_cross, road.s, np.unwrap(road.heading)))
    half = config.lanes_per_road * LANE_WIDTH / 2 + 1.0
    n = np.array([-math.sin(h), math.cos(h)])
    cw = c + np.linspace(-half, half, 9)[:, None] * n
    elements.append(RawMapElement("cw0", "crosswalk", np.round(cw, 6), {"width": 3.0}))
    for k, e in enumerate(elements):
        if e.semantic == "lane_center" and rng.random() < 0.3:
            e.attributes["is_intersection"] = True

    n_agents = int(rng.integers(config.agent_count[0], config.agent_count[1] + 1))
    agents: list[RawAgent] = []
    pool = (AgentClass.VEHICLE, AgentClass.VEHICLE, AgentClass.CYCLIST, AgentClass.PEDESTRIAN)
    classes = [AgentClass.VEHICLE]
    for _ in range(n_agents - 1):
        classes.append(pool[int(rng.integers(len(pool)))])
    classes.append(AgentClass.EGO)
    for i, ac in enumerate(classes):
        if ac is AgentClass.PEDESTRIAN:
            v0, acc = rng.uniform(0.8, 1.8), 0.0
        elif ac is AgentClass.CYCLIST:
            v0, acc = rng.uniform(3.0, 7.0), rng.uniform(-0.3, 0.3)
        else:
            v0, acc = rng.uniform(*config.speed), rng.uniform(*config.accel)
        lane = int(rng.integers(0, config.lanes_per_road))
        offset = lane * LANE_WIDTH + rng.normal(0.0, 0.2)
        if ac is AgentClass.CYCLIST:
            offset -= 1.2
        drift = rng.normal(0.0, 0.05)
        s0 = rng.uniform(5.0, 25.0)
        xy = _track(rng, road, t, s0, v0, acc, offset, drift, config.noise_std)
        valid = np.ones(len(t), dtype=bool)
        agents.append(RawAgent(f"a{i}", ac, t.copy(), np.round(xy, 6), valid))

    # partial observability for some non-focal agents
    for a in agents[1:-1]:
        r = rng.random()
        if r < 0.2:
            a.valid[: int(rng.integers(10, 45))] = False
        elif r < 0.35:
            a.valid[int(rng.integers(60, len(t) - 5)) :] = False
    for a in agents:
        a.xy[~a.valid] = 0.0

    if profile is Source.WOLIKE:
        ego = agents[-1]
        ego.is_focal = True
        partial = next((a for a in agents[1:-1] if not a.valid.all()), None)
        cands = [ego] + ([partial] if partial is not None else [])
        others = [a for a in agents[:-1] if a not in cands]
        rng.shuffle(others)
        for a in cands + others[: max(1, len(others) // 2)]:
            a.is_focal = True
        # focal candidates come first in list order, ego first
        agents = cands + [a for a in others if a.is_focal] + [a for a in agents if not a.is_focal]
    else:
        agents[0].is_focal = True
    return RawScenario(f"{profile.value}-{config.seed}-{index:05d}", profile, current, agents, elements)


def generate_synthetic(config: GeneratorConfig, n: int, start: int = 0) -> list[HomogenizedScenario]:
    """``n`` homogenized scenarios. Rejected raw scenarios are regenerated
    with the next index, so the output always has length ``n``."""
    config.validate()
    out = []
    index = start
    while len(out) < n:
        try:
            out.append(homogenize(generate_raw(config, index)))
        except ScenarioRejected:
            pass
        index += 1
        if index - start > 20 * n + 100:
            raise RuntimeError("generator keeps producing rejected scenarios")
    return out
