"""Control-point feature vectors for agents and map elements."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fitting import FitResult
from .polycore import Basis, PolyCurve2D, convert_basis, elevate_degree

DEGENERATE_EPS = 1e-6

AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist", "ego")
MAP_SEMANTICS = ("lane_center", "crosswalk")


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.atan2(math.sin(a), math.cos(a))
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class FramePose:
    origin: tuple[float, float] = (0.0, 0.0)
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def rotation(self) -> np.ndarray:
        """World-to-frame rotation."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    def points_to_frame(self, xy) -> np.ndarray:
        return (np.asarray(xy, dtype=float) - self.origin) @ self.rotation.T

    def points_from_frame(self, xy) -> np.ndarray:
        return np.asarray(xy, dtype=float) @ self.rotation + self.origin

    def vectors_to_frame(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.rotation.T

    def compose_inverse(self) -> FramePose:
        """The pose of the world frame expressed in this frame."""
        o = -self.rotation @ np.asarray(self.origin)
        return FramePose((o[0], o[1]), -self.heading)


IDENTITY = FramePose()


def to_frame(curve: PolyCurve2D, frame: FramePose) -> PolyCurve2D:
    """Express ``curve`` in ``frame`` (a rigid transform of its coefficients)."""
    if curve.basis is Basis.BERNSTEIN:
        return curve.with_coeffs(frame.points_to_frame(curve.coeffs))
    coeffs = frame.vectors_to_frame(curve.coeffs)
    coeffs[0] = frame.points_to_frame(curve.coeffs[0])
    return curve.with_coeffs(coeffs)


def from_frame(curve: PolyCurve2D, frame: FramePose) -> PolyCurve2D:
    return to_frame(curve, frame.compose_inverse())


def _heading_from_deltas(deltas: np.ndarray) -> tuple[np.ndarray, bool]:
    """Unit vector of the last non-degenerate delta, scanning backwards."""
    for d in deltas[::-1]:
        n = math.hypot(d[0], d[1])
        if n >= DEGENERATE_EPS:
            return d / n, False
    return np.array([1.0, 0.0]), True


@dataclass(frozen=True)
class AgentFeatures:
    deltas: np.ndarray  # (5, 2)
    pose: np.ndarray  # [x5, y5, cos, sin]
    time_window: np.ndarray  # (t_first_seen, t_last_seen)
    class_id: int
    degenerate: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate([self.deltas.ravel(), self.pose, self.time_window])

    def frame(self) -> FramePose:
        return FramePose((self.pose[0], self.pose[1]), math.atan2(self.pose[3], self.pose[2]))


@dataclass(frozen=True)
class MapFeatures:
    deltas: np.ndarray  # (3, 2)
    pose: np.ndarray  # [x0, y0, cos, sin]
    semantic_id: int
    degenerate: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate([self.deltas.ravel(), self.pose])

    def frame(self) -> FramePose:
        return FramePose((self.pose[0], self.pose[1]), math.atan2(self.pose[3], self.pose[2]))


def _bernstein(curve: PolyCurve2D, degree: int) -> np.ndarray:
    curve = convert_basis(curve, Basis.BERNSTEIN)
    if curve.degree < degree:
        curve = elevate_degree(curve, degree)
    if curve.degree != degree:
        raise ValueError(f"expected degree {degree}, got {curve.degree}")
    return curve.coeffs


def agent_features(
    history: PolyCurve2D,
    time_window: tuple[float, float],
    agent_class: int | str,
    frame: FramePose = IDENTITY,
    degree: int = 5,
) -> AgentFeatures:
    """Deltas, reference pose and time window of a fitted history.

    Lower-degree fits are degree-elevated first. A degenerate final delta
    falls back to the most recent usable delta, then to heading (1, 0).
    """
    ctrl = frame.points_to_frame(_bernstein(history, degree))
    deltas = np.diff(ctrl, axis=0)
    heading, degenerate = _heading_from_deltas(deltas)
    pose = np.array([ctrl[-1, 0], ctrl[-1, 1], heading[0], heading[1]])
    class_id = AGENT_CLASSES.index(agent_class) if isinstance(agent_class, str) else int(agent_class)
    return AgentFeatures(deltas, pose, np.asarray(time_window, dtype=float), class_id, degenerate)


def map_features(fit: FitResult | PolyCurve2D, frame: FramePose = IDENTITY, semantic: int | str = 0) -> MapFeatures:
    """Deltas and reference pose (first control point, first delta direction)."""
    curve = fit.curve if isinstance(fit, FitResult) else fit
    ctrl = frame.points_to_frame(_bernstein(curve, 3))
    deltas = np.diff(ctrl, axis=0)
    n = math.hypot(*deltas[0])
    degenerate = False
    if n >= DEGENERATE_EPS:
        heading = deltas[0] / n
    else:
        heading, degenerate = _heading_from_deltas(deltas[::-1])
    pose = np.array([ctrl[0, 0], ctrl[0, 1], heading[0], heading[1]])
    sem = MAP_SEMANTICS.index(semantic) if isinstance(semantic, str) else int(semantic)
    return MapFeatures(deltas, pose, sem, degenerate)


def history_frame(history: PolyCurve2D) -> FramePose:
    """Frame at the tracked current position, aligned with the last delta."""
    f = agent_features(history, (0.0, 0.0), 0, IDENTITY, degree=max(history.degree, 1))
    return f.frame()


def control_points_from_features(f: AgentFeatures | MapFeatures) -> np.ndarray:
    """Rebuild control points from the reference point and the deltas."""
    ref = f.pose[:2]
    if isinstance(f, AgentFeatures):
        back = np.cumsum(f.deltas[::-1], axis=0)
        return np.vstack([ref - back[::-1], ref])
    return np.vstack([ref, ref + np.cumsum(f.deltas, axis=0)])


def relative_pose(query: FramePose, key: FramePose) -> np.ndarray:
    """[dx, dy, distance, sin, cos] of ``key`` seen from ``query``."""
    d = query.points_to_frame(np.asarray(key.origin))
    dth = key.heading - query.heading
    return np.array([d[0], d[1], math.hypot(d[0], d[1]), math.sin(dth), math.cos(dth)])
