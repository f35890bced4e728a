"""Scenario-to-array conversion and padded batching for the network."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ..features import FramePose, agent_features, history_frame, map_features, relative_pose
from ..scenario import TRAIN_HORIZON, HomogenizedScenario

# input scaling so that features are O(1)
DELTA_SCALE = 5.0
POSE_SCALE = 20.0
TIME_SCALE = 5.0
REL_SCALE = 20.0


class Variant(str, enum.Enum):
    EP_F = "ep-f"
    EP_Q = "ep-q"
    EP_NOAUG = "ep-noaug"

    @property
    def per_agent_frames(self) -> bool:
        return self is Variant.EP_Q


@dataclass
class SceneArrays:
    """One scenario in model frames; agent 0 is the focal agent."""

    scenario_id: str
    agent_ids: list[str]
    a_delta: np.ndarray  # (A, 10)
    a_pose: np.ndarray  # (A, 4)
    a_tw: np.ndarray  # (A, 2)
    a_cls: np.ndarray  # (A,)
    m_delta: np.ndarray  # (M, 6)
    m_pose: np.ndarray  # (M, 4)
    m_sem: np.ndarray  # (M,)
    frames: list[FramePose]  # model frame of each agent
    p_track: np.ndarray  # (A, 2) in the agent's model frame
    fut_t: np.ndarray  # (T,)
    gt: np.ndarray  # (A, T, 2) in the agent's model frame
    gt_valid: np.ndarray  # (A, T)
    rel_aa: np.ndarray | None = None  # (A, A, 5)
    rel_am: np.ndarray | None = None  # (A, M, 5)
    rel_mm: np.ndarray | None = None  # (M, M, 5)

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)


def _frame_of(pose: np.ndarray) -> FramePose:
    return FramePose((pose[0], pose[1]), math.atan2(pose[3], pose[2]))


def scene_arrays(s: HomogenizedScenario, variant: Variant | str, horizon: float = TRAIN_HORIZON) -> SceneArrays:
    variant = Variant(variant)
    agents = [s.focal] + [a for a in s.agents if a.id != s.focal_id]
    focal_frame = s.focal_frame()
    keep = s.focal.fut_t <= horizon + 1e-9
    fut_t = s.focal.fut_t[keep]

    if variant.per_agent_frames:
        a_frames = [history_frame(a.history.curve) for a in agents]
        m_frames = [_frame_of(map_features(m.fit).pose) for m in s.map]
    else:
        a_frames = [focal_frame] * len(agents)
        m_frames = [focal_frame] * len(s.map)

    af = [agent_features(a.history.curve, a.time_window, a.agent_class.value, f) for a, f in zip(agents, a_frames)]
    mf = [map_features(m.fit, f, m.semantic) for m, f in zip(s.map, m_frames)]
    n_a, n_m = len(af), len(mf)
    arr = SceneArrays(
        scenario_id=s.scenario_id,
        agent_ids=[a.id for a in agents],
        a_delta=np.array([f.deltas.ravel() for f in af]).reshape(n_a, 10),
        a_pose=np.array([f.pose for f in af]).reshape(n_a, 4),
        a_tw=np.array([f.time_window for f in af]).reshape(n_a, 2),
        a_cls=np.array([f.class_id for f in af], dtype=np.intp),
        m_delta=np.array([f.deltas.ravel() for f in mf]).reshape(n_m, 6),
        m_pose=np.array([f.pose for f in mf]).reshape(n_m, 4),
        m_sem=np.array([f.semantic_id for f in mf], dtype=np.intp),
        frames=a_frames,
        p_track=np.array([f.points_to_frame(a.p_track) for a, f in zip(agents, a_frames)]).reshape(n_a, 2),
        fut_t=fut_t,
        gt=np.array([f.points_to_frame(a.fut_xy[keep]) for a, f in zip(agents, a_frames)]).reshape(n_a, len(fut_t), 2),
        gt_valid=np.array([a.fut_valid[keep] for a in agents]).reshape(n_a, len(fut_t)),
    )
    if variant.per_agent_frames:
        arr.rel_aa = _rel(a_frames, a_frames)
        arr.rel_am = _rel(a_frames, m_frames)
        arr.rel_mm = _rel(m_frames, m_frames)
    return arr


def _rel(queries: list[FramePose], keys: list[FramePose]) -> np.ndarray:
    out = np.zeros((len(queries), len(keys), 5))
    for i, q in enumerate(queries):
        for j, k in enumerate(keys):
            out[i, j] = relative_pose(q, k)
    return out


@dataclass
class Batch:
    scenes: list[SceneArrays]
    a_delta: np.ndarray  # (B, A, 10), scaled
    a_pose: np.ndarray
    a_tw: np.ndarray
    a_cls: np.ndarray
    a_mask: np.ndarray  # (B, A)
    m_delta: np.ndarray
    m_pose: np.ndarray
    m_sem: np.ndarray
    m_mask: np.ndarray  # (B, M)
    p_track: np.ndarray  # (B, A, 2), unscaled
    fut_t: np.ndarray  # (T,)
    step_mask: np.ndarray  # (B, T) steps the scenario provides
    gt: np.ndarray  # (B, A, T, 2)
    gt_valid: np.ndarray  # (B, A, T)
    rel_aa: np.ndarray | None = None  # scaled
    rel_am: np.ndarray | None = None
    rel_mm: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.scenes)

    @property
    def is_focal(self) -> np.ndarray:
        out = np.zeros_like(self.a_mask)
        out[:, 0] = self.a_mask[:, 0]
        return out

    @property
    def eligible(self) -> np.ndarray:
        """Agents whose ground truth covers every provided step."""
        covered = (self.gt_valid | ~self.step_mask[:, None, :]).all(axis=-1)
        return self.a_mask & covered & self.step_mask.any(axis=-1)[:, None]


def _pad(arrays: list[np.ndarray], shape: tuple, dtype=float) -> np.ndarray:
    out = np.zeros((len(arrays),) + shape, dtype=dtype)
    for i, a in enumerate(arrays):
        out[(i,) + tuple(slice(0, n) for n in a.shape)] = a
    return out


def _scale_rel(r: np.ndarray) -> np.ndarray:
    r = r.copy()
    r[..., :3] /= REL_SCALE
    return r


def collate(scenes: list[SceneArrays]) -> Batch:
    if not scenes:
        raise ValueError("empty batch")
    A = max(s.n_agents for s in scenes)
    M = max(len(s.m_sem) for s in scenes)
    longest = max(scenes, key=lambda s: len(s.fut_t))
    fut_t = longest.fut_t
    T = len(fut_t)
    for s in scenes:
        if not np.allclose(s.fut_t, fut_t[: len(s.fut_t)]):
            raise ValueError("scenarios in a batch must share future timestamps")
    a_pose = _pad([s.a_pose for s in scenes], (A, 4))
    a_pose[..., :2] /= POSE_SCALE
    m_pose = _pad([s.m_pose for s in scenes], (M, 4))
    m_pose[..., :2] /= POSE_SCALE
    b = Batch(
        scenes=scenes,
        a_delta=_pad([s.a_delta for s in scenes], (A, 10)) / DELTA_SCALE,
        a_pose=a_pose,
        a_tw=_pad([s.a_tw for s in scenes], (A, 2)) / TIME_SCALE,
        a_cls=_pad([s.a_cls for s in scenes], (A,), np.intp),
        a_mask=_pad([np.ones(s.n_agents, bool) for s in scenes], (A,), bool),
        m_delta=_pad([s.m_delta for s in scenes], (M, 6)) / DELTA_SCALE,
        m_pose=m_pose,
        m_sem=_pad([s.m_sem for s in scenes], (M,), np.intp),
        m_mask=_pad([np.ones(len(s.m_sem), bool) for s in scenes], (M,), bool),
        p_track=_pad([s.p_track for s in scenes], (A, 2)),
        fut_t=fut_t,
        step_mask=_pad([np.ones(len(s.fut_t), bool) for s in scenes], (T,), bool),
        gt=_pad([s.gt for s in scenes], (A, T, 2)),
        gt_valid=_pad([s.gt_valid for s in scenes], (A, T), bool),
    )
    if scenes[0].rel_aa is not None:
        b.rel_aa = _scale_rel(_pad([s.rel_aa for s in scenes], (A, A, 5)))
        b.rel_am = _scale_rel(_pad([s.rel_am for s in scenes], (A, M, 5)))
        b.rel_mm = _scale_rel(_pad([s.rel_mm for s in scenes], (M, M, 5)))
    return b

