"""Attention encoder and polynomial-state decoders."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..features import AGENT_CLASSES, MAP_SEMANTICS, FramePose, from_frame
from ..polycore import PolyCurve2D
from . import autograd as ag
from .autograd import Tensor
from .data import Batch, Variant
from .layers import MLP, AttentionBlock, Embedding, Module, parameter
from .reconstruct import reconstruct_trajectory

# output scaling of the 12 predicted numbers: p, v, a at 3 s then at 6 s
OUTPUT_SCALE = np.array([20.0, 20.0, 10.0, 10.0, 2.0, 2.0, 40.0, 40.0, 10.0, 10.0, 2.0, 2.0])

LR_BY_VARIANT = {Variant.EP_F: 1e-3, Variant.EP_NOAUG: 1e-3, Variant.EP_Q: 5e-4}
BATCH_BY_VARIANT = {Variant.EP_F: 64, Variant.EP_NOAUG: 64, Variant.EP_Q: 32}
EPOCHS_BY_VARIANT = {Variant.EP_F: 128, Variant.EP_NOAUG: 128, Variant.EP_Q: 64}


@dataclass
class EPConfig:
    variant: Variant = Variant.EP_F
    dim: int = 64
    blocks: int = 1  # attention blocks per stage
    heads: int = 4
    ffn_mult: int = 4
    modes: int = 6
    lr: float | None = None  # None: the variant default
    batch_size: int | None = None
    epochs: int | None = None
    warmup_iters: int = 60000
    schedule: str = "cosine"
    flip: bool = False
    max_iters: int | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if self.dim < 4:
            raise ValueError("dim must be >= 4")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.blocks < 0:
            raise ValueError("blocks must be >= 0")
        if self.schedule != "cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")
        if self.lr is None:
            self.lr = LR_BY_VARIANT[self.variant]
        if self.batch_size is None:
            self.batch_size = BATCH_BY_VARIANT[self.variant] * (2 if self.flip else 1)
        if self.epochs is None:
            self.epochs = EPOCHS_BY_VARIANT[self.variant]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EPConfig:
        return cls(**d)


@dataclass
class PredictionSet:
    """Predictions for one agent in its model frame."""

    agent_id: str
    states: np.ndarray  # (K, 14)
    probs: np.ndarray  # (K,)
    frame: FramePose = field(default_factory=FramePose)

    @property
    def modes(self) -> int:
        return len(self.probs)

    def curves(self, world: bool = False) -> list[PolyCurve2D]:
        out = [reconstruct_trajectory(s) for s in self.states]
        if world:
            out = [from_frame(c, self.frame) for c in out]
        return out


def _tensor(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=float))


class EPNet(Module):
    def __init__(self, config: EPConfig):
        rng = np.random.default_rng(config.seed)
        D = config.dim
        self.config = config
        self.agent_delta = MLP([10, D, D, D], rng)
        self.agent_pose = MLP([4, D, D, D], rng)
        self.agent_tw = MLP([2, D, D, D], rng)
        self.agent_class = Embedding(len(AGENT_CLASSES), D, rng)
        self.map_delta = MLP([6, D, D, D], rng)
        self.map_pose = MLP([4, D, D, D], rng)
        self.map_semantic = Embedding(len(MAP_SEMANTICS), D, rng)
        if config.variant.per_agent_frames:
            self.rel_mm = MLP([5, D, D], rng)
            self.rel_am = MLP([5, D, D], rng)
            self.rel_aa = MLP([5, D, D], rng)
        def stage(cross):
            return [AttentionBlock(D, config.heads, config.ffn_mult, rng, cross) for _ in range(config.blocks)]

        self.map_map = stage(False)
        self.agent_map = stage(True)
        self.agent_agent = stage(False)
        self.mode_queries = parameter(rng.normal(0.0, 1.0, (config.modes, D)))
        self.head = MLP([D, D, D, 12], rng)
        self.prob_head = MLP([D, D, 1], rng)
        if config.variant is Variant.EP_F:
            self.uni_head = MLP([D, D, D, 12], rng)

    # ---------------------------------------------------------------- encoder
    def encode(self, batch: Batch) -> tuple[Tensor, Tensor]:
        """Agent tokens (B, A, D) and map tokens (B, M, D)."""
        for name in ("a_delta", "a_pose", "a_tw", "m_delta", "m_pose"):
            if not np.all(np.isfinite(getattr(batch, name))):
                raise ValueError(f"non-finite input {name}")
        ta = (
            self.agent_delta(_tensor(batch.a_delta))
            + self.agent_pose(_tensor(batch.a_pose))
            + self.agent_tw(_tensor(batch.a_tw))
            + self.agent_class(batch.a_cls)
        )
        tm = self.map_delta(_tensor(batch.m_delta)) + self.map_pose(_tensor(batch.m_pose)) + self.map_semantic(batch.m_sem)
        rel = batch.rel_aa is not None and hasattr(self, "rel_aa")
        r_mm = self.rel_mm(_tensor(batch.rel_mm)) if rel and tm.shape[1] else None
        r_am = self.rel_am(_tensor(batch.rel_am)) if rel and tm.shape[1] else None
        r_aa = self.rel_aa(_tensor(batch.rel_aa)) if rel else None
        for blk in self.map_map:
            tm = blk(tm, None, batch.m_mask, r_mm)
        for blk in self.agent_map:
            ta = blk(ta, tm, batch.m_mask, r_am)
        for blk in self.agent_agent:
            ta = blk(ta, None, batch.a_mask, r_aa)
        return ta, tm

    # --------------------------------------------------------------- decoders
    @staticmethod
    def _assemble(raw: Tensor, p_track: np.ndarray) -> Tensor:
        """Prepend the tracked position to the 12 scaled predictions."""
        pred = raw * OUTPUT_SCALE
        anchor = np.broadcast_to(p_track[..., None, :], pred.shape[:-1] + (2,))
        return ag.concat([_tensor(anchor), pred], axis=-1)

    def decode_multimodal(self, tokens: Tensor, p_track: np.ndarray) -> tuple[Tensor, Tensor]:
        """States (B, A, K, 14) and mode probabilities (B, A, K)."""
        modes = ag.expand_dims(tokens, -2) + self.mode_queries  # (B, A, K, D)
        states = self._assemble(self.head(modes), np.asarray(p_track, dtype=float))
        logits = self.prob_head(modes).reshape(modes.shape[:-1])
        return states, ag.softmax(logits, axis=-1)

    def decode_unimodal(self, tokens: Tensor, p_track: np.ndarray) -> Tensor:
        """States (B, A, 1, 14)."""
        head = getattr(self, "uni_head", None) or self.head
        raw = head(tokens)
        return self._assemble(ag.expand_dims(raw, -2), np.asarray(p_track, dtype=float))

    def forward(self, batch: Batch) -> dict[str, Tensor]:
        tokens, _ = self.encode(batch)
        states, probs = self.decode_multimodal(tokens, batch.p_track)
        out = {"tokens": tokens, "states": states, "probs": probs}
        if self.config.variant is Variant.EP_F:
            out["uni_states"] = self.decode_unimodal(tokens, batch.p_track)
        return out

    __call__ = forward

    def predict(self, batch: Batch, focal_only: bool = True) -> list[list[PredictionSet]]:
        """Per scenario, prediction sets for the focal agent (or every agent)."""
        out = self.forward(batch)
        states, probs = out["states"].data, out["probs"].data
        result = []
        for b, scene in enumerate(batch.scenes):
            n = 1 if focal_only else scene.n_agents
            result.append(
                [PredictionSet(scene.agent_ids[i], states[b, i].copy(), probs[b, i].copy(), scene.frames[i]) for i in range(n)]
            )
        return result


def count_parameters(config: EPConfig) -> int:
    """Parameter count of the network built from ``config``."""
    return EPNet(config).num_parameters()
