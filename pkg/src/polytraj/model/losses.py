"""Displacement losses for the three training variants."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Batch, Variant
from .reconstruct import sample_states


@dataclass
class LossBreakdown:
    total: Tensor
    reg: float
    cls: float
    uni: float
    n_excluded: int  # agents the variant would supervise but lacking ground truth


def ade(states: Tensor, gt: np.ndarray, step_mask: np.ndarray, fut_t: np.ndarray) -> Tensor:
    """Average displacement per mode.

    states (B, A, K, 14); gt (B, A, T, 2); step_mask (B, T) -> (B, A, K).
    """
    pos = sample_states(states, fut_t)  # (B, A, K, T, 2)
    d = ag.norm(pos - gt[:, :, None], axis=-1)  # (B, A, K, T)
    w = step_mask / np.maximum(step_mask.sum(axis=-1, keepdims=True), 1)
    return (d * w[:, None, None, :]).sum(axis=-1)


def multimodal_terms(ade_k: Tensor, probs: Tensor, select: np.ndarray) -> tuple[Tensor, Tensor]:
    """Mean over selected agents of min_k ADE and of sum_k p_k ADE_k."""
    n = max(int(select.sum()), 1)
    w = select / n
    reg = (ag.tmin(ade_k, axis=-1) * w).sum()
    cls = ((probs * ade_k).sum(axis=-1) * w).sum()
    return reg, cls


def compute_loss(variant: Variant | str, out: dict[str, Tensor], batch: Batch) -> LossBreakdown:
    """Total loss for ``variant`` from network outputs on ``batch``.

    EP-F: focal reg + cls plus uni-modal reg over non-focal agents.
    EP-Q: reg + cls over every agent.
    EP-noAug: focal reg + cls.
    """
    variant = Variant(variant)
    eligible = batch.eligible
    focal = batch.is_focal
    ade_k = ade(out["states"], batch.gt, batch.step_mask, batch.fut_t)
    if variant is Variant.EP_Q:
        supervised = batch.a_mask
        sel = eligible
    else:
        supervised = focal
        sel = eligible & focal
    reg, cls = multimodal_terms(ade_k, out["probs"], sel)
    total = reg + cls
    uni_val = 0.0
    n_excluded = int((supervised & ~eligible).sum())
    if variant is Variant.EP_F:
        others = batch.a_mask & ~focal
        sel_u = eligible & others
        n_excluded += int((others & ~eligible).sum())
        if sel_u.any():
            ade_u = ade(out["uni_states"], batch.gt, batch.step_mask, batch.fut_t)[..., 0]
            uni = (ade_u * (sel_u / sel_u.sum())).sum()
            total = total + uni
            uni_val = uni.item()
    return LossBreakdown(total, reg.item(), cls.item(), uni_val, n_excluded)
