"""Mini-batch training with Adam and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..scenario import HomogenizedScenario, flip_scenario
from .data import SceneArrays, Variant, collate, scene_arrays
from .layers import Module
from .losses import compute_loss
from .network import EPConfig, EPNet

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_HEADER = ("epoch", "iter", "lr", "loss_total", "loss_reg", "loss_cls", "val_minade6")
# the warmup may take at most this share of training (60k of ~400k iterations at full scale)
MAX_WARMUP_FRACTION = 0.15


class NumericalError(RuntimeError):
    pass


def lr_at(it: int, peak: float, warmup: int, total: int) -> float:
    """Linear warmup from 0 to ``peak`` over ``warmup`` iterations, then cosine decay to 0 at ``total``."""
    if it < warmup:
        return peak * it / warmup
    if total <= warmup:
        return peak
    frac = min((it - warmup) / (total - warmup), 1.0)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


def effective_warmup(warmup: int, total: int) -> int:
    return int(min(warmup, math.floor(MAX_WARMUP_FRACTION * total)))


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: EPNet
    log_rows: list[dict]
    n_params: int
    iterations: int
    excluded: int = 0
    history: list[float] = field(default_factory=list)  # per-iteration total loss

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LOG_HEADER, lineterminator="\n")
        w.writeheader()
        for r in self.log_rows:
            w.writerow(r)
        return buf.getvalue()


def prepare(scenarios: Sequence[HomogenizedScenario], variant: Variant, flip: bool = False) -> list[SceneArrays]:
    out = [scene_arrays(s, variant) for s in scenarios]
    if flip:
        out += [scene_arrays(flip_scenario(s), variant) for s in scenarios]
    return out


def _layer_norms(model: Module) -> dict[str, float]:
    return {k: float(np.linalg.norm(p.data)) for k, p in model.named_parameters()}


def evaluate_min_ade(model: EPNet, scenes: Sequence[SceneArrays], batch_size: int = 64) -> float:
    """Mean focal minADE over the scenes' provided future steps."""
    from .losses import ade

    vals = []
    for i in range(0, len(scenes), batch_size):
        b = collate(list(scenes[i : i + batch_size]))
        tokens, _ = model.encode(b)
        states, _ = model.decode_multimodal(tokens, b.p_track)
        a = ade(states, b.gt, b.step_mask, b.fut_t).data[:, 0].min(axis=-1)
        vals.extend(a[b.eligible[:, 0]].tolist())
    return float(np.mean(vals)) if vals else float("nan")


def train(
    config: EPConfig,
    train_set: Sequence[HomogenizedScenario],
    val_set: Sequence[HomogenizedScenario] = (),
    callback: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train a fresh network; deterministic given ``config.seed``."""
    if not train_set:
        raise ValueError("empty training set")
    variant = config.variant
    scenes = prepare(train_set, variant, config.flip)
    val_scenes = prepare(val_set, variant) if val_set else []
    model = EPNet(config)
    n_params = model.num_parameters()
    log.info("parameters: %d", n_params)
    rng = np.random.default_rng(config.seed + 1)
    bs = min(config.batch_size, len(scenes))
    per_epoch = math.ceil(len(scenes) / bs)
    total = config.epochs * per_epoch
    if config.max_iters is not None:
        total = min(total, config.max_iters)
    warmup = effective_warmup(config.warmup_iters, total)
    if warmup != config.warmup_iters:
        log.info("warmup shortened from %d to %d iterations", config.warmup_iters, warmup)
    opt = Adam(model.parameters(), config.lr)
    rows, history = [], []
    it = 0
    excluded = 0
    epoch = 0
    while it < total:
        order = rng.permutation(len(scenes))
        sums = np.zeros(3)
        count = 0
        for start in range(0, len(order), bs):
            if it >= total:
                break
            batch = collate([scenes[j] for j in order[start : start + bs]])
            opt.lr = lr_at(it, config.lr, warmup, total)
            model.zero_grad()
            out = model(batch)
            loss = compute_loss(variant, out, batch)
            value = loss.total.item()
            if not math.isfinite(value):
                norms = _layer_norms(model)
                worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} iteration {it} (batch ids "
                    f"{[scenes[j].scenario_id for j in order[start:start + bs]]}); largest layer norms {worst}"
                )
            loss.total.backward()
            opt.step()
            excluded += loss.n_excluded
            sums += (value, loss.reg, loss.cls)
            count += 1
            history.append(value)
            if callback:
                callback(it, value)
            it += 1
        val = evaluate_min_ade(model, val_scenes) if val_scenes else float("nan")
        mean = sums / max(count, 1)
        rows.append(
            {
                "epoch": epoch,
                "iter": it,
                "lr": f"{opt.lr:.6g}",
                "loss_total": f"{mean[0]:.6f}",
                "loss_reg": f"{mean[1]:.6f}",
                "loss_cls": f"{mean[2]:.6f}",
                "val_minade6": "" if math.isnan(val) else f"{val:.6f}",
            }
        )
        log.info("epoch %d iter %d loss %.4f", epoch, it, mean[0])
        epoch += 1
    return TrainResult(model, rows, n_params, it, excluded, history)


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(model: EPNet, path: str | Path, extra: dict | None = None) -> None:
    """Weights keyed by layer path, with the config as JSON metadata."""
    meta = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), "extra": extra or {}}
    arrays = {f"w/{k}": v for k, v in model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[EPNet, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        state = {k[2:]: z[k] for k in z.files if k.startswith("w/")}
    model = EPNet(EPConfig.from_dict(meta["config"]))
    model.load_state_dict(state)
    return model, meta
