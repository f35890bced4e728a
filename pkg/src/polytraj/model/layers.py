"""Parameterized layers on the autograd tape."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor

NEG_INF = -1e30


class Module:
    """Container whose parameters are discovered by walking attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in own.items():
            v = np.asarray(state[k], dtype=p.data.dtype)
            if v.shape != p.shape:
                raise ValueError(f"{k}: shape {v.shape} != {p.shape}")
            p.data[...] = v

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=ag.DTYPE), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = parameter(rng.uniform(-bound, bound, (n_in, n_out)))
        self.bias = parameter(rng.uniform(-bound, bound, n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator):
        self.table = parameter(rng.normal(0.0, 1.0, (n, dim)))

    def __call__(self, index) -> Tensor:
        index = np.asarray(index)
        if index.size and (index.min() < 0 or index.max() >= self.table.shape[0]):
            raise IndexError(f"embedding index out of range [0, {self.table.shape[0]})")
        return ag.take(self.table, index)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.weight, self.bias, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with an optional per-pair key/value offset.

    ``pair`` (B, Q, K, D) is added to both the key and the value of key ``j``
    as seen from query ``i``; it carries relative-pose information.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, ctx: Tensor, key_mask: np.ndarray, pair: Tensor | None = None) -> Tensor:
        b, nq, d = x.shape
        nk = ctx.shape[1]
        dh = d // self.heads
        q = self._split(self.q(x))  # (B, H, Q, dh)
        k = self._split(self.k(ctx))
        v = self._split(self.v(ctx))
        logits = ag.matmul(q, k.swapaxes(-1, -2))  # (B, H, Q, K)
        if pair is not None:
            r = pair.reshape(b, nq, nk, self.heads, dh).transpose(0, 3, 1, 2, 4)  # (B, H, Q, K, dh)
            logits = logits + (ag.expand_dims(q, 3) * r).sum(axis=-1)
        logits = logits * (1.0 / math.sqrt(dh))
        mask = np.asarray(key_mask, dtype=bool)[:, None, None, :]
        logits = ag.where(mask, logits, np.full(logits.shape, NEG_INF))
        att = ag.softmax(logits, axis=-1)
        out = ag.matmul(att, v)  # (B, H, Q, dh)
        if pair is not None:
            out = out + (ag.expand_dims(att, -1) * r).sum(axis=3)
        out = out.transpose(0, 2, 1, 3).reshape(b, nq, d)
        return self.o(out)


class AttentionBlock(Module):
    """Pre-layer-norm block: x + MHA(LN(x), LN(ctx)), then x + FFN(LN(x)).

    Query rows without any valid key are passed through unchanged.
    """

    def __init__(self, dim: int, heads: int, ffn_mult: int, rng: np.random.Generator, cross: bool):
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim) if cross else None
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm_ff = LayerNorm(dim)
        self.ffn = MLP([dim, ffn_mult * dim, dim], rng)

    def __call__(self, x: Tensor, ctx: Tensor | None, key_mask: np.ndarray, pair: Tensor | None = None) -> Tensor:
        key_mask = np.asarray(key_mask, dtype=bool)
        h = self.norm_q(x)
        if ctx is None:
            c = h
        else:
            c = self.norm_kv(ctx)
        if key_mask.shape[1] == 0 or not key_mask.any():
            return x
        gate = key_mask.any(axis=1).astype(float)[:, None, None]
        x = x + self.attn(h, c, key_mask, pair) * gate
        return x + self.ffn(self.norm_ff(x)) * gate
