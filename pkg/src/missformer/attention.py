"""Multi-head self-attention and its spatially reduced variant.

Queries always cover the full token sequence; the efficient variant shrinks
keys and values by folding each RxR block of the token grid into one token
(width C*R^2) and projecting back to C, cutting the quadratic attention cost
by R^2.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import LayerNorm, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    heads: int
    reduction_ratio: int = 1

    def __post_init__(self):
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.reduction_ratio < 1:
            raise ConfigError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")

    @property
    def d_head(self) -> int:
        return self.channels // self.heads


class FlopCounter:
    """Tallies the attention-core matmul FLOPs (QK^T and AV only)."""

    def __init__(self):
        self.core = 0

    def add(self, n: int):
        self.core += n


_active_counters: list[FlopCounter] = []


@contextmanager
def count_flops():
    counter = FlopCounter()
    _active_counters.append(counter)
    try:
        yield counter
    finally:
        _active_counters.remove(counter)


def _count_core(flops: int):
    for counter in _active_counters:
        counter.add(flops)


def attend(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """softmax(QK^T / sqrt(d_head)) V per head; q is (B,Nq,C), k/v (B,Nk,C)."""
    b, nq, c = q.shape
    nk = k.shape[1]
    d = c // heads
    qh = T.permute(T.reshape(q, (b, nq, heads, d)), (0, 2, 1, 3))
    kh = T.permute(T.reshape(k, (b, nk, heads, d)), (0, 2, 3, 1))
    vh = T.permute(T.reshape(v, (b, nk, heads, d)), (0, 2, 1, 3))
    _count_core(2 * b * heads * nq * d * nk)
    # scale the (small) query matrix rather than the N x N score matrix
    scores = T.matmul(T.mul(qh, 1.0 / np.sqrt(d)), kh)
    weights = T.softmax(scores, axis=-1)
    _count_core(2 * b * heads * nq * nk * d)
    ctx = T.matmul(weights, vh)
    return T.reshape(T.permute(ctx, (0, 2, 1, 3)), (b, nq, c))


class MultiHeadSelfAttention(Module):
    """Standard attention: keys and values from the full sequence."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        c = cfg.channels
        self.heads = cfg.heads
        self.q_proj = Linear(c, c, rng)
        self.k_proj = Linear(c, c, rng)
        self.v_proj = Linear(c, c, rng)
        self.out_proj = Linear(c, c, rng)

    def attend_tokens(self, x_q: Tensor, x_kv: Tensor) -> Tensor:
        ctx = attend(self.q_proj(x_q), self.k_proj(x_kv), self.v_proj(x_kv), self.heads)
        return self.out_proj(ctx)

    def forward(self, x: Tensor) -> Tensor:
        return self.attend_tokens(x, x)


class SpatialReduction(Module):
    """Fold each RxR grid block into one token and project C*R^2 back to C."""

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        self.ratio = ratio
        self.proj = Linear(channels * ratio * ratio, channels, rng)

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        b, n, c = x.shape
        h, w = hw
        r = self.ratio
        if h * w != n:
            raise ShapeError(f"spatial_reduce: grid {hw} does not hold {n} tokens")
        if h % r or w % r:
            raise ShapeError(f"spatial_reduce: ratio {r} does not divide grid {hw}")
        g = T.reshape(x, (b, h // r, r, w // r, r, c))
        g = T.permute(g, (0, 1, 3, 2, 4, 5))  # block-major, row-major within block
        g = T.reshape(g, (b, (h // r) * (w // r), r * r * c))
        return self.proj(g)


class EfficientSelfAttention(Module):
    """Attention with spatially reduced keys/values.

    ``reduction_norm=False`` makes the post-reduction LayerNorm a pass-through
    so an identity-initialized reduction reproduces standard attention at R=1.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, reduction_norm: bool = True):
        c = cfg.channels
        self.heads = cfg.heads
        self.q_proj = Linear(c, c, rng)
        self.k_proj = Linear(c, c, rng)
        self.v_proj = Linear(c, c, rng)
        self.out_proj = Linear(c, c, rng)
        self.reduce = SpatialReduction(c, cfg.reduction_ratio, rng)
        self.norm = LayerNorm(c) if reduction_norm else None

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        kv = self.reduce(x, hw)
        if self.norm is not None:
            kv = self.norm(kv)
        ctx = attend(self.q_proj(x), self.k_proj(kv), self.v_proj(kv), self.heads)
        return self.out_proj(ctx)


def core_attention_flops(batch: int, n_q: int, n_kv: int, channels: int) -> int:
    """Closed-form QK^T + AV FLOPs; what ``count_flops`` observes."""
    return 4 * batch * n_q * n_kv * channels
