"""Context bridge: joint attention over all encoder scales.

Each stage's tokens are folded down to the common width (stage-1 channels),
trading channels for sequence length, and concatenated into one sequence.
A bridge layer attends over the whole sequence (keys/values spatially
reduced per segment on its native grid), renormalizes the residual, then
runs one feed-forward per scale at its native resolution before stitching
the segments back together.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import SpatialReduction, attend
from .ffn import EnhancedMixFfn, FfnConfig
from .module import LayerNorm, Linear, Module
from .tensor import ConfigError, Tensor


@dataclass(frozen=True)
class BridgeConfig:
    enabled: bool = True
    depth: int = 4
    stages: tuple[int, ...] = (1, 2, 3, 4)
    ffn_steps: int = 1

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigError(f"bridge depth must be >= 0, got {self.depth}")
        stages = tuple(self.stages)
        if not stages or any(s not in (1, 2, 3, 4) for s in stages) or len(set(stages)) != len(stages):
            raise ConfigError(f"bridge stages must be a distinct subset of 1..4, got {stages}")
        object.__setattr__(self, "stages", tuple(sorted(stages)))
        if self.ffn_steps < 1:
            raise ConfigError(f"bridge ffn_steps must be >= 1, got {self.ffn_steps}")


@dataclass(frozen=True)
class BridgeMeta:
    """Geometry of a packed sequence: where each scale's segment lives."""

    width: int
    grids: tuple[tuple[int, int], ...]
    channels: tuple[int, ...]
    lengths: tuple[int, ...]

    @property
    def offsets(self) -> tuple[int, ...]:
        out, total = [], 0
        for n in self.lengths:
            out.append(total)
            total += n
        return tuple(out)

    @property
    def total(self) -> int:
        return sum(self.lengths)


@dataclass
class BridgeTokens:
    merged: Tensor  # (B, N_total, width)
    meta: BridgeMeta


def pack(features: list[Tensor], grids, width: int) -> BridgeTokens:
    """Fold every scale to ``width`` channels and concatenate along tokens."""
    lengths = []
    channels = []
    folded = []
    for f, (h, w) in zip(features, grids):
        b, n, c = f.shape
        if c % width:
            raise ConfigError(f"bridge width {width} does not divide stage channels {c}")
        if n != h * w:
            raise ConfigError(f"stage feature with {n} tokens does not fill grid {h}x{w}")
        seg_len = n * c // width
        lengths.append(seg_len)
        channels.append(c)
        folded.append(T.reshape(f, (b, seg_len, width)))
    merged = folded[0] if len(folded) == 1 else T.concat(folded, axis=1)
    meta = BridgeMeta(
        width=width,
        grids=tuple(tuple(g) for g in grids),
        channels=tuple(channels),
        lengths=tuple(lengths),
    )
    return BridgeTokens(merged, meta)


def unpack(bt: BridgeTokens) -> list[Tensor]:
    """Exact inverse of ``pack``: split segments and restore native shapes."""
    b = bt.merged.shape[0]
    segments = T.split(bt.merged, list(bt.meta.lengths), axis=1)
    out = []
    for seg, (h, w), c in zip(segments, bt.meta.grids, bt.meta.channels):
        out.append(T.reshape(seg, (b, h * w, c)))
    return out


class BridgeAttention(Module):
    """Queries over the full merged sequence; keys/values reduced per scale."""

    def __init__(self, width: int, heads: int, channels, ratios, rng: np.random.Generator):
        self.heads = heads
        self.width = width
        self.q_proj = Linear(width, width, rng)
        self.k_proj = Linear(width, width, rng)
        self.v_proj = Linear(width, width, rng)
        self.out_proj = Linear(width, width, rng)
        self.reducers = [SpatialReduction(c, r, rng) for c, r in zip(channels, ratios)]
        self.norm = LayerNorm(width)

    def forward(self, x: Tensor, meta: BridgeMeta) -> Tensor:
        b = x.shape[0]
        segments = T.split(x, list(meta.lengths), axis=1)
        reduced = []
        for seg, reducer, (h, w), c in zip(segments, self.reducers, meta.grids, meta.channels):
            native = T.reshape(seg, (b, h * w, c))
            red = reducer(native, (h, w))
            reduced.append(T.reshape(red, (b, red.shape[1] * c // meta.width, meta.width)))
        kv = reduced[0] if len(reduced) == 1 else T.concat(reduced, axis=1)
        kv = self.norm(kv)
        ctx = attend(self.q_proj(x), self.k_proj(kv), self.v_proj(kv), self.heads)
        return self.out_proj(ctx)


class BridgeLayer(Module):
    """One bridge step: attention, renormalized residual, per-scale FFNs.

    The per-scale FFNs run without their own outer residual; the residual is
    added once, globally, after the segments are concatenated back.
    """

    def __init__(
        self,
        width: int,
        heads: int,
        channels,
        ratios,
        ffn_steps: int,
        rng: np.random.Generator,
    ):
        self.norm1 = LayerNorm(width)
        self.attn = BridgeAttention(width, heads, channels, ratios, rng)
        self.norm2 = LayerNorm(width)
        self.ffns = [EnhancedMixFfn(FfnConfig(c, steps=ffn_steps), rng) for c in channels]

    def forward(self, bt: BridgeTokens) -> BridgeTokens:
        meta = bt.meta
        b = bt.merged.shape[0]
        atten = self.attn(self.norm1(bt.merged), meta)
        res = self.norm2(atten + bt.merged)
        segments = T.split(res, list(meta.lengths), axis=1)
        outs = []
        for seg, ffn, (h, w), c, seg_len in zip(
            segments, self.ffns, meta.grids, meta.channels, meta.lengths
        ):
            native = T.reshape(seg, (b, h * w, c))
            outs.append(T.reshape(ffn.inner(native, (h, w)), (b, seg_len, meta.width)))
        merged = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
        return BridgeTokens(merged + res, meta)


class ContextBridge(Module):
    """pack -> depth x BridgeLayer -> unpack; disabled stages pass through."""

    def __init__(
        self,
        cfg: BridgeConfig,
        width: int,
        heads: int,
        stage_channels,
        stage_ratios,
        rng: np.random.Generator,
    ):
        self.cfg = cfg
        self.width = width
        self.stage_ids = tuple(s - 1 for s in cfg.stages)  # 0-based
        channels = [stage_channels[i] for i in self.stage_ids]
        ratios = [stage_ratios[i] for i in self.stage_ids]
        for c in channels:
            if c % width:
                raise ConfigError(f"bridge width {width} does not divide stage channels {c}")
        self.layers = [
            BridgeLayer(width, heads, channels, ratios, cfg.ffn_steps, rng)
            for _ in range(cfg.depth)
        ]

    def forward(self, features: list[Tensor], grids) -> list[Tensor]:
        bt = pack([features[i] for i in self.stage_ids], [grids[i] for i in self.stage_ids], self.width)
        for layer in self.layers:
            bt = layer(bt)
        bridged = unpack(bt)
        out = list(features)
        for i, f in zip(self.stage_ids, bridged):
            out[i] = f
        return out
