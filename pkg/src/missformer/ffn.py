"""Feed-forward variants with a depthwise convolution for local context.

The enhanced variants wrap the convolution in a normalized skip so the
expanded features stay aligned: ``y1 = LN(u + conv(u))`` and, in the
recursive form, ``y_i = LN(u + y_{i-1})`` with per-step LayerNorm
parameters. ``inner`` omits the outer residual so callers that add their own
residual (the context bridge) can reuse the same machinery.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import DepthwiseConv2d, LayerNorm, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor


@dataclass(frozen=True)
class FfnConfig:
    channels: int
    steps: int = 1
    hidden: int | None = None  # defaults to 4*channels

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"recursive steps must be >= 1, got {self.steps}")

    @property
    def expansion(self) -> int:
        return self.hidden if self.hidden is not None else 4 * self.channels


def tokens_to_grid(x: Tensor, hw: tuple[int, int]) -> Tensor:
    """(B, H*W, C) -> (B, C, H, W), row-major token order."""
    b, n, c = x.shape
    h, w = hw
    if h * w != n:
        raise ShapeError(f"token count {n} does not fill grid {hw}")
    return T.permute(T.reshape(x, (b, h, w, c)), (0, 3, 1, 2))


def grid_to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C)."""
    b, c, h, w = x.shape
    return T.reshape(T.permute(x, (0, 2, 3, 1)), (b, h * w, c))


class SimpleEnhancedMixFfn(Module):
    """Single-step form: ``FC2(GELU(LN(conv(u) + u))) + x`` with u = FC1(x)."""

    def __init__(self, cfg: FfnConfig, rng: np.random.Generator):
        e = cfg.expansion
        self.fc1 = Linear(cfg.channels, e, rng)
        self.conv = DepthwiseConv2d(e, rng)
        self.norm = LayerNorm(e)
        self.fc2 = Linear(e, cfg.channels, rng)

    def inner(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        u = self.fc1(x)
        c = grid_to_tokens(self.conv(tokens_to_grid(u, hw)))
        y = self.norm(c + u)
        return self.fc2(T.gelu(y))

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        return self.inner(x, hw) + x


class EnhancedMixFfn(Module):
    """Recursive form: m normalized skips, each step with its own LayerNorm."""

    def __init__(self, cfg: FfnConfig, rng: np.random.Generator):
        e = cfg.expansion
        self.steps = cfg.steps
        self.fc1 = Linear(cfg.channels, e, rng)
        self.conv = DepthwiseConv2d(e, rng)
        self.norms = [LayerNorm(e) for _ in range(cfg.steps)]
        self.fc2 = Linear(e, cfg.channels, rng)

    def inner(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        u = self.fc1(x)
        c = grid_to_tokens(self.conv(tokens_to_grid(u, hw)))
        y = self.norms[0](c + u)
        for norm in self.norms[1:]:
            y = norm(y + u)
        return self.fc2(T.gelu(y))

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        return self.inner(x, hw) + x


class PlainMixFfn(Module):
    """Convolution dropped between the FCs with no skip or LN.

    Baseline for ablations only; the enhanced variants are the production
    paths.
    """

    def __init__(self, cfg: FfnConfig, rng: np.random.Generator):
        e = cfg.expansion
        self.fc1 = Linear(cfg.channels, e, rng)
        self.conv = DepthwiseConv2d(e, rng)
        self.fc2 = Linear(e, cfg.channels, rng)

    def inner(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        u = self.fc1(x)
        c = grid_to_tokens(self.conv(tokens_to_grid(u, hw)))
        return self.fc2(T.gelu(c))

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        return self.inner(x, hw) + x


FFN_VARIANTS = {
    "enhanced": EnhancedMixFfn,
    "simple_enhanced": SimpleEnhancedMixFfn,
    "mix": PlainMixFfn,
}


def make_ffn(variant: str, cfg: FfnConfig, rng: np.random.Generator) -> Module:
    try:
        cls = FFN_VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown ffn variant {variant!r}; choose from {sorted(FFN_VARIANTS)}") from None
    if variant == "simple_enhanced" and cfg.steps != 1:
        raise ConfigError("simple_enhanced ffn has exactly one step")
    return cls(cfg, rng)
