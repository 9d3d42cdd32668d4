"""Transformer block assembly and every resolution-changing layer.

Patch embedding and merging are strided convolutions realized as im2col +
linear; expansion is the inverse move, a linear that fans each token out
into an fxf spatial block (row-major positions, channels contiguous per
position).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, EfficientSelfAttention
from .ffn import FfnConfig, make_ffn, tokens_to_grid
from .module import LayerNorm, Linear, Module
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class StageSpec:
    channels: int
    heads: int
    reduction: int
    blocks: int
    grid: tuple[int, int]


class EnhancedTransformerBlock(Module):
    """Pre-norm attention residual followed by the FFN's own outer residual."""

    def __init__(
        self,
        attn_cfg: AttentionConfig,
        ffn_cfg: FfnConfig,
        rng: np.random.Generator,
        ffn_variant: str = "enhanced",
    ):
        self.norm = LayerNorm(attn_cfg.channels)
        self.attn = EfficientSelfAttention(attn_cfg, rng)
        self.ffn = make_ffn(ffn_variant, ffn_cfg, rng)

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        x = x + self.attn(self.norm(x), hw)
        return self.ffn(x, hw)


class OverlapPatchEmbed(Module):
    """7x7 stride-4 pad-3 convolution into tokens, then LayerNorm."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.proj = Linear(in_channels * 49, out_channels, rng)
        self.norm = LayerNorm(out_channels)

    def forward(self, img: Tensor) -> tuple[Tensor, tuple[int, int]]:
        h, w = img.shape[2], img.shape[3]
        if h % 4 or w % 4:
            raise ShapeError(f"patch embed needs input divisible by 4, got {h}x{w}")
        patches = T.extract_patches(img, kernel=7, stride=4, padding=3)
        return self.norm(self.proj(patches)), (h // 4, w // 4)


class PatchMerge(Module):
    """3x3 stride-2 pad-1 convolution: grid halves, channels grow."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.proj = Linear(in_channels * 9, out_channels, rng)
        self.norm = LayerNorm(out_channels)

    def forward(self, x: Tensor, hw: tuple[int, int]) -> tuple[Tensor, tuple[int, int]]:
        h, w = hw
        if h % 2 or w % 2:
            raise ShapeError(f"patch merge needs an even grid, got {h}x{w}")
        patches = T.extract_patches(tokens_to_grid(x, hw), kernel=3, stride=2, padding=1)
        return self.norm(self.proj(patches)), (h // 2, w // 2)


class PatchExpand(Module):
    """Linear fan-out then pixel rearrangement: grid grows by ``factor``.

    Default output width is half the input (the factor-2 inverse of merging
    for dyadic schedules); pass ``out_channels`` explicitly where the decoder
    must land on a stage width like 512 -> 320. ``normalize=False`` drops the
    trailing LayerNorm (used by the final x4 expansion).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int | None = None,
        factor: int = 2,
        rng: np.random.Generator = None,
        normalize: bool = True,
    ):
        if out_channels is None:
            if in_channels % 2:
                raise ShapeError(f"patch expand default halving needs even channels, got {in_channels}")
            out_channels = in_channels // 2
        self.factor = factor
        self.out_channels = out_channels
        self.proj = Linear(in_channels, factor * factor * out_channels, rng)
        self.norm = LayerNorm(out_channels) if normalize else None

    def forward(self, x: Tensor, hw: tuple[int, int]) -> tuple[Tensor, tuple[int, int]]:
        b, n, _ = x.shape
        h, w = hw
        f, c = self.factor, self.out_channels
        e = T.reshape(self.proj(x), (b, h, w, f, f, c))
        e = T.permute(e, (0, 1, 3, 2, 4, 5))  # (B, H, f, W, f, C)
        out = T.reshape(e, (b, h * f * w * f, c))
        if self.norm is not None:
            out = self.norm(out)
        return out, (h * f, w * f)


def final_patch_expand(channels: int, rng: np.random.Generator) -> PatchExpand:
    """x4 expansion back to pixel resolution, channel count preserved."""
    return PatchExpand(channels, out_channels=channels, factor=4, rng=rng, normalize=False)
