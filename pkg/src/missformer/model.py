"""End-to-end segmentation model: hierarchical encoder, optional context
bridge, mirrored decoder with summation (or concatenation) skips, and a
linear per-pixel head.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blocks import (
    EnhancedTransformerBlock,
    OverlapPatchEmbed,
    PatchExpand,
    PatchMerge,
    StageSpec,
    final_patch_expand,
)
from .attention import AttentionConfig
from .bridge import BridgeConfig, ContextBridge
from .ffn import FFN_VARIANTS, FfnConfig
from .module import Linear, Module
from .serialization import read_tensor, write_tensor
from .tensor import ConfigError, ShapeError, Tensor

SKIP_MODES = ("add", "concat")


@dataclass(frozen=True)
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)
    num_classes: int = 4
    channels: tuple[int, int, int, int] = (8, 16, 40, 64)
    heads: tuple[int, int, int, int] = (1, 2, 5, 8)
    reductions: tuple[int, int, int, int] = (8, 4, 2, 1)
    blocks_per_stage: int = 2
    ffn_steps: int | None = None  # resolved: 1 with bridge, 3 without
    ffn_variant: str = "enhanced"
    skip_mode: str = "add"
    bridge: BridgeConfig = field(default_factory=BridgeConfig)

    def __post_init__(self):
        size = self.image_size
        if isinstance(size, int):
            size = (size, size)
        object.__setattr__(self, "image_size", (int(size[0]), int(size[1])))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "reductions", tuple(int(r) for r in self.reductions))
        self.validate()

    def validate(self):
        h, w = self.image_size
        if h % 32 or w % 32:
            raise ConfigError(f"image_size must be divisible by 32, got {self.image_size}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not (len(self.channels) == len(self.heads) == len(self.reductions) == 4):
            raise ConfigError("channels, heads and reductions must list all four stages")
        for c, head in zip(self.channels, self.heads):
            if c % head:
                raise ConfigError(f"stage channels {c} not divisible by heads {head}")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if self.ffn_variant not in FFN_VARIANTS:
            raise ConfigError(f"ffn_variant must be one of {sorted(FFN_VARIANTS)}")
        if self.ffn_steps is not None and self.ffn_steps < 1:
            raise ConfigError(f"ffn_steps must be >= 1, got {self.ffn_steps}")
        for (gh, gw), r in zip(self.grids(), self.resolved_reductions()):
            if gh % r or gw % r:
                raise ConfigError(f"reduction {r} does not divide stage grid {gh}x{gw}")
        if self.bridge.enabled:
            width = self.channels[0]
            for s in self.bridge.stages:
                if self.channels[s - 1] % width:
                    raise ConfigError(
                        f"bridge width {width} does not divide stage-{s} channels {self.channels[s - 1]}"
                    )

    def grids(self) -> list[tuple[int, int]]:
        h, w = self.image_size
        return [(h >> (i + 2), w >> (i + 2)) for i in range(4)]

    def resolved_reductions(self) -> tuple[int, ...]:
        # clamp each ratio to its stage's grid side
        out = []
        for (gh, gw), r in zip(self.grids(), self.reductions):
            out.append(min(r, gh, gw))
        return tuple(out)

    def resolved_ffn_steps(self) -> int:
        if self.ffn_steps is not None:
            return self.ffn_steps
        return 1 if self.bridge.enabled else 3

    def stage_specs(self) -> list[StageSpec]:
        red = self.resolved_reductions()
        return [
            StageSpec(c, h, r, self.blocks_per_stage, g)
            for c, h, r, g in zip(self.channels, self.heads, red, self.grids())
        ]

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "num_classes": self.num_classes,
            "channels": list(self.channels),
            "heads": list(self.heads),
            "reductions": list(self.reductions),
            "blocks_per_stage": self.blocks_per_stage,
            "ffn_steps": self.ffn_steps,
            "ffn_variant": self.ffn_variant,
            "skip_mode": self.skip_mode,
            "bridge": {
                "enabled": self.bridge.enabled,
                "depth": self.bridge.depth,
                "stages": list(self.bridge.stages),
                "ffn_steps": self.bridge.ffn_steps,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        bridge = d.pop("bridge", None)
        known = {f for f in ModelConfig.__dataclass_fields__ if f != "bridge"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        if bridge is not None:
            bk = set(bridge) - set(BridgeConfig.__dataclass_fields__)
            if bk:
                raise ConfigError(f"unknown bridge config key(s): {sorted(bk)}")
            kwargs["bridge"] = BridgeConfig(
                **{k: tuple(v) if isinstance(v, list) else v for k, v in bridge.items()}
            )
        return ModelConfig(**kwargs)

    # reference configurations -------------------------------------------------
    @staticmethod
    def toy(**overrides) -> "ModelConfig":
        """64x64 desk-scale reference: SegFormer-ratio channels, bridge depth 4."""
        base = dict(
            image_size=(64, 64),
            num_classes=4,
            channels=(8, 16, 40, 64),
            heads=(1, 2, 5, 8),
            reductions=(8, 4, 2, 1),
            ffn_steps=1,
            bridge=BridgeConfig(enabled=True, depth=4),
        )
        base.update(overrides)
        return ModelConfig(**base)

    @staticmethod
    def micro(**overrides) -> "ModelConfig":
        """Smallest grid that exercises every path; used by gradient checks."""
        base = dict(
            image_size=(32, 32),
            num_classes=4,
            channels=(4, 8, 20, 32),
            heads=(1, 2, 5, 8),
            reductions=(8, 4, 2, 1),
            ffn_steps=1,
            bridge=BridgeConfig(enabled=True, depth=2),
        )
        base.update(overrides)
        return ModelConfig(**base)

    @staticmethod
    def full_scale(**overrides) -> "ModelConfig":
        """224x224 with the published stage widths (64, 128, 320, 512)."""
        base = dict(
            image_size=(224, 224),
            num_classes=9,
            channels=(64, 128, 320, 512),
            heads=(1, 2, 5, 8),
            reductions=(8, 4, 2, 1),
            ffn_steps=1,
            bridge=BridgeConfig(enabled=True, depth=4),
        )
        base.update(overrides)
        return ModelConfig(**base)


@dataclass
class FeaturePyramid:
    """The four stage outputs as token tensors with their grids."""

    features: list[Tensor]
    grids: list[tuple[int, int]]

    @property
    def channels(self) -> list[int]:
        return [f.shape[-1] for f in self.features]


class MissFormer(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        specs = config.stage_specs()
        steps = config.resolved_ffn_steps()

        self.embed = OverlapPatchEmbed(3, specs[0].channels, rng)
        self.enc_blocks = [
            [self._block(s, steps, rng) for _ in range(s.blocks)] for s in specs
        ]
        self.merges = [
            PatchMerge(specs[i].channels, specs[i + 1].channels, rng) for i in range(3)
        ]

        if config.bridge.enabled and config.bridge.depth > 0:
            self.bridge = ContextBridge(
                config.bridge,
                width=specs[0].channels,
                heads=specs[0].heads,
                stage_channels=[s.channels for s in specs],
                stage_ratios=[s.reduction for s in specs],
                rng=rng,
            )
        else:
            self.bridge = None

        self.expands = [
            PatchExpand(specs[i + 1].channels, specs[i].channels, factor=2, rng=rng)
            for i in reversed(range(3))  # stage 3, 2, 1 order
        ]
        if config.skip_mode == "concat":
            self.skip_projs = [
                Linear(2 * specs[i].channels, specs[i].channels, rng) for i in reversed(range(3))
            ]
        else:
            self.skip_projs = []
        self.dec_blocks = [
            [self._block(specs[i], steps, rng) for _ in range(specs[i].blocks)]
            for i in reversed(range(3))
        ]
        self.final_expand = final_patch_expand(specs[0].channels, rng)
        self.head = Linear(specs[0].channels, config.num_classes, rng)

    def _block(self, spec: StageSpec, steps: int, rng) -> EnhancedTransformerBlock:
        return EnhancedTransformerBlock(
            AttentionConfig(spec.channels, spec.heads, spec.reduction),
            FfnConfig(spec.channels, steps=steps),
            rng,
            ffn_variant=self.config.ffn_variant,
        )

    def encoder_forward(self, img: Tensor) -> FeaturePyramid:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ShapeError(f"expected (B,3,H,W) image batch, got {img.shape}")
        if (img.shape[2], img.shape[3]) != self.config.image_size:
            raise ShapeError(
                f"image {img.shape[2]}x{img.shape[3]} does not match configured {self.config.image_size}"
            )
        x, hw = self.embed(img)
        features, grids = [], []
        for i, blocks in enumerate(self.enc_blocks):
            for block in blocks:
                x = block(x, hw)
            features.append(x)
            grids.append(hw)
            if i < 3:
                x, hw = self.merges[i](x, hw)
        return FeaturePyramid(features, grids)

    def decoder_forward(self, pyramid: FeaturePyramid) -> Tensor:
        x = pyramid.features[3]
        hw = pyramid.grids[3]
        for d, (expand, blocks) in enumerate(zip(self.expands, self.dec_blocks)):
            stage = 2 - d  # pyramid index of the skip source
            x, hw = expand(x, hw)
            skip = pyramid.features[stage]
            if hw != pyramid.grids[stage]:
                raise ShapeError(f"decoder grid {hw} does not match skip grid {pyramid.grids[stage]}")
            if self.config.skip_mode == "add":
                x = x + skip
            else:
                x = self.skip_projs[d](T.concat([x, skip], axis=2))
            for block in blocks:
                x = block(x, hw)
        x, hw = self.final_expand(x, hw)
        logits = self.head(x)
        b = logits.shape[0]
        h, w = hw
        return T.permute(T.reshape(logits, (b, h, w, self.config.num_classes)), (0, 3, 1, 2))

    def forward(self, img: Tensor) -> Tensor:
        pyramid = self.encoder_forward(img)
        if self.bridge is not None:
            pyramid = FeaturePyramid(
                self.bridge(pyramid.features, pyramid.grids), pyramid.grids
            )
        return self.decoder_forward(pyramid)


def param_count(config: ModelConfig) -> int:
    """Exact trainable-scalar count for a configuration."""
    return MissFormer(config, seed=0).param_count()


# ---------------------------------------------------------------------------
# checkpoints: manifest (config + named parameter list) + one tensor dump per
# parameter, concatenated in manifest order.

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


def save_checkpoint(path: str, model: MissFormer, extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    params = list(model.named_parameters())
    manifest = {
        "format": "missformer-checkpoint",
        "version": 1,
        "model": model.config.to_dict(),
        "extra": extra or {},
        "data_file": PARAMS_NAME,
        "parameters": [
            {"name": n, "shape": list(p.shape), "dtype": p.data.dtype.name} for n, p in params
        ],
    }
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, PARAMS_NAME), "wb") as fh:
        for _, p in params:
            write_tensor(fh, p.data)


def load_checkpoint(path: str) -> tuple[ModelConfig, dict, dict]:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ConfigError(f"checkpoint manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    config = ModelConfig.from_dict(manifest["model"])
    arrays = {}
    with open(os.path.join(path, manifest["data_file"]), "rb") as fh:
        for entry in manifest["parameters"]:
            arr = read_tensor(fh)
            if list(arr.shape) != entry["shape"]:
                raise ShapeError(f"checkpoint param {entry['name']}: shape {arr.shape} != {entry['shape']}")
            arrays[entry["name"]] = arr
    return config, manifest.get("extra", {}), arrays


def restore_model(path: str, seed: int = 0) -> tuple[MissFormer, dict]:
    config, extra, arrays = load_checkpoint(path)
    model = MissFormer(config, seed=seed)
    model.load_state(arrays)
    return model, extra
