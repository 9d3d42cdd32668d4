"""Declarative run configuration: one JSON file drives every subcommand.

Key paths mirror the dataclass fields (``model.*``, ``data.*``, ``train.*``);
command-line overrides use the same dotted paths, so an ablation grid is a
set of one-line overrides.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import SynthSpec
from .model import ModelConfig
from .tensor import ConfigError
from .train import TrainParams


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.toy)
    data: SynthSpec = field(default_factory=SynthSpec)
    train: TrainParams = field(default_factory=TrainParams)
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "data": self.data.to_dict(),
            "train": self.train.to_dict(),
            "out_dir": self.out_dir,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        unknown = set(d) - {"model", "data", "train", "out_dir"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        return RunConfig(
            model=ModelConfig.from_dict(d.get("model", ModelConfig.toy().to_dict())),
            data=SynthSpec.from_dict(d.get("data", {})),
            train=TrainParams.from_dict(d.get("train", {})),
            out_dir=d.get("out_dir", "runs/default"),
        )


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {path}: {exc}") from None
    return RunConfig.from_dict(raw)


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, (list, tuple)):
        value = json.loads(raw)
        if not isinstance(value, list):
            raise ConfigError(f"expected a JSON list, got {raw!r}")
        return value
    if isinstance(current, str):
        return raw
    # null or unknown target: accept any JSON literal
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config_dict: dict, overrides: list[str]) -> dict:
    """Apply ``path=value`` overrides to a raw config dict.

    Paths are rooted at the config; as a convenience, a path whose first
    segment is not a top-level section (e.g. ``bridge.depth``) is looked up
    under ``model``.
    """
    out = json.loads(json.dumps(config_dict))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        path = path.lstrip("-")
        keys = path.split(".")
        if keys[0] not in out:
            keys = ["model"] + keys
        node = out
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config key: {path!r} (failed at {k!r})")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key: {path!r} (failed at {leaf!r})")
        node[leaf] = _coerce(raw, node[leaf])
    return out
