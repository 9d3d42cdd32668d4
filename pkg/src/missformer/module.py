"""Parameter containers and the basic learned layers.

A ``Module`` is a plain object whose attributes may be parameters (tensors
with ``requires_grad``), other modules, or lists of modules; traversal order
is attribute insertion order, which keeps parameter naming and checkpoint
layout deterministic.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def trunc_normal(shape, rng: np.random.Generator, std: float = 0.02) -> Tensor:
    """Normal(0, std) resampled until within two standard deviations."""
    vals = rng.normal(0.0, std, size=shape)
    bad = np.abs(vals) > 2.0 * std
    while bad.any():
        vals[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(vals) > 2.0 * std
    return Tensor(vals.astype(T.default_dtype()), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=T.default_dtype()), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=T.default_dtype()), requires_grad=True)


def _walk(value, name):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Module:
    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, arrays: dict) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ShapeError(f"load_state: missing={missing[:3]} extra={extra[:3]}")
        for name, p in own.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeError(f"load_state: '{name}' shape {arr.shape} != {p.shape}")
            p.data = np.asarray(arr, dtype=p.data.dtype).copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = trunc_normal((in_features, out_features), rng)
        self.bias = zeros_param((out_features,))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        self.gamma = ones_param((channels,))
        self.beta = zeros_param((channels,))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class DepthwiseConv2d(Module):
    """3x3, stride 1, pad 1, one kernel per channel."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.kernel = trunc_normal((channels, 3, 3), rng)
        self.bias = zeros_param((channels,))

    def forward(self, x: Tensor) -> Tensor:
        return T.depthwise_conv2d(x, self.kernel, self.bias)
