"""Finite-difference suite covering every op family plus one micro model.

Everything runs in float64. Scalarizations use fixed random weights so that
ops with row-sum symmetries (softmax, layer norm) still have non-trivial
input gradients to compare against.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, EfficientSelfAttention
from .bridge import BridgeLayer, pack
from .ffn import EnhancedMixFfn, FfnConfig
from .gradcheck import GradCheckReport, grad_check
from .metrics import seg_loss
from .model import MissFormer, ModelConfig
from .tensor import Tensor, precision

OP_TOL = 1e-4
MODEL_TOL = 1e-3
H_STEP = 1e-5


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted_sum(y: Tensor, w: np.ndarray) -> Tensor:
    return T.sum_(T.mul(y, Tensor(w)))


def _worst(name: str, reports: list[GradCheckReport], tol: float) -> GradCheckReport:
    worst = max(reports, key=lambda r: r.max_rel_err)
    return GradCheckReport(
        name=name,
        max_rel_err=worst.max_rel_err,
        max_abs_err=worst.max_abs_err,
        tol=tol,
        n_coords=sum(r.n_coords for r in reports),
        passed=all(r.passed for r in reports),
        worst_coord=worst.worst_coord,
        grad_scale=worst.grad_scale,
    )


def check_matmul(rng) -> GradCheckReport:
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    w = rng.standard_normal((3, 2))
    ba, bb = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
    bw = rng.standard_normal((2, 3, 5))
    reports = [
        grad_check(lambda x: _weighted_sum(T.matmul(x, b), w), a, H_STEP, OP_TOL, "matmul:a"),
        grad_check(lambda x: _weighted_sum(T.matmul(a, x), w), b, H_STEP, OP_TOL, "matmul:b"),
        grad_check(lambda x: _weighted_sum(T.matmul(x, bb), bw), ba, H_STEP, OP_TOL, "matmul:batched"),
    ]
    return _worst("matmul", reports, OP_TOL)


def check_softmax(rng) -> GradCheckReport:
    x = _t(rng, 4, 7)
    w = rng.standard_normal((4, 7))
    return _worst(
        "softmax",
        [grad_check(lambda t: _weighted_sum(T.softmax(t, -1), w), x, H_STEP, OP_TOL, "softmax")],
        OP_TOL,
    )


def check_layer_norm(rng) -> GradCheckReport:
    x, g, b = _t(rng, 4, 8), _t(rng, 8), _t(rng, 8)
    w = rng.standard_normal((4, 8))
    reports = [
        grad_check(lambda t: _weighted_sum(T.layer_norm(t, g, b), w), x, H_STEP, OP_TOL, "ln:x"),
        grad_check(lambda t: _weighted_sum(T.layer_norm(x, t, b), w), g, H_STEP, OP_TOL, "ln:gamma"),
        grad_check(lambda t: _weighted_sum(T.layer_norm(x, g, t), w), b, H_STEP, OP_TOL, "ln:beta"),
    ]
    return _worst("layer_norm", reports, OP_TOL)


def check_gelu(rng) -> GradCheckReport:
    x = _t(rng, 5, 6)
    w = rng.standard_normal((5, 6))
    return _worst(
        "gelu",
        [grad_check(lambda t: _weighted_sum(T.gelu(t), w), x, H_STEP, OP_TOL, "gelu")],
        OP_TOL,
    )


def check_dwconv(rng) -> GradCheckReport:
    x, k, b = _t(rng, 1, 2, 4, 4), _t(rng, 2, 3, 3), _t(rng, 2)
    w = rng.standard_normal((1, 2, 4, 4))
    reports = [
        grad_check(lambda t: _weighted_sum(T.depthwise_conv2d(t, k, b), w), x, H_STEP, OP_TOL, "dw:x"),
        grad_check(lambda t: _weighted_sum(T.depthwise_conv2d(x, t, b), w), k, H_STEP, OP_TOL, "dw:k"),
        grad_check(lambda t: _weighted_sum(T.depthwise_conv2d(x, k, t), w), b, H_STEP, OP_TOL, "dw:b"),
    ]
    return _worst("dwconv", reports, OP_TOL)


def check_linear(rng) -> GradCheckReport:
    x, w_, b = _t(rng, 3, 5, 4), _t(rng, 4, 6), _t(rng, 6)
    w = rng.standard_normal((3, 5, 6))
    reports = [
        grad_check(lambda t: _weighted_sum(T.linear(t, w_, b), w), x, H_STEP, OP_TOL, "linear:x"),
        grad_check(lambda t: _weighted_sum(T.linear(x, t, b), w), w_, H_STEP, OP_TOL, "linear:w"),
        grad_check(lambda t: _weighted_sum(T.linear(x, w_, t), w), b, H_STEP, OP_TOL, "linear:b"),
    ]
    return _worst("linear", reports, OP_TOL)


def check_layout(rng) -> GradCheckReport:
    x = _t(rng, 2, 3, 4)
    w = rng.standard_normal((4, 6))

    def f(t):
        p = T.permute(t, (2, 0, 1))  # (4, 2, 3)
        r = T.reshape(p, (4, 6))
        parts = T.split(r, [2, 2], axis=0)
        return _weighted_sum(T.concat(parts, axis=0), w)

    return _worst("layout", [grad_check(f, x, H_STEP, OP_TOL, "layout")], OP_TOL)


def check_patches(rng) -> GradCheckReport:
    x = _t(rng, 1, 2, 8, 8)
    w = rng.standard_normal((1, 4, 18))

    def f(t):
        return _weighted_sum(T.extract_patches(t, kernel=3, stride=4, padding=1), w)

    return _worst("patches", [grad_check(f, x, H_STEP, OP_TOL, "patches")], OP_TOL)


def check_attention(rng) -> GradCheckReport:
    attn = EfficientSelfAttention(AttentionConfig(8, 2, 2), np.random.default_rng(0))
    x = _t(rng, 2, 16, 8)
    report = grad_check(lambda t: T.sum_(attn(t, (4, 4))), x, H_STEP, OP_TOL, "attention")
    return _worst("attention", [report], OP_TOL)


def check_ffn(rng) -> GradCheckReport:
    ffn = EnhancedMixFfn(FfnConfig(8, steps=3), np.random.default_rng(0))
    x = _t(rng, 1, 16, 8)
    report = grad_check(lambda t: T.sum_(ffn(t, (4, 4))), x, H_STEP, OP_TOL, "ffn")
    return _worst("ffn", [report], OP_TOL)


def _toy_pyramid(rng):
    grids = [(16, 16), (8, 8), (4, 4), (2, 2)]
    channels = [8, 16, 40, 64]
    feats = [Tensor(rng.standard_normal((1, h * w, c))) for (h, w), c in zip(grids, channels)]
    return feats, grids, channels


def check_bridge(rng) -> GradCheckReport:
    feats, grids, channels = _toy_pyramid(rng)
    layer = BridgeLayer(8, 1, channels, [8, 4, 2, 1], 1, np.random.default_rng(0))

    def f(t):
        inputs = feats[:3] + [t]
        bt = pack(inputs, grids, 8)
        return T.sum_(layer(bt).merged)

    x = Tensor(feats[3].data.copy(), requires_grad=True)
    return _worst("bridge", [grad_check(f, x, H_STEP, OP_TOL, "bridge")], OP_TOL)


def check_model(rng, sample_coords: int | None = None) -> GradCheckReport:
    model = MissFormer(ModelConfig.micro(), seed=0)
    labels = rng.integers(0, 4, size=(1, 32, 32))
    img = Tensor(rng.standard_normal((1, 3, 32, 32)) * 0.5, requires_grad=True)
    report = grad_check(
        lambda t: seg_loss(model(t), labels),
        img,
        H_STEP,
        MODEL_TOL,
        "model",
        sample_coords=sample_coords,
        rng=np.random.default_rng(7),
    )
    return _worst("model", [report], MODEL_TOL)


def run_suite(seed: int = 0, model_coords: int | None = None) -> list[GradCheckReport]:
    """All op families plus the micro end-to-end model, in float64."""
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        reports = [
            check_matmul(rng),
            check_softmax(rng),
            check_layer_norm(rng),
            check_gelu(rng),
            check_dwconv(rng),
            check_linear(rng),
            check_layout(rng),
            check_patches(rng),
            check_attention(rng),
            check_ffn(rng),
            check_bridge(rng),
            check_model(rng, sample_coords=model_coords),
        ]
    return reports
