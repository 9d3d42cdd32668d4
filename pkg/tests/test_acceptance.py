"""Acceptance suite: one test per criterion, each printing a PASS line.

The overfit criterion trains six toy models (two variants x three seeds) and
is by far the slowest test here; everything else finishes in well under a
minute each.
"""
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from statistics import median

import numpy as np
import numpy.testing as npt
import pytest

import missformer as mf
from missformer import Tensor
from missformer.attention import (
    AttentionConfig,
    EfficientSelfAttention,
    MultiHeadSelfAttention,
    core_attention_flops,
    count_flops,
)
from missformer.bench import COMPLEXITY_NOTE
from missformer.bridge import BridgeConfig, BridgeLayer, pack, unpack
from missformer.data import SynthSpec, gen_dataset
from missformer.ffn import EnhancedMixFfn, FfnConfig, SimpleEnhancedMixFfn
from missformer.metrics import dice_score, hausdorff
from missformer.model import MissFormer, ModelConfig
from missformer.train import TrainParams, poly_lr, train
from missformer.verify import MODEL_TOL, OP_TOL, run_suite

from test_attention import make_equal_pair, per_head_loop_oracle
from test_metrics import brute_force_hausdorff


def ok(name):
    print(f"[ACCEPTANCE] {name}: PASS")


# 1 -------------------------------------------------------------------------
def test_gradient_suite_all_op_families_and_micro_model():
    start = time.time()
    reports = run_suite()
    elapsed = time.time() - start
    for report in reports:
        expected_tol = MODEL_TOL if report.name == "model" else OP_TOL
        assert report.tol == expected_tol
        assert report.passed, report.summary()
    names = {r.name for r in reports}
    assert {"matmul", "softmax", "layer_norm", "gelu", "dwconv", "linear",
            "attention", "ffn", "bridge", "model"} <= names
    assert elapsed < 300.0, f"gradient suite took {elapsed:.0f}s (budget 300s)"
    ok(f"gradient suite ({elapsed:.0f}s, worst op "
       f"{max(r.max_rel_err for r in reports if r.name != 'model'):.2e})")


# 2 -------------------------------------------------------------------------
def test_attention_oracles():
    std, eff = make_equal_pair()
    rng = np.random.default_rng(1000)
    for _ in range(20):
        x = Tensor(rng.standard_normal((2, 16, 8)))
        npt.assert_allclose(eff(x, (4, 4)).data, std(x).data, atol=1e-6)
    with mf.precision(np.float64):
        ref = MultiHeadSelfAttention(AttentionConfig(8, 2), np.random.default_rng(1001))
    for _ in range(5):
        x = rng.standard_normal((2, 4, 8))
        npt.assert_allclose(ref(Tensor(x)).data, per_head_loop_oracle(x, ref), atol=1e-6)
    ok("attention oracle (R=1 equality + per-head loop)")


# 3 -------------------------------------------------------------------------
def test_complexity_core_flops_drop_by_r_squared():
    rng = np.random.default_rng(1002)
    n, c = 256, 16
    x = Tensor(rng.standard_normal((1, n, c)).astype(np.float32))
    counts = {}
    for r in (1, 2, 4, 8):
        attn = EfficientSelfAttention(AttentionConfig(c, 2, r), np.random.default_rng(0))
        with count_flops() as counter:
            attn(x, (16, 16))
        counts[r] = counter.core
        assert counter.core == core_attention_flops(1, n, n // (r * r), c)
    for r in (1, 2, 4):
        assert counts[r] == 4 * counts[2 * r]  # doubling R divides core FLOPs by 4
    assert "O(N^2/R)" in COMPLEXITY_NOTE  # 1-D notation discrepancy documented
    ok("complexity: core FLOPs scale by R^2 (1/R notation documented in bench)")


# 4 -------------------------------------------------------------------------
def test_shape_pyramid_full_scale_224():
    start = time.time()
    cfg = ModelConfig(
        image_size=(224, 224),
        num_classes=9,
        channels=(64, 128, 320, 512),
        heads=(1, 2, 5, 8),
        reductions=(8, 4, 2, 1),
        ffn_steps=1,
        bridge=BridgeConfig(enabled=False),
    )
    model = MissFormer(cfg, seed=0)
    img = Tensor(np.random.default_rng(1003).standard_normal((1, 3, 224, 224)).astype(np.float32))
    with mf.no_grad():
        pyramid = model.encoder_forward(img)
        assert pyramid.grids == [(56, 56), (28, 28), (14, 14), (7, 7)]
        assert pyramid.channels == [64, 128, 320, 512]
        logits = model.decoder_forward(pyramid)
    assert logits.shape == (1, 9, 224, 224)
    elapsed = time.time() - start
    assert elapsed < 30.0, f"shape pyramid check took {elapsed:.0f}s (budget 30s)"
    ok(f"shape pyramid 56/28/14/7 at 224x224 ({elapsed:.1f}s)")


# 5 -------------------------------------------------------------------------
def test_ffn_equivalence_bitwise():
    simple = SimpleEnhancedMixFfn(FfnConfig(8), np.random.default_rng(1004))
    recursive = EnhancedMixFfn(FfnConfig(8, steps=1), np.random.default_rng(1005))
    recursive.fc1.weight.data[:] = simple.fc1.weight.data
    recursive.fc1.bias.data[:] = simple.fc1.bias.data
    recursive.conv.kernel.data[:] = simple.conv.kernel.data
    recursive.conv.bias.data[:] = simple.conv.bias.data
    recursive.norms[0].gamma.data[:] = simple.norm.gamma.data
    recursive.norms[0].beta.data[:] = simple.norm.beta.data
    recursive.fc2.weight.data[:] = simple.fc2.weight.data
    recursive.fc2.bias.data[:] = simple.fc2.bias.data
    rng = np.random.default_rng(1006)
    for _ in range(10):
        x = Tensor(rng.standard_normal((2, 16, 8)).astype(np.float32))
        npt.assert_array_equal(recursive(x, (4, 4)).data, simple(x, (4, 4)).data)
    ok("ffn equivalence: m=1 recursive == single-step, bit-identical x10")


# 6 -------------------------------------------------------------------------
def test_bridge_round_trip_and_cross_scale_flow():
    grids = [(16, 16), (8, 8), (4, 4), (2, 2)]
    channels = [8, 16, 40, 64]
    rng = np.random.default_rng(1007)
    feats = [Tensor(rng.standard_normal((1, h * w, c)).astype(np.float32))
             for (h, w), c in zip(grids, channels)]
    bt = pack(feats, grids, width=8)
    for original, back in zip(feats, unpack(bt)):
        npt.assert_array_equal(back.data, original.data)

    layer = BridgeLayer(8, 1, channels, [8, 4, 2, 1], 1, np.random.default_rng(1008))
    base = layer(pack(feats, grids, 8)).merged.data
    bumped = [Tensor(f.data.copy()) for f in feats]
    bumped[3].data[0, 1, 5] += 1e-3
    moved = layer(pack(bumped, grids, 8)).merged.data
    f1_delta = np.abs(moved[:, :256] - base[:, :256]).max()
    assert f1_delta >= 1e-8
    ok(f"bridge pack/unpack bit-exact; F4->F1 flow (delta {f1_delta:.1e})")


# 7 -------------------------------------------------------------------------
def test_ablation_family_constructs_and_steps():
    no_bridge = BridgeConfig(enabled=False)
    family = {"u_baseline": ModelConfig.toy(ffn_variant="mix", bridge=no_bridge),
              "simple_missformer": ModelConfig.toy(ffn_variant="simple_enhanced",
                                                   ffn_steps=1, bridge=no_bridge)}
    for m in (1, 2, 3):
        family[f"missformer_s_m{m}"] = ModelConfig.toy(ffn_steps=m, bridge=no_bridge)
    for depth in (2, 4, 6):
        family[f"missformer_d{depth}"] = ModelConfig.toy(bridge=BridgeConfig(depth=depth))
    for stages in ((1, 2, 3, 4), (2, 3, 4), (3, 4), (4,)):
        tag = "".join(str(s) for s in sorted(stages, reverse=True))
        family[f"missformer_stages{tag}"] = ModelConfig.toy(
            bridge=BridgeConfig(depth=4, stages=stages)
        )
    rng = np.random.default_rng(1009)
    img = Tensor(rng.standard_normal((1, 3, 64, 64)).astype(np.float32))
    labels = rng.integers(0, 4, (1, 64, 64))
    for name, cfg in family.items():
        model = MissFormer(cfg, seed=0)
        loss = mf.seg_loss(model(img), labels)
        model.zero_grad()
        loss.backward()
        bad = [n for n, p in model.named_parameters()
               if p.grad is None or not np.isfinite(p.grad).all()]
        assert not bad, f"{name}: bad grads for {bad[:3]}"
    ok(f"ablation family: {len(family)} variants forward+backward")


# 8 -------------------------------------------------------------------------
OVERFIT_SPEC = SynthSpec(image_size=64, num_classes=4, num_train=8, num_val=4, seed=0)
OVERFIT_CAP = 2000
OVERFIT_TARGET = 0.95


def _iterations_to_target(job):
    seed, bridge_enabled = job
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    except Exception:
        pass
    if bridge_enabled:
        cfg = ModelConfig.toy()
    else:
        cfg = ModelConfig.toy(bridge=BridgeConfig(enabled=False), ffn_steps=1)
    # minibatches of 4 (two steps per epoch over the 8 images): the gradient
    # noise reliably clears plateaus that full-batch descent stalls on, and
    # 0.035 is gentler than the full-scale 0.05, which is marginally unstable
    # at this tiny width
    steps_per_epoch = 2
    params = TrainParams(epochs=OVERFIT_CAP // steps_per_epoch, batch_size=4,
                         base_lr=0.035, eval_every=13, seed=seed)
    result = train(cfg, OVERFIT_SPEC, params, out_dir=None, stop_dsc=OVERFIT_TARGET)
    assert not result.aborted, result.abort_reason
    hit = next(
        (
            (epoch + 1) * steps_per_epoch
            for epoch, split, dsc in result.history
            if split == "train" and dsc >= OVERFIT_TARGET
        ),
        None,
    )
    return seed, bridge_enabled, hit


def test_toy_overfit_bridge_at_least_as_fast_as_no_bridge():
    start = time.time()
    jobs = [(seed, flag) for seed in (0, 1, 2) for flag in (True, False)]
    with ProcessPoolExecutor(max_workers=2) as pool:
        results = list(pool.map(_iterations_to_target, jobs))
    elapsed = time.time() - start
    bridge_hits = {s: hit for s, flag, hit in results if flag}
    plain_hits = {s: hit for s, flag, hit in results if not flag}
    print(f"[ACCEPTANCE] overfit iterations to DSC>={OVERFIT_TARGET}: "
          f"bridge={bridge_hits} no_bridge={plain_hits} ({elapsed:.0f}s)")
    assert all(hit is not None for hit in bridge_hits.values()), (
        f"bridge model missed DSC {OVERFIT_TARGET} within {OVERFIT_CAP} iterations: {bridge_hits}"
    )
    med_bridge = median(hit for hit in bridge_hits.values())
    med_plain = median(hit if hit is not None else OVERFIT_CAP for hit in plain_hits.values())
    assert med_bridge <= med_plain, (
        f"bridge median {med_bridge} > no-bridge median {med_plain}"
    )
    assert elapsed < 1800.0, f"overfit criterion took {elapsed:.0f}s (budget 30 min)"
    ok(f"toy overfit: bridge median {med_bridge} <= no-bridge median {med_plain}")


# 9 -------------------------------------------------------------------------
def test_metric_oracles_and_poly_lr():
    rng = np.random.default_rng(1010)
    for _ in range(100):
        a = rng.integers(0, 3, size=(16, 16))
        b = rng.integers(0, 3, size=(16, 16))
        k = int(rng.integers(1, 3))
        pa, ga = (a == k), (b == k)
        inter = int((pa & ga).sum())
        total = int(pa.sum()) + int(ga.sum())
        expect_dice = 1.0 if total == 0 else 2.0 * inter / total
        assert dice_score(a, b, k) == expect_dice
        for pct in (95.0, 100.0):
            assert hausdorff(a, b, k, pct) == brute_force_hausdorff(a, b, k, pct)
    assert poly_lr(0, 400, 0.05) == 0.05
    assert poly_lr(400, 400, 0.05) == 0.0
    ok("metric oracles: 100 mask pairs exact; poly_lr endpoints (0.05, 0)")


# 10 ------------------------------------------------------------------------
def test_determinism_bit_identical_metrics(tmp_path):
    spec = SynthSpec(image_size=32, num_classes=4, num_train=4, num_val=2, seed=3)
    params = TrainParams(epochs=4, batch_size=2, eval_every=1, seed=3)
    payloads = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        result = train(ModelConfig.micro(), spec, params, out_dir=out)
        assert not result.aborted
        payloads.append(open(result.metrics_path, "rb").read())
    assert payloads[0] == payloads[1]
    ok("determinism: two train runs, bit-identical metrics.csv")
