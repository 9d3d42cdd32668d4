import numpy as np
import numpy.testing as npt
import pytest

import missformer as mf
from missformer import ShapeError, Tensor
from missformer.attention import AttentionConfig
from missformer.blocks import (
    EnhancedTransformerBlock,
    OverlapPatchEmbed,
    PatchExpand,
    PatchMerge,
    final_patch_expand,
)
from missformer.ffn import FfnConfig
from missformer.gradcheck import grad_check


def zero_residual_paths(block):
    block.attn.out_proj.weight.data[:] = 0.0
    block.attn.out_proj.bias.data[:] = 0.0
    block.ffn.fc2.weight.data[:] = 0.0
    block.ffn.fc2.bias.data[:] = 0.0


def test_block_with_zeroed_projections_is_identity():
    block = EnhancedTransformerBlock(
        AttentionConfig(8, 2, 2), FfnConfig(8), np.random.default_rng(0)
    )
    zero_residual_paths(block)
    x = np.random.default_rng(1).standard_normal((2, 16, 8)).astype(np.float32)
    out = block(Tensor(x), (4, 4))
    npt.assert_array_equal(out.data, x)


def test_block_output_shape_for_every_toy_stage():
    rng = np.random.default_rng(2)
    for c, h, r, side in ((8, 1, 8, 16), (16, 2, 4, 8), (40, 5, 2, 4), (64, 8, 1, 2)):
        block = EnhancedTransformerBlock(
            AttentionConfig(c, h, r), FfnConfig(c), np.random.default_rng(3)
        )
        x = Tensor(rng.standard_normal((2, side * side, c)).astype(np.float32))
        assert block(x, (side, side)).shape == (2, side * side, c)


def test_block_gradcheck():
    with mf.precision(np.float64):
        block = EnhancedTransformerBlock(
            AttentionConfig(8, 2, 2), FfnConfig(8), np.random.default_rng(4)
        )
    x = Tensor(np.random.default_rng(5).standard_normal((1, 16, 8)), requires_grad=True)
    report = grad_check(lambda t: mf.sum_(block(t, (4, 4))), x, h=1e-5, tol=1e-4, name="block")
    assert report.passed, report.summary()


# ---------------------------------------------------------------------------
# overlap patch embedding

def test_patch_embed_token_count():
    embed = OverlapPatchEmbed(3, 8, np.random.default_rng(6))
    img = Tensor(np.random.default_rng(7).standard_normal((1, 3, 64, 64)).astype(np.float32))
    tokens, hw = embed(img)
    assert tokens.shape == (1, 256, 8)
    assert hw == (16, 16)


def test_patch_embed_is_shift_sensitive():
    # overlapping patches: a one-pixel shift must change the embedding
    embed = OverlapPatchEmbed(3, 8, np.random.default_rng(8))
    img = np.random.default_rng(9).standard_normal((1, 3, 64, 64)).astype(np.float32)
    shifted = np.roll(img, 1, axis=3)
    a, _ = embed(Tensor(img))
    b, _ = embed(Tensor(shifted))
    assert np.abs(a.data - b.data).max() > 1e-4


def test_patch_embed_constant_input_gives_identical_interior_tokens():
    embed = OverlapPatchEmbed(3, 8, np.random.default_rng(10))
    img = Tensor(np.full((1, 3, 64, 64), 0.5, dtype=np.float32))
    tokens, (gh, gw) = embed(img)
    grid = tokens.data.reshape(gh, gw, 8)
    interior = grid[1:-1, 1:-1].reshape(-1, 8)
    npt.assert_allclose(interior, np.broadcast_to(interior[0], interior.shape), atol=1e-5)


def test_patch_embed_rejects_indivisible_input():
    embed = OverlapPatchEmbed(3, 8, np.random.default_rng(11))
    with pytest.raises(ShapeError):
        embed(Tensor(np.zeros((1, 3, 30, 30), dtype=np.float32)))


# ---------------------------------------------------------------------------
# patch merging

def test_patch_merge_grid_and_channels():
    merge = PatchMerge(8, 16, np.random.default_rng(12))
    x = Tensor(np.random.default_rng(13).standard_normal((2, 64, 8)).astype(np.float32))
    out, hw = merge(x, (8, 8))
    assert out.shape == (2, 16, 16)
    assert hw == (4, 4)


def test_patch_merge_rejects_odd_grid():
    merge = PatchMerge(8, 16, np.random.default_rng(14))
    with pytest.raises(ShapeError):
        merge(Tensor(np.zeros((1, 9, 8), dtype=np.float32)), (3, 3))


def test_patch_merge_gradcheck():
    with mf.precision(np.float64):
        merge = PatchMerge(4, 8, np.random.default_rng(15))
    rng = np.random.default_rng(16)
    x = Tensor(rng.standard_normal((1, 16, 4)), requires_grad=True)
    # weighted scalarization: the trailing LayerNorm makes a plain sum gradient-free
    w = Tensor(rng.standard_normal((1, 4, 8)))
    report = grad_check(
        lambda t: mf.sum_(mf.mul(merge(t, (4, 4))[0], w)), x, h=1e-5, tol=1e-4, name="merge"
    )
    assert report.passed, report.summary()


# ---------------------------------------------------------------------------
# patch expanding

def test_patch_expand_shape_arithmetic():
    expand = PatchExpand(16, rng=np.random.default_rng(17))  # default halving
    x = Tensor(np.random.default_rng(18).standard_normal((1, 16, 16)).astype(np.float32))
    out, hw = expand(x, (4, 4))
    assert out.shape == (1, 64, 8)
    assert hw == (8, 8)


def test_patch_expand_rejects_odd_channels_in_halving_mode():
    with pytest.raises(ShapeError):
        PatchExpand(7, rng=np.random.default_rng(19))


def test_expand_then_average_does_not_reproduce_input():
    expand = PatchExpand(16, rng=np.random.default_rng(20))
    x = np.random.default_rng(21).standard_normal((1, 16, 16)).astype(np.float32)
    out, _ = expand(Tensor(x), (4, 4))
    # merge-style average of each 2x2 block back to a 4x4 grid of 8 channels
    grid = out.data.reshape(1, 4, 2, 4, 2, 8).mean(axis=(2, 4)).reshape(1, 16, 8)
    assert np.abs(grid - x[..., :8]).max() > 1e-3


def test_patch_expand_one_hot_locality_probe():
    with mf.precision(np.float64):
        expand = PatchExpand(8, rng=np.random.default_rng(22))
    base = np.zeros((1, 16, 8))
    out0, _ = expand(Tensor(base), (4, 4))
    for tok in (0, 5, 15):
        probe = base.copy()
        probe[0, tok] = 1.0
        out, _ = expand(Tensor(probe), (4, 4))
        delta = np.abs(out.data - out0.data).sum(axis=-1).reshape(8, 8)
        rows = np.unique(np.nonzero(delta)[0]) // 2
        cols = np.unique(np.nonzero(delta)[1]) // 2
        assert set(rows) <= {tok // 4} and set(cols) <= {tok % 4}


def test_final_expand_shape_and_locality():
    with mf.precision(np.float64):
        expand = final_patch_expand(8, np.random.default_rng(23))
    x = Tensor(np.random.default_rng(24).standard_normal((1, 256, 8)))
    out, hw = expand(x, (16, 16))
    assert out.shape == (1, 64 * 64, 8)
    assert hw == (64, 64)
    base = np.zeros((1, 16, 8))
    out0, _ = expand(Tensor(base), (4, 4))
    probe = base.copy()
    probe[0, 5] = 1.0  # token at grid row 1, col 1
    out1, _ = expand(Tensor(probe), (4, 4))
    delta = np.abs(out1.data - out0.data).sum(axis=-1).reshape(16, 16)
    ys, xs = np.nonzero(delta)
    assert set(ys) <= set(range(4, 8)) and set(xs) <= set(range(4, 8))


def test_final_expand_gradcheck():
    with mf.precision(np.float64):
        expand = final_patch_expand(4, np.random.default_rng(25))
    x = Tensor(np.random.default_rng(26).standard_normal((1, 16, 4)), requires_grad=True)
    report = grad_check(lambda t: mf.sum_(expand(t, (4, 4))[0]), x, h=1e-5, tol=1e-4, name="final_expand")
    assert report.passed, report.summary()


def test_expand_is_exact_shape_inverse_of_merge():
    # decoder requirement: expanding stage i+1 lands exactly on stage i's shape
    rng = np.random.default_rng(27)
    channels = (8, 16, 40, 64)
    grids = [(16, 16), (8, 8), (4, 4), (2, 2)]
    for i in range(3):
        expand = PatchExpand(channels[i + 1], channels[i], rng=np.random.default_rng(28))
        x = Tensor(rng.standard_normal((1, grids[i + 1][0] * grids[i + 1][1], channels[i + 1])).astype(np.float32))
        out, hw = expand(x, grids[i + 1])
        assert hw == grids[i]
        assert out.shape == (1, grids[i][0] * grids[i][1], channels[i])
