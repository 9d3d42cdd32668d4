"""The enhanced feed-forward family and the transformer block built on it.

Run:  python3 demos/03_enhanced_ffn_and_blocks.py
"""
import numpy as np

import missformer as mf
from missformer import Tensor
from missformer.attention import AttentionConfig
from missformer.blocks import EnhancedTransformerBlock
from missformer.ffn import EnhancedMixFfn, FfnConfig, SimpleEnhancedMixFfn

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((1, 64, 16)).astype(np.float32))  # 8x8 grid, 16 channels

# The single-step form: u = FC1(x); y = LN(conv(u) + u); out = FC2(GELU(y)) + x.
# The normalized skip around the depthwise conv keeps the expanded features
# aligned; the outer residual makes a zero-initialized FC2 an exact identity.
simple = SimpleEnhancedMixFfn(FfnConfig(16), np.random.default_rng(1))
print("simple ffn:", x.shape, "->", simple(x, (8, 8)).shape)

ident = SimpleEnhancedMixFfn(FfnConfig(16), np.random.default_rng(2))
ident.fc2.weight.data[:] = 0.0
ident.fc2.bias.data[:] = 0.0
print("zero FC2 is identity:", bool(np.array_equal(ident(x, (8, 8)).data, x.data)))

# The recursive form re-normalizes the skip m times, each step with its own
# LayerNorm. m=1 reproduces the single-step form bit for bit (same weights).
for m in (1, 2, 3):
    ffn = EnhancedMixFfn(FfnConfig(16, steps=m), np.random.default_rng(3))
    out = ffn(x, (8, 8))
    print(f"recursive ffn m={m}: output std {out.data.std():.4f}, "
          f"params {sum(p.size for p in ffn.parameters())}")

# A full block: pre-norm attention residual, then the FFN with its residual.
block = EnhancedTransformerBlock(
    AttentionConfig(16, 2, 2), FfnConfig(16), np.random.default_rng(4)
)
out = block(x, (8, 8))
print("\ntransformer block:", x.shape, "->", out.shape)

loss = mf.sum_(mf.mul(out, out))
loss.backward()
grads = sum(1 for p in block.parameters() if p.grad is not None)
print(f"backward populated {grads} parameter gradients")
