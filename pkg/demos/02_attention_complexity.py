"""Efficient self-attention: spatial reduction and the R^2 FLOP saving.

Run:  python3 demos/02_attention_complexity.py
"""
import numpy as np

from missformer import Tensor
from missformer.attention import (
    AttentionConfig,
    EfficientSelfAttention,
    MultiHeadSelfAttention,
    count_flops,
)
from missformer.bench import COMPLEXITY_NOTE, run_bench

rng = np.random.default_rng(0)

# A 16x16 token grid, 32 channels. The efficient variant folds each RxR block
# of the grid into one key/value token, so attention cost drops by R^2 while
# queries stay at full resolution.
x = Tensor(rng.standard_normal((1, 256, 32)).astype(np.float32))

std = MultiHeadSelfAttention(AttentionConfig(32, 4), np.random.default_rng(1))
with count_flops() as counter:
    std(x)
print(f"standard attention        core FLOPs {counter.core:>12,d}")

for r in (1, 2, 4, 8):
    attn = EfficientSelfAttention(AttentionConfig(32, 4, r), np.random.default_rng(1))
    with count_flops() as counter:
        attn(x, (16, 16))
    ratio = counter.core / (4 * 256 * 256 * 32)
    print(f"efficient attention R={r}   core FLOPs {counter.core:>12,d}  ratio {ratio:.4f}")

# The bench module packages this comparison with wall-clock timings:
rows, warnings = run_bench([1024], [1, 2, 4], repeats=3)
print()
for row in rows:
    print(f"N={row.n} R={row.r}: core ratio {row.core_ratio:.4f}, "
          f"std {row.std_ms:.2f} ms vs eff {row.eff_ms:.2f} ms")
print("\n" + COMPLEXITY_NOTE)
