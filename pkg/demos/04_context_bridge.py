"""The multi-scale context bridge: pack, attend across scales, unpack.

Run:  python3 demos/04_context_bridge.py
"""
import numpy as np

from missformer import Tensor
from missformer.bridge import BridgeConfig, BridgeLayer, ContextBridge, pack, unpack

rng = np.random.default_rng(0)

# A toy four-scale pyramid (the encoder's output shapes for 64x64 input).
grids = [(16, 16), (8, 8), (4, 4), (2, 2)]
channels = [8, 16, 40, 64]
ratios = [8, 4, 2, 1]
feats = [Tensor(rng.standard_normal((1, h * w, c)).astype(np.float32))
         for (h, w), c in zip(grids, channels)]

# pack folds every scale to the common width (stage-1 channels): a stage with
# C channels contributes C/width tokens per spatial position.
bt = pack(feats, grids, width=8)
print("segment lengths:", bt.meta.lengths, "-> merged", bt.merged.shape)

restored = unpack(bt)
print("pack/unpack exact:", all(np.array_equal(a.data, b.data) for a, b in zip(feats, restored)))

# One bridge layer: attention over the whole sequence (keys/values reduced per
# scale on its native grid), a renormalized residual, then one feed-forward
# per scale at native resolution.
layer = BridgeLayer(8, 1, channels, ratios, 1, np.random.default_rng(1))
out = layer(bt)
print("bridge layer:", bt.merged.shape, "->", out.merged.shape)

# Cross-scale flow: poke one coarse (F4) token, watch the fine (F1) segment move.
bumped = [Tensor(f.data.copy()) for f in feats]
bumped[3].data[0, 0, 0] += 1e-3
delta = np.abs(layer(pack(bumped, grids, 8)).merged.data - out.merged.data)
print(f"F4 poke -> F1 segment max delta: {delta[:, :256].max():.2e}")

# The full bridge stacks d layers and can restrict itself to a stage subset.
for stages in ((1, 2, 3, 4), (3, 4)):
    bridge = ContextBridge(BridgeConfig(depth=4, stages=stages), 8, 1, channels, ratios,
                           np.random.default_rng(2))
    outs = bridge(feats, grids)
    print(f"stages {stages}: output shapes {[tuple(f.shape) for f in outs]}")
