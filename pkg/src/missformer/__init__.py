"""Framework-free MISSFormer: hierarchical segmentation transformer with an
internal reverse-mode autodiff core."""

from .tensor import (
    ConfigError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    concat,
    depthwise_conv2d,
    div,
    extract_patches,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    mean,
    mul,
    narrow,
    neg,
    no_grad,
    permute,
    pow_scalar,
    precision,
    reshape,
    softmax,
    split,
    sub,
    sum_,
    trace,
)
from .gradcheck import GradCheckReport, grad_check
from .module import DepthwiseConv2d, LayerNorm, Linear, Module
from .attention import (
    AttentionConfig,
    EfficientSelfAttention,
    MultiHeadSelfAttention,
    SpatialReduction,
    count_flops,
    core_attention_flops,
)
from .ffn import EnhancedMixFfn, FfnConfig, PlainMixFfn, SimpleEnhancedMixFfn
from .blocks import (
    EnhancedTransformerBlock,
    OverlapPatchEmbed,
    PatchExpand,
    PatchMerge,
    StageSpec,
    final_patch_expand,
)
from .bridge import BridgeConfig, BridgeLayer, BridgeTokens, ContextBridge, pack, unpack
from .model import (
    FeaturePyramid,
    MissFormer,
    ModelConfig,
    load_checkpoint,
    param_count,
    restore_model,
    save_checkpoint,
)
from .metrics import dice_score, evaluate_masks, hausdorff, seg_loss
from .data import Sample, SynthSpec, augment_sample, collate, gen_dataset
from .train import SgdMomentum, TrainParams, TrainResult, evaluate, poly_lr, train
from .config import RunConfig, apply_overrides, load_config, save_config
from .serialization import load_tensor, save_tensor

__version__ = "0.1.0"
