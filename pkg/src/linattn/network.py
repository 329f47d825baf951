"""Toy-scale encoder/decoder segmentation network.

Encoder: a strided stem conv plus four grouped-bottleneck stages, giving five
feature maps at strides 2..32. Decoder: transposed-conv upsampling, skip
concatenation and an attention block at each of the four fusion points, then
a final bilinear x2 and a 1x1 classifier. All parameters live in a flat
name->tensor map so checkpoints and the optimizer stay trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import AttentionBlockParams, ProjectionWeights, attention_block_forward
from .errors import ConfigurationError, DimensionError
from .params import ModelParams
from .tensor import Tensor, _np_dtype

STEM_KERNEL = 3
UPSAMPLE_KERNEL = 2


@dataclass(frozen=True)
class ResNeXtBlockConfig:
    """Bottleneck block with grouped 3x3 transform: 1x1 reduce -> 3x3 grouped -> 1x1 expand."""
    in_channels: int
    mid_channels: int
    out_channels: int
    cardinality: int = 1
    stride: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.mid_channels, self.out_channels) < 1:
            raise ConfigurationError(f"channel counts must be positive: {self}")
        if self.cardinality < 1 or self.mid_channels % self.cardinality:
            raise ConfigurationError(
                f"cardinality {self.cardinality} must divide mid channels {self.mid_channels}")
        if self.stride not in (1, 2):
            raise ConfigurationError(f"stride must be 1 or 2, got {self.stride}")

    @property
    def has_projection_shortcut(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


@dataclass
class ResNeXtBlockParams:
    reduce_w: Tensor
    reduce_scale: Tensor
    reduce_bias: Tensor
    group_w: Tensor
    group_scale: Tensor
    group_bias: Tensor
    expand_w: Tensor
    expand_scale: Tensor
    expand_bias: Tensor
    shortcut_w: Tensor | None = None
    shortcut_scale: Tensor | None = None
    shortcut_bias: Tensor | None = None


@dataclass(frozen=True)
class SegmenterConfig:
    """Whole-network configuration.

    ``stage_channels`` are the widths of the stem conv and the four bottleneck
    stages; every stage halves the spatial dims, so inputs must be divisible
    by 32. Attention at each decoder fusion uses key_dim = C/2, value_dim = C.
    """
    num_classes: int = 3
    input_channels: int = 3
    stage_channels: tuple = (8, 16, 32, 64, 128)
    cardinality: int = 4
    dtype: str = "f64"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.stage_channels) != 5:
            raise ConfigurationError(f"need 5 stage widths, got {self.stage_channels}")
        if self.input_channels < 1:
            raise ConfigurationError("input_channels must be positive")
        for c in self.stage_channels:
            if c < 2 or c % 2:
                raise ConfigurationError(f"stage widths must be even and >= 2, got {c}")
        for cfg in self.blocks():
            _ = cfg  # block validation runs in its __post_init__

    def blocks(self) -> list[ResNeXtBlockConfig]:
        s = self.stage_channels
        return [
            ResNeXtBlockConfig(s[i], s[i + 1] // 2, s[i + 1], self.cardinality, stride=2)
            for i in range(4)
        ]

    @classmethod
    def tiny(cls, num_classes: int = 3) -> "SegmenterConfig":
        return cls(num_classes=num_classes, stage_channels=(4, 8, 16, 32, 64), cardinality=2)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _he_conv(rng, shape, dtype):
    # fan-in = input channels per group * kernel area
    fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(_np_dtype(dtype)))


def _he_matrix(rng, rows, cols, dtype):
    std = np.sqrt(2.0 / rows)
    return Tensor((rng.standard_normal((rows, cols)) * std).astype(_np_dtype(dtype)))


def _affine(params: ModelParams, prefix: str, channels: int, dtype: str) -> None:
    params.add(f"{prefix}.scale", Tensor(np.ones(channels, dtype=_np_dtype(dtype))))
    params.add(f"{prefix}.bias", Tensor(np.zeros(channels, dtype=_np_dtype(dtype))))


def _zero_scalar(dtype: str) -> Tensor:
    return Tensor(np.zeros((), dtype=_np_dtype(dtype)))


def init_params(cfg: SegmenterConfig, seed: int) -> ModelParams:
    """He-style fan-in init for all convs/projections; residual scales start at 0."""
    rng = np.random.default_rng(seed)
    params = ModelParams(seed=seed)
    s = cfg.stage_channels
    dt = cfg.dtype

    params.add("conv1.w", _he_conv(rng, (s[0], cfg.input_channels, STEM_KERNEL, STEM_KERNEL), dt))
    _affine(params, "conv1", s[0], dt)

    for i, bcfg in enumerate(cfg.blocks(), start=2):
        p = f"res{i}"
        params.add(f"{p}.reduce.w", _he_conv(rng, (bcfg.mid_channels, bcfg.in_channels, 1, 1), dt))
        _affine(params, f"{p}.reduce", bcfg.mid_channels, dt)
        params.add(f"{p}.group.w", _he_conv(
            rng, (bcfg.mid_channels, bcfg.mid_channels // bcfg.cardinality, 3, 3), dt))
        _affine(params, f"{p}.group", bcfg.mid_channels, dt)
        params.add(f"{p}.expand.w", _he_conv(rng, (bcfg.out_channels, bcfg.mid_channels, 1, 1), dt))
        _affine(params, f"{p}.expand", bcfg.out_channels, dt)
        if bcfg.has_projection_shortcut:
            params.add(f"{p}.shortcut.w", _he_conv(rng, (bcfg.out_channels, bcfg.in_channels, 1, 1), dt))
            _affine(params, f"{p}.shortcut", bcfg.out_channels, dt)

    # decoder fusions, deepest first: skip stage index 3, 2, 1, 0
    deep = s[4]
    for i in (3, 2, 1, 0):
        skip_c = s[i]
        params.add(f"up{i}.w", _he_conv(rng, (deep, skip_c, UPSAMPLE_KERNEL, UPSAMPLE_KERNEL), dt))
        params.add(f"att{i}.fuse.w", _he_conv(rng, (skip_c, 2 * skip_c, 1, 1), dt))
        params.add(f"att{i}.wq", _he_matrix(rng, skip_c, skip_c // 2, dt))
        params.add(f"att{i}.wk", _he_matrix(rng, skip_c, skip_c // 2, dt))
        params.add(f"att{i}.wv", _he_matrix(rng, skip_c, skip_c, dt))
        params.add(f"att{i}.gamma", _zero_scalar(dt))
        params.add(f"att{i}.beta", _zero_scalar(dt))
        deep = skip_c

    params.add("classifier.w", _he_conv(rng, (cfg.num_classes, s[0], 1, 1), dt))
    params.add("classifier.b", Tensor(np.zeros(cfg.num_classes, dtype=_np_dtype(dt))))
    return params


def init_block_params(bcfg: ResNeXtBlockConfig, rng, dtype: str = "f64",
                      prefix: str = "blk") -> ModelParams:
    """Initialize one bottleneck block's parameters under ``prefix``."""
    params = ModelParams()
    params.add(f"{prefix}.reduce.w", _he_conv(rng, (bcfg.mid_channels, bcfg.in_channels, 1, 1), dtype))
    _affine(params, f"{prefix}.reduce", bcfg.mid_channels, dtype)
    params.add(f"{prefix}.group.w", _he_conv(
        rng, (bcfg.mid_channels, bcfg.mid_channels // bcfg.cardinality, 3, 3), dtype))
    _affine(params, f"{prefix}.group", bcfg.mid_channels, dtype)
    params.add(f"{prefix}.expand.w", _he_conv(rng, (bcfg.out_channels, bcfg.mid_channels, 1, 1), dtype))
    _affine(params, f"{prefix}.expand", bcfg.out_channels, dtype)
    if bcfg.has_projection_shortcut:
        params.add(f"{prefix}.shortcut.w", _he_conv(rng, (bcfg.out_channels, bcfg.in_channels, 1, 1), dtype))
        _affine(params, f"{prefix}.shortcut", bcfg.out_channels, dtype)
    return params


def parameter_count(cfg: SegmenterConfig) -> int:
    """Closed-form count of learnable scalars for a config (no tensors built)."""
    s = cfg.stage_channels
    n = s[0] * cfg.input_channels * STEM_KERNEL ** 2 + 2 * s[0]
    for b in cfg.blocks():
        n += b.mid_channels * b.in_channels + 2 * b.mid_channels
        n += b.mid_channels * (b.mid_channels // b.cardinality) * 9 + 2 * b.mid_channels
        n += b.out_channels * b.mid_channels + 2 * b.out_channels
        if b.has_projection_shortcut:
            n += b.out_channels * b.in_channels + 2 * b.out_channels
    deep = s[4]
    for i in (3, 2, 1, 0):
        c = s[i]
        n += deep * c * UPSAMPLE_KERNEL ** 2        # transposed conv
        n += c * (2 * c)                            # fusion 1x1
        n += 2 * (c * (c // 2)) + c * c             # q/k/v projections
        n += 2                                      # gamma, beta
        deep = c
    n += cfg.num_classes * s[0] + cfg.num_classes
    return n


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _affine_relu(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return ops.relu(ops.channel_affine(x, params[f"{prefix}.scale"], params[f"{prefix}.bias"]))


def block_params(params: ModelParams, prefix: str, cfg: ResNeXtBlockConfig) -> ResNeXtBlockParams:
    bp = ResNeXtBlockParams(
        reduce_w=params[f"{prefix}.reduce.w"],
        reduce_scale=params[f"{prefix}.reduce.scale"],
        reduce_bias=params[f"{prefix}.reduce.bias"],
        group_w=params[f"{prefix}.group.w"],
        group_scale=params[f"{prefix}.group.scale"],
        group_bias=params[f"{prefix}.group.bias"],
        expand_w=params[f"{prefix}.expand.w"],
        expand_scale=params[f"{prefix}.expand.scale"],
        expand_bias=params[f"{prefix}.expand.bias"],
    )
    if cfg.has_projection_shortcut:
        bp.shortcut_w = params[f"{prefix}.shortcut.w"]
        bp.shortcut_scale = params[f"{prefix}.shortcut.scale"]
        bp.shortcut_bias = params[f"{prefix}.shortcut.bias"]
    return bp


def resnext_block_forward(x: Tensor, cfg: ResNeXtBlockConfig, p: ResNeXtBlockParams) -> Tensor:
    """relu(expand(grouped3x3(reduce(x))) + shortcut(x)) with per-channel affines."""
    if x.rank != 3 or x.shape[0] != cfg.in_channels:
        raise DimensionError(f"expected {cfg.in_channels} x H x W input, got {x.shape}")
    h = ops.conv2d_grouped(x, p.reduce_w)
    h = ops.relu(ops.channel_affine(h, p.reduce_scale, p.reduce_bias))
    h = ops.conv2d_grouped(h, p.group_w, stride=cfg.stride, pad=1, groups=cfg.cardinality)
    h = ops.relu(ops.channel_affine(h, p.group_scale, p.group_bias))
    h = ops.conv2d_grouped(h, p.expand_w)
    h = ops.channel_affine(h, p.expand_scale, p.expand_bias)
    if cfg.has_projection_shortcut:
        sc = ops.conv2d_grouped(x, p.shortcut_w, stride=cfg.stride)
        sc = ops.channel_affine(sc, p.shortcut_scale, p.shortcut_bias)
    else:
        sc = x
    return ops.relu(ops.add(h, sc))


def encoder_forward(image: Tensor, params: ModelParams, cfg: SegmenterConfig) -> list[Tensor]:
    """Five feature maps at strides 2, 4, 8, 16, 32 relative to the input."""
    if image.rank != 3 or image.shape[0] != cfg.input_channels:
        raise DimensionError(f"expected {cfg.input_channels} x H x W image, got {image.shape}")
    h, w = image.shape[1:]
    if h % 32 or w % 32:
        raise DimensionError(f"spatial dims must be divisible by 32, got {h}x{w}")
    # inputs arrive in [0, 1]; center to [-1, 1] before the stem conv
    x = ops.affine_const(image, 2.0, -1.0)
    x = ops.conv2d_grouped(x, params["conv1.w"], stride=2, pad=1)
    x = _affine_relu(x, params, "conv1")
    features = [x]
    for i, bcfg in enumerate(cfg.blocks(), start=2):
        x = resnext_block_forward(x, bcfg, block_params(params, f"res{i}", bcfg))
        features.append(x)
    return features


def _attention_params(params: ModelParams, i: int) -> AttentionBlockParams:
    return AttentionBlockParams(
        fuse_w=params[f"att{i}.fuse.w"],
        proj=ProjectionWeights(params[f"att{i}.wq"], params[f"att{i}.wk"], params[f"att{i}.wv"]),
        gamma=params[f"att{i}.gamma"],
        beta=params[f"att{i}.beta"],
    )


def segmenter_forward(image: Tensor, params: ModelParams, cfg: SegmenterConfig,
                      ablate_attention: bool = False) -> Tensor:
    """Full forward pass to k x H x W class logits.

    ``ablate_attention`` replaces each attention block by its fusion conv
    alone; with all gamma/beta at 0 both paths agree exactly.
    """
    features = encoder_forward(image, params, cfg)
    d = features[4]
    for i in (3, 2, 1, 0):
        up = ops.conv_transpose2d(d, params[f"up{i}.w"], stride=2)
        if ablate_attention:
            ap = _attention_params(params, i)
            d = ops.conv2d_grouped(ops.concat_channels(features[i], up), ap.fuse_w)
        else:
            d = attention_block_forward(features[i], up, _attention_params(params, i))
    d = ops.bilinear_upsample(d, 2)
    logits = ops.conv2d_grouped(d, params["classifier.w"])
    return ops.add_channel_bias(logits, params["classifier.b"])
