"""Attention mechanisms: softmax dot-product, kernelized forms, channel attention.

The linear-time kernel attention never materializes an N x N similarity
matrix; the quadratic form does, and exists as its exactness oracle. Both use
softplus as the feature map, whose strict positivity keeps the normalizing
denominator positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigurationError, DimensionError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    key_dim: int
    value_dim: int

    def __post_init__(self):
        if min(self.channels, self.key_dim, self.value_dim) < 1:
            raise ConfigurationError(f"attention dims must be positive, got {self}")


@dataclass
class ProjectionWeights:
    """Q/K/V projection matrices: C x Dk, C x Dk, C x Dv."""
    w_query: Tensor
    w_key: Tensor
    w_value: Tensor

    def validate(self) -> "ProjectionWeights":
        if self.w_query.rank != 2 or self.w_key.rank != 2 or self.w_value.rank != 2:
            raise DimensionError("projection weights must be rank-2")
        if self.w_query.shape != self.w_key.shape:
            raise DimensionError(
                f"query/key projections must match, got {self.w_query.shape} vs {self.w_key.shape}")
        if self.w_query.shape[0] != self.w_value.shape[0]:
            raise DimensionError(
                f"projections disagree on input channels: {self.w_query.shape} vs {self.w_value.shape}")
        return self

    @property
    def channels(self) -> int:
        return self.w_query.shape[0]

    @property
    def key_dim(self) -> int:
        return self.w_query.shape[1]

    @property
    def value_dim(self) -> int:
        return self.w_value.shape[1]


@dataclass
class AttentionBlockParams:
    """Fusion conv + the two attention branches of a decoder attention block."""
    fuse_w: Tensor          # C_out x C_in_concat x 1 x 1
    proj: ProjectionWeights
    gamma: Tensor           # rank-0 residual scale of the spatial branch
    beta: Tensor            # rank-0 residual scale of the channel branch


def project_qkv(x: Tensor, w: ProjectionWeights) -> tuple[Tensor, Tensor, Tensor]:
    """Project an N x C feature matrix to query/key/value matrices."""
    if x.rank != 2:
        raise DimensionError(f"expected N x C features, got {x.shape}")
    w.validate()
    if x.shape[1] != w.channels:
        raise DimensionError(f"features have {x.shape[1]} channels, projections expect {w.channels}")
    return ops.matmul(x, w.w_query), ops.matmul(x, w.w_key), ops.matmul(x, w.w_value)


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.rank != 2 or k.rank != 2 or v.rank != 2:
        raise DimensionError(f"Q/K/V must be rank-2, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"Q and K key dims differ: {q.shape} vs {k.shape}")
    if q.shape[0] != k.shape[0] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"row counts differ: Q {q.shape}, K {k.shape}, V {v.shape}")


def dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Softmax attention: row-normalized QK^T similarities aggregate V. O(N^2)."""
    _check_qkv(q, k, v)
    weights = ops.softmax_rows(ops.matmul(q, ops.transpose(k)))
    return ops.matmul(weights, v)


def kernel_attention_quadratic(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Kernel attention with the N x N similarity materialized.

    Exactness oracle for :func:`kernel_attention_linear`; same math, the
    associativity of the product chain unexploited.
    """
    _check_qkv(q, k, v)
    sim = ops.matmul(ops.softplus(q), ops.transpose(ops.softplus(k)))
    den = ops.row_sums(sim)
    if den.data.min() <= 0:
        raise NumericError("kernel attention normalizer must be positive")
    return ops.divide_rows(ops.matmul(sim, v), den)


def kernel_attention_linear(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Kernel attention reassociated to O(N) time and memory.

    softplus(Q) (softplus(K)^T V) over softplus(Q) colsum(softplus(K))^T:
    the Dk x Dv key-value summary and the Dk key sum are built once and
    reused for every query row, so no N x N intermediate ever exists.
    """
    _check_qkv(q, k, v)
    qp = ops.softplus(q)
    kp = ops.softplus(k)
    kv = ops.matmul(ops.transpose(kp), v)           # Dk x Dv
    ksum = ops.col_sums(kp)                         # 1 x Dk
    num = ops.matmul(qp, kv)                        # N x Dv
    den = ops.matmul(qp, ops.transpose(ksum))       # N x 1
    if den.data.min() <= 0:
        raise NumericError("kernel attention normalizer must be positive")
    return ops.divide_rows(num, den)


def _to_rows(x: Tensor) -> Tensor:
    """C x H x W feature map -> N x C matrix with N = H*W."""
    c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (c, h * w)))


def _to_map(rows: Tensor, shape: tuple) -> Tensor:
    c, h, w = shape
    return ops.reshape(ops.transpose(rows), (c, h, w))


def _spatial_core(x: Tensor, proj: ProjectionWeights) -> Tensor:
    rows = _to_rows(x)
    q, k, v = project_qkv(rows, proj)
    return _to_map(kernel_attention_linear(q, k, v), x.shape)


def _channel_core(x: Tensor) -> Tensor:
    c, h, w = x.shape
    rows = ops.reshape(x, (c, h * w))                      # C x N
    gram = ops.matmul(rows, ops.transpose(rows))           # C x C
    weights = ops.softmax_rows(gram)
    return ops.reshape(ops.matmul(weights, rows), (c, h, w))


def spatial_attention(x: Tensor, proj: ProjectionWeights, gamma: Tensor) -> Tensor:
    """Residual long-range spatial attention over a C x H x W map (linear form).

    Output is x + gamma * attended; value_dim must equal C so the residual
    adds elementwise. gamma initialized to 0 makes this an exact identity.
    """
    if x.rank != 3:
        raise DimensionError(f"expected C x H x W, got {x.shape}")
    proj.validate()
    if proj.value_dim != x.shape[0]:
        raise ConfigurationError(
            f"value dim {proj.value_dim} must equal channel count {x.shape[0]} for the residual")
    return ops.add(x, ops.scale(_spatial_core(x, proj), gamma))


def channel_attention(x: Tensor, beta: Tensor) -> Tensor:
    """Residual channel attention: C x C Gram softmax reweights channel maps.

    The Gram matrix is C x C, so cost scales with channels, not pixels.
    beta initialized to 0 makes this an exact identity.
    """
    if x.rank != 3:
        raise DimensionError(f"expected C x H x W, got {x.shape}")
    return ops.add(x, ops.scale(_channel_core(x), beta))


def attention_block_forward(low: Tensor, high: Tensor, params: AttentionBlockParams) -> Tensor:
    """Fuse two same-resolution feature maps, then refine with both attentions.

    z = 1x1-conv(concat(low, high)); out = z + gamma*spatial(z) + beta*channel(z),
    the two branches summed over one shared residual.
    """
    if low.rank != 3 or high.rank != 3:
        raise DimensionError(f"expected C x H x W maps, got {low.shape}, {high.shape}")
    if low.shape[1:] != high.shape[1:]:
        raise DimensionError(f"spatial dims differ: {low.shape} vs {high.shape}")
    z = ops.conv2d_grouped(ops.concat_channels(low, high), params.fuse_w)
    out = ops.add(z, ops.scale(_spatial_core(z, params.proj), params.gamma))
    return ops.add(out, ops.scale(_channel_core(z), params.beta))
