"""Tensor operations: forwards plus the vector-Jacobian products used by the tape.

Every public op validates shapes, computes with numpy, wraps the result in a
Tensor and records itself via :func:`linattn.autodiff.record`. Ops never
mutate their inputs; single-threaded runs are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .autodiff import record
from .errors import ConfigurationError, DimensionError, NumericError
from .tensor import Tensor


def _check_same_dtype(*ts: Tensor) -> None:
    dtypes = {t.dtype for t in ts}
    if len(dtypes) > 1:
        raise DimensionError(f"mixed dtypes {sorted(dtypes)}")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # 0.5 * (1 + tanh(x/2)) == logistic sigmoid, overflow-free at any |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    _check_same_dtype(a, b)
    out = Tensor(a.data @ b.data)
    return record(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def transpose(a: Tensor) -> Tensor:
    if a.rank != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got {a.shape}")
    out = Tensor(a.data.T)
    return record(out, [(a, lambda g: g.T)])


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}")
    orig = a.shape
    out = Tensor(a.data.reshape(shape))
    return record(out, [(a, lambda g: g.reshape(orig))])


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    out = Tensor(a.data + b.data)
    return record(out, [(a, lambda g: g), (b, lambda g: g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul needs equal shapes, got {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    out = Tensor(a.data * b.data)
    return record(out, [
        (a, lambda g: g * b.data),
        (b, lambda g: g * a.data),
    ])


def scale(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a learnable scalar (rank-0) tensor."""
    if s.size != 1:
        raise DimensionError(f"scale factor must be a scalar tensor, got shape {s.shape}")
    _check_same_dtype(a, s)
    out = Tensor(a.data * s.data.reshape(())[()])
    return record(out, [
        (a, lambda g: g * s.data.reshape(())[()]),
        (s, lambda g: np.asarray(np.sum(g * a.data), dtype=a.data.dtype).reshape(s.shape)),
    ])


def mul_scalar(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant (no gradient for the constant)."""
    out = Tensor(a.data * a.data.dtype.type(c))
    return record(out, [(a, lambda g: g * a.data.dtype.type(c))])


def affine_const(a: Tensor, mul_c: float, add_c: float) -> Tensor:
    """Elementwise a * mul_c + add_c with Python constants."""
    m = a.data.dtype.type(mul_c)
    out = Tensor(a.data * m + a.data.dtype.type(add_c))
    return record(out, [(a, lambda g: g * m)])


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.data.dtype))
    return record(out, [(a, lambda g: np.full_like(a.data, g.reshape(())[()]))])


def row_sums(a: Tensor) -> Tensor:
    """M x N -> M x 1 sums along rows."""
    if a.rank != 2:
        raise DimensionError(f"row_sums needs a rank-2 tensor, got {a.shape}")
    out = Tensor(a.data.sum(axis=1, keepdims=True))
    return record(out, [(a, lambda g: np.broadcast_to(g, a.shape))])


def col_sums(a: Tensor) -> Tensor:
    """M x N -> 1 x N sums down columns."""
    if a.rank != 2:
        raise DimensionError(f"col_sums needs a rank-2 tensor, got {a.shape}")
    out = Tensor(a.data.sum(axis=0, keepdims=True))
    return record(out, [(a, lambda g: np.broadcast_to(g, a.shape))])


def divide_rows(num: Tensor, den: Tensor) -> Tensor:
    """Divide each row of ``num`` (M x D) by the matching entry of ``den`` (M x 1)."""
    if num.rank != 2 or den.shape != (num.shape[0], 1):
        raise DimensionError(f"divide_rows needs M x D and M x 1, got {num.shape} and {den.shape}")
    _check_same_dtype(num, den)
    out_arr = num.data / den.data
    out = Tensor(out_arr)
    return record(out, [
        (num, lambda g: g / den.data),
        (den, lambda g: -(g * out_arr).sum(axis=1, keepdims=True) / den.data),
    ])


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    return record(out, [(a, lambda g: g * (a.data > 0))])


def softplus(a: Tensor) -> Tensor:
    """Stable log(1 + e^x): max(x, 0) + log1p(e^-|x|), floored to stay > 0.

    The floor (sqrt of the smallest normal float) only engages below
    x ~ -354 (f64), where the exact value underflows; it keeps downstream
    inner products of softplus outputs strictly positive.
    """
    x = a.data
    y = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    floor = np.sqrt(np.finfo(x.dtype).tiny)
    out = Tensor(np.maximum(y, floor))
    return record(out, [(a, lambda g: g * _stable_sigmoid(x))])


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of an M x P matrix, stabilized by per-row max subtraction."""
    if a.rank != 2:
        raise DimensionError(f"softmax_rows needs a rank-2 tensor, got {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise DimensionError(f"softmax_rows needs nonempty rows, got {a.shape}")
    # computed in place inside the freshly allocated output buffer
    p = a.data - a.data.max(axis=1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=1, keepdims=True)
    out = Tensor(p)
    return record(out, [
        (a, lambda g: p * (g - (g * p).sum(axis=1, keepdims=True))),
    ])


# ---------------------------------------------------------------------------
# convolution family (channel-major single images: C x H x W)
# ---------------------------------------------------------------------------

def _conv_out_size(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(c * kh * kw, oh * ow)


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int, groups: int) -> np.ndarray:
    cin, h, wd = x.shape
    cout, cing, kh, kw = w.shape
    oh, ow = _conv_out_size(h, wd, kh, kw, stride, pad)
    xp = _pad_hw(x, pad)
    out = np.empty((cout, oh, ow), dtype=x.dtype)
    cpg_in, cpg_out = cin // groups, cout // groups
    for gi in range(groups):
        cols = _im2col(xp[gi * cpg_in:(gi + 1) * cpg_in], kh, kw, stride, oh, ow)
        wg = w[gi * cpg_out:(gi + 1) * cpg_out].reshape(cpg_out, -1)
        out[gi * cpg_out:(gi + 1) * cpg_out] = (wg @ cols).reshape(cpg_out, oh, ow)
    return out


def _conv_input_grad(gout: np.ndarray, w: np.ndarray, stride: int, pad: int,
                     groups: int, in_hw: tuple[int, int]) -> np.ndarray:
    h, wd = in_hw
    cout, cing, kh, kw = w.shape
    cin = cing * groups
    oh, ow = gout.shape[1:]
    gxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=gout.dtype)
    cpg_in, cpg_out = cin // groups, cout // groups
    for gi in range(groups):
        wg = w[gi * cpg_out:(gi + 1) * cpg_out].reshape(cpg_out, -1)
        gcols = (wg.T @ gout[gi * cpg_out:(gi + 1) * cpg_out].reshape(cpg_out, -1))
        gcols = gcols.reshape(cing, kh, kw, oh, ow)
        sl = gxp[gi * cpg_in:(gi + 1) * cpg_in]
        for i in range(kh):
            for j in range(kw):
                sl[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += gcols[:, i, j]
    if pad == 0:
        return gxp
    return np.ascontiguousarray(gxp[:, pad:pad + h, pad:pad + wd])


def _conv_weight_grad(x: np.ndarray, gout: np.ndarray, stride: int, pad: int,
                      groups: int, kh: int, kw: int) -> np.ndarray:
    cin = x.shape[0]
    cout, oh, ow = gout.shape
    xp = _pad_hw(x, pad)
    cpg_in, cpg_out = cin // groups, cout // groups
    gw = np.empty((cout, cpg_in, kh, kw), dtype=x.dtype)
    for gi in range(groups):
        cols = _im2col(xp[gi * cpg_in:(gi + 1) * cpg_in], kh, kw, stride, oh, ow)
        gg = gout[gi * cpg_out:(gi + 1) * cpg_out].reshape(cpg_out, -1)
        gw[gi * cpg_out:(gi + 1) * cpg_out] = (gg @ cols.T).reshape(cpg_out, cpg_in, kh, kw)
    return gw


def conv2d_grouped(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """Grouped cross-correlation of a C x H x W image with Cout x (Cin/g) x kh x kw weights."""
    if x.rank != 3 or w.rank != 4:
        raise DimensionError(f"conv2d needs C x H x W input and 4-D weights, got {x.shape}, {w.shape}")
    _check_same_dtype(x, w)
    cin, h, wd = x.shape
    cout, cing, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigurationError(f"groups {groups} must divide in/out channels ({cin}, {cout})")
    if cing != cin // groups:
        raise DimensionError(f"weight expects {cing} channels per group, input provides {cin // groups}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if kh > h + 2 * pad or kw > wd + 2 * pad:
        raise DimensionError(f"kernel {kh}x{kw} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}")
    oh, ow = _conv_out_size(h, wd, kh, kw, stride, pad)
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"conv output would be {oh}x{ow} for input {x.shape}")
    out = Tensor(_conv_fwd(x.data, w.data, stride, pad, groups))
    return record(out, [
        (x, lambda g: _conv_input_grad(g, w.data, stride, pad, groups, (h, wd))),
        (w, lambda g: _conv_weight_grad(x.data, g, stride, pad, groups, kh, kw)),
    ])


def conv_transpose2d(x: Tensor, w: Tensor, stride: int, pad: int = 0) -> Tensor:
    """Transposed convolution (adjoint of conv2d with the same stride/pad).

    Weights are Cin x Cout x kh x kw; output spatial size is
    stride*(H-1) + kh - 2*pad. With a 2 x 2 kernel, stride 2 and no padding
    this is an exact x2 upsampling.
    """
    if x.rank != 3 or w.rank != 4:
        raise DimensionError(f"conv_transpose2d needs C x H x W input and 4-D weights, got {x.shape}, {w.shape}")
    _check_same_dtype(x, w)
    cin, h, wd = x.shape
    wcin, cout, kh, kw = w.shape
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if wcin != cin:
        raise DimensionError(f"weight expects {wcin} input channels, got {cin}")
    out_h = stride * (h - 1) + kh - 2 * pad
    out_w = stride * (wd - 1) + kw - 2 * pad
    if out_h <= 0 or out_w <= 0:
        raise DimensionError(f"conv_transpose output would be {out_h}x{out_w}")
    # forward of the transpose == input-gradient of the matching conv
    wc = w.data  # as conv weights: (conv out = cin) x (conv in = cout) x kh x kw
    out = Tensor(_conv_input_grad(x.data, wc, stride, pad, 1, (out_h, out_w)))
    return record(out, [
        (x, lambda g: _conv_fwd(g, wc, stride, pad, 1)),
        (w, lambda g: _conv_weight_grad(g, x.data, stride, pad, 1, kh, kw)),
    ])


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 3 or b.rank != 3 or a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"concat_channels needs matching H x W, got {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    ca = a.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0))
    return record(out, [
        (a, lambda g: g[:ca]),
        (b, lambda g: g[ca:]),
    ])


def add_channel_bias(x: Tensor, bias_c: Tensor) -> Tensor:
    """Add a per-channel bias to a C x H x W tensor."""
    if x.rank != 3:
        raise DimensionError(f"add_channel_bias needs C x H x W, got {x.shape}")
    if bias_c.shape != (x.shape[0],):
        raise DimensionError(f"bias must have shape ({x.shape[0]},), got {bias_c.shape}")
    _check_same_dtype(x, bias_c)
    out = Tensor(x.data + bias_c.data[:, None, None])
    return record(out, [
        (x, lambda g: g),
        (bias_c, lambda g: g.sum(axis=(1, 2))),
    ])


def channel_affine(x: Tensor, scale_c: Tensor, bias_c: Tensor) -> Tensor:
    """Per-channel y = x * scale[c] + bias[c] over a C x H x W tensor."""
    if x.rank != 3:
        raise DimensionError(f"channel_affine needs C x H x W, got {x.shape}")
    c = x.shape[0]
    if scale_c.shape != (c,) or bias_c.shape != (c,):
        raise DimensionError(f"affine params must have shape ({c},), got {scale_c.shape}, {bias_c.shape}")
    _check_same_dtype(x, scale_c, bias_c)
    s = scale_c.data[:, None, None]
    out = Tensor(x.data * s + bias_c.data[:, None, None])
    return record(out, [
        (x, lambda g: g * s),
        (scale_c, lambda g: (g * x.data).sum(axis=(1, 2))),
        (bias_c, lambda g: g.sum(axis=(1, 2))),
    ])


# ---------------------------------------------------------------------------
# bilinear upsampling (align-corners = false)
# ---------------------------------------------------------------------------

def _bilinear_axis(n: int, factor: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dst = np.arange(n * factor, dtype=np.float64)
    src = (dst + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.int64)
    t = (src - i0).astype(dtype)
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)
    return lo, hi, t


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Upsample C x H x W by an integer factor with bilinear interpolation."""
    if x.rank != 3:
        raise DimensionError(f"bilinear_upsample needs C x H x W, got {x.shape}")
    if factor != int(factor) or factor < 1:
        raise ConfigurationError(f"factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    c, h, w = x.shape
    r0, r1, tr = _bilinear_axis(h, factor, x.data.dtype)
    c0, c1, tc = _bilinear_axis(w, factor, x.data.dtype)
    trc = tr[None, :, None]
    tcc = tc[None, None, :]

    def fwd(arr: np.ndarray) -> np.ndarray:
        rows = arr[:, r0, :] * (1 - trc) + arr[:, r1, :] * trc
        return rows[:, :, c0] * (1 - tcc) + rows[:, :, c1] * tcc

    def adj(g: np.ndarray) -> np.ndarray:
        grows = np.zeros((c, h * factor, w), dtype=g.dtype)
        np.add.at(grows, (slice(None), slice(None), c0), g * (1 - tcc))
        np.add.at(grows, (slice(None), slice(None), c1), g * tcc)
        gx = np.zeros((c, h, w), dtype=g.dtype)
        np.add.at(gx, (slice(None), r0, slice(None)), grows * (1 - trc))
        np.add.at(gx, (slice(None), r1, slice(None)), grows * trc)
        return gx

    out = Tensor(fwd(x.data))
    return record(out, [(x, adj)])


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean per-pixel cross entropy of k x H x W logits against integer labels."""
    if logits.rank != 3:
        raise DimensionError(f"logits must be k x H x W, got {logits.shape}")
    k, h, w = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (h, w):
        raise DimensionError(f"labels shape {labels.shape} does not match logits spatial {h}x{w}")
    if labels.min() < 0 or labels.max() >= k:
        raise NumericError(f"label out of range [0, {k}) in loss: {labels.min()}..{labels.max()}")
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0))
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    logp = z[labels, ii, jj] - lse
    npix = h * w
    out = Tensor(np.asarray(-logp.sum() / npix, dtype=logits.data.dtype))

    def grad_logits(g: np.ndarray) -> np.ndarray:
        p = np.exp(z - lse[None])
        p[labels, ii, jj] -= 1.0
        return (g.reshape(())[()] / npix) * p

    return record(out, [(logits, grad_logits)])


def argmax_channels(logits: Tensor) -> np.ndarray:
    """Per-pixel argmax over the channel axis of k x H x W logits."""
    if logits.rank != 3:
        raise DimensionError(f"logits must be k x H x W, got {logits.shape}")
    return np.argmax(logits.data, axis=0)
