"""Numerical micro-kernels: GEMM, convolutions, pooling, activations,
batch-norm inference, linear layers and row softmax.

All kernels are pure functions of float32 inputs, accumulate in float32 or
wider, and are deterministic under a fixed BLAS thread count. conv2d is the
direct (window gather) route; conv2d_im2col produces identical results via
patch unfolding followed by GEMM and is the route the model uses for dense
kernels because large matrix multiplications are what CPUs do best.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from .errors import ConfigError, DataError, GeometryError, ShapeError
from .tensor import DTYPE, ConvSpec, check_ndim


# ---------------------------------------------------------------------------
# GEMM / linear
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[i, j] = sum_p a[i, p] * b[p, j] for 2-d float32 operands."""
    check_ndim(a, 2, "matmul lhs")
    check_ndim(b, 2, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, lhs {tuple(a.shape)} vs rhs {tuple(b.shape)}"
        )
    return np.matmul(a, b)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Affine map of row vectors: x [n, din] with w [dout, din] -> [n, dout]."""
    check_ndim(x, 2, "linear input")
    check_ndim(w, 2, "linear weight")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"linear: input features {x.shape[1]} != weight features {w.shape[1]}"
        )
    y = np.matmul(x, w.T)
    if b is not None:
        y = y + b
    return y


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _check_conv_args(x, w, spec):
    check_ndim(x, 4, "conv input")
    check_ndim(w, 4, "conv weight")
    n, c, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if kh != spec.kernel_h or kw != spec.kernel_w:
        raise ShapeError(f"conv weight kernel {kh}x{kw} != spec {spec.kernel_h}x{spec.kernel_w}")
    if c % spec.groups != 0 or cout % spec.groups != 0:
        raise ShapeError(
            f"conv channels not divisible by groups: in={c} out={cout} groups={spec.groups}"
        )
    if cin_g != c // spec.groups:
        raise ShapeError(
            f"conv weight expects {cin_g} channels per group, input supplies {c // spec.groups}"
        )
    oh, ow = spec.out_hw(h, wd)
    if oh < 1 or ow < 1:
        raise GeometryError(
            f"conv output extents {oh}x{ow} < 1 for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {spec.stride}, padding {spec.padding}"
        )
    return n, c, h, wd, cout, oh, ow


def _pad_nchw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Strided view [N, C, H', W', kh, kw] of the padded input."""
    xp = _pad_nchw(x, spec.padding)
    win = sliding_window_view(xp, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    return win[:, :, :: spec.stride, :: spec.stride, :, :]


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    """Direct cross-correlation. Weight is [Cout, Cin/groups, kh, kw]."""
    n, c, h, wd, cout, oh, ow = _check_conv_args(x, w, spec)
    win = _windows(x, spec)
    g = spec.groups
    if g == 1:
        out = np.einsum("nchwij,ocij->nohw", win, w, dtype=DTYPE)
    elif g == c and w.shape[1] == 1 and cout == c:
        out = np.einsum("nchwij,cij->nchw", win, w[:, 0], dtype=DTYPE)
    else:
        cpg, opg = c // g, cout // g
        out = np.empty((n, cout, oh, ow), dtype=DTYPE)
        for gi in range(g):
            out[:, gi * opg : (gi + 1) * opg] = np.einsum(
                "nchwij,ocij->nohw",
                win[:, gi * cpg : (gi + 1) * cpg],
                w[gi * opg : (gi + 1) * opg],
                dtype=DTYPE,
            )
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=DTYPE)


def im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Unfold patches to [N, C*kh*kw, H'*W'] (channel-major, then kernel rows)."""
    check_ndim(x, 4, "im2col input")
    n, c = x.shape[:2]
    win = _windows(x, spec)  # [N, C, H', W', kh, kw]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols.reshape(n, c * spec.kernel_h * spec.kernel_w, oh * ow))


def conv2d_im2col(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    """Convolution as patch unfolding followed by GEMM; agrees with conv2d."""
    n, c, h, wd, cout, oh, ow = _check_conv_args(x, w, spec)
    g = spec.groups
    cpg, opg = c // g, cout // g
    out = np.empty((n, cout, oh * ow), dtype=DTYPE)
    wmat = w.reshape(cout, cpg * spec.kernel_h * spec.kernel_w)
    for ni in range(n):
        cols = im2col(x[ni : ni + 1], spec)[0]  # [C*kh*kw, H'W']
        if g == 1:
            out[ni] = matmul(wmat, cols)
        else:
            kk = spec.kernel_h * spec.kernel_w
            cols = cols.reshape(g, cpg * kk, oh * ow)
            for gi in range(g):
                out[ni, gi * opg : (gi + 1) * opg] = matmul(
                    wmat[gi * opg : (gi + 1) * opg], cols[gi]
                )
    out = out.reshape(n, cout, oh, ow)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=DTYPE)


def pointwise_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """1x1 convolution as a single GEMM over flattened pixels."""
    check_ndim(x, 4, "pointwise input")
    n, c, h, wd = x.shape
    cout = w.shape[0]
    if w.shape[1] != c:
        raise ShapeError(f"pointwise weight expects {w.shape[1]} channels, input has {c}")
    wmat = w.reshape(cout, c)
    out = np.matmul(wmat, x.reshape(n, c, h * wd)).reshape(n, cout, h, wd)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=DTYPE)


def depthwise_conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                      stride: int = 1) -> np.ndarray:
    """Depthwise 3x3, padding 1: nine shifted multiply-accumulates."""
    check_ndim(x, 4, "depthwise input")
    n, c, h, wd = x.shape
    if w.shape[0] != c:
        raise ShapeError(f"depthwise weight has {w.shape[0]} channels, input has {c}")
    k = w.reshape(c, 3, 3)
    xp = _pad_nchw(x, 1)
    oh = (h + 2 - 3) // stride + 1
    ow = (wd + 2 - 3) // stride + 1
    out = np.zeros((n, c, oh, ow), dtype=DTYPE)
    for i in range(3):
        for j in range(3):
            patch = xp[:, :, i : i + h : stride, j : j + wd : stride]
            out += k[None, :, i, j, None, None] * patch[:, :, :oh, :ow]
    if b is not None:
        out += b[None, :, None, None]
    return out


def conv_transpose2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, factor: int) -> np.ndarray:
    """Transposed convolution with kernel == stride == factor (non-overlapping
    up-sampling). Weight is [Cin, Cout, factor, factor]; factor 1 reduces to a
    1x1 convolution."""
    if factor not in (1, 2, 4):
        raise ConfigError(f"conv_transpose2d: unsupported factor {factor}, expected 1, 2 or 4")
    check_ndim(x, 4, "conv_transpose input")
    check_ndim(w, 4, "conv_transpose weight")
    n, c, h, wd = x.shape
    cin, cout, kh, kw = w.shape
    if cin != c:
        raise ShapeError(f"conv_transpose weight expects {cin} input channels, got {c}")
    if kh != factor or kw != factor:
        raise ShapeError(f"conv_transpose kernel {kh}x{kw} != factor {factor}")
    out = np.einsum("nchw,coij->nohiwj", x, w, dtype=DTYPE)
    out = out.reshape(n, cout, h * factor, wd * factor)
    if b is not None:
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out, dtype=DTYPE)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------

def adaptive_avg_pool2d(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average pooling onto an out_h x out_w grid. Window for output index i
    spans [floor(i*H/out), ceil((i+1)*H/out)), so equal extents are identity
    and divisible extents give equal windows."""
    check_ndim(x, 4, "adaptive_avg_pool2d input")
    n, c, h, w = x.shape
    if out_h > h or out_w > w:
        raise GeometryError(
            f"adaptive_avg_pool2d: output {out_h}x{out_w} exceeds input {h}x{w}"
        )
    if out_h == h and out_w == w:
        return x.copy()
    if h % out_h == 0 and w % out_w == 0:
        fh, fw = h // out_h, w // out_w
        return np.ascontiguousarray(
            x.reshape(n, c, out_h, fh, out_w, fw).mean(axis=(3, 5), dtype=DTYPE)
        )
    out = np.empty((n, c, out_h, out_w), dtype=DTYPE)
    for i in range(out_h):
        h0, h1 = (i * h) // out_h, -(-((i + 1) * h) // out_h)
        for j in range(out_w):
            w0, w1 = (j * w) // out_w, -(-((j + 1) * w) // out_w)
            out[:, :, i, j] = x[:, :, h0:h1, w0:w1].mean(axis=(2, 3), dtype=DTYPE)
    return out


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over spatial positions: [N, C, H, W] -> [N, C]."""
    check_ndim(x, 4, "global_avg_pool input")
    return np.ascontiguousarray(x.mean(axis=(2, 3), dtype=DTYPE))


# ---------------------------------------------------------------------------
# Softmax / activations / normalization
# ---------------------------------------------------------------------------

def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability."""
    check_ndim(m, 2, "softmax input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted, dtype=DTYPE)
    return e / e.sum(axis=1, keepdims=True, dtype=DTYPE)


_INV_SQRT2 = DTYPE(1.0 / np.sqrt(2.0))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact error-function GeLU: x * Phi(x)."""
    x = np.asarray(x, dtype=DTYPE)
    return DTYPE(0.5) * x * (DTYPE(1.0) + erf(x * _INV_SQRT2))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    return expit(x)


def activation(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "gelu":
        return gelu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation kind {kind!r}")


def batch_norm_inference(x: np.ndarray, gamma, beta, mean, var, eps: float = 1e-5) -> np.ndarray:
    """Per-channel y = gamma * (x - mean) / sqrt(var + eps) + beta on NCHW."""
    check_ndim(x, 4, "batch_norm input")
    var = np.asarray(var, dtype=DTYPE)
    if np.any(var < 0):
        raise DataError("batch_norm_inference: negative variance")
    scale = np.asarray(gamma, dtype=DTYPE) / np.sqrt(var + DTYPE(eps))
    shift = np.asarray(beta, dtype=DTYPE) - np.asarray(mean, dtype=DTYPE) * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]
