"""Neural building blocks: dilated 2-D convolution, 1x1 convolution, batch
normalization, ELU, 2x2 max pooling, 2x2 nearest-neighbor upsampling,
channel concatenation and channelwise softmax, each with a backward rule.

All spatial ops take N,C,H,W tensors.  Convolutions are stride-1 with
"same" zero padding (pad = dilation*(k-1)/2 per side for odd k), so spatial
dimensions are always preserved.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Variable, as_variable, record_op


def _require_nchw(x: np.ndarray, op: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{op} expects an N,C,H,W tensor, got shape {x.shape}")


# Transient scratch buffers (im2col, padded inputs, gradient layouts) are
# pooled per shape so large allocations are not page-faulted afresh on every
# call.  Contents never outlive one op's forward or backward body; this
# matches the one-training-context concurrency model.
_scratch: dict[tuple, np.ndarray] = {}


def _scratch_buffer(tag: str, shape: tuple, dtype) -> np.ndarray:
    key = (tag, shape, np.dtype(dtype).str)
    buf = _scratch.get(key)
    if buf is None:
        buf = np.empty(shape, dtype=dtype)
        _scratch[key] = buf
    return buf


def _as_channel_major(arr: np.ndarray, tag: str) -> np.ndarray:
    """Copy an N,C,H,W array into a pooled (C, N*H*W) matrix."""
    n, c, h, w = arr.shape
    buf = _scratch_buffer(tag, (c, n, h, w), arr.dtype)
    buf[...] = arr.transpose(1, 0, 2, 3)
    return buf.reshape(c, n * h * w)


def conv2d(x, w, b, dilation: int = 1) -> Variable:
    """Dilated same-padding convolution.

    out[n,o,y,x] = b[o] + sum_{c,i,j} w[o,c,i,j] * xpad[n,c,y+d*i,x+d*j]

    `w` has shape (out_ch, in_ch, k, k) with odd k; `dilation` must be a
    positive integer.  Internally lowered to one GEMM over an im2col buffer.
    """
    x, w, b = as_variable(x), as_variable(w), as_variable(b)
    xv, wv, bv = x.value, w.value, b.value
    _require_nchw(xv, "conv2d")
    if wv.ndim != 4 or wv.shape[2] != wv.shape[3]:
        raise ValueError(f"weights must be (out_ch, in_ch, k, k), got {wv.shape}")
    out_ch, in_ch, k, _ = wv.shape
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if xv.shape[1] != in_ch:
        raise ValueError(
            f"channel mismatch: input has {xv.shape[1]}, weights expect {in_ch}")
    if bv.shape != (out_ch,):
        raise ValueError(f"bias must have shape ({out_ch},), got {bv.shape}")
    d = int(dilation)
    if d < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    if k == 1:
        return _conv1x1_impl(x, w, b)

    n, _, height, width = xv.shape
    out_mat = _conv_gemm(xv, wv, d)
    out_val = out_mat.reshape(out_ch, n, height, width).transpose(1, 0, 2, 3) \
        + bv[None, :, None, None]
    out = Variable(out_val)

    def backward_fn(g):
        gw = gb = gx = None
        g_mat = _as_channel_major(g, "conv_g")
        if w.requires_grad:
            cols_mat = _im2col(xv, k, d)  # rebuilt; scratch, not captured
            gw = (g_mat @ cols_mat.T).reshape(wv.shape)
        if b.requires_grad:
            gb = g_mat.sum(axis=1)
        if x.requires_grad:
            # dL/dx is itself a same-padding dilated convolution of the
            # output gradient with the spatially flipped, channel-transposed
            # kernel; one big-K GEMM instead of a scatter over taps
            w_flip = np.ascontiguousarray(
                wv[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx_mat = _conv_gemm(g, w_flip, d)
            gx = gx_mat.reshape(in_ch, n, height, width).transpose(1, 0, 2, 3)
        return (gx, gw, gb)

    return record_op(out, (x, w, b), backward_fn)


def _im2col(xv: np.ndarray, k: int, d: int) -> np.ndarray:
    """Lower a padded N,C,H,W tensor to the (C*k*k, N*H*W) GEMM operand;
    rows ordered (c, i, j) to match the weight layout.  Scratch-backed."""
    n, in_ch, height, width = xv.shape
    pad = d * (k - 1) // 2
    xp = _scratch_buffer("conv_pad",
                         (n, in_ch, height + 2 * pad, width + 2 * pad),
                         xv.dtype)
    xp[...] = 0
    xp[:, :, pad:pad + height, pad:pad + width] = xv
    cols = _scratch_buffer("conv_cols", (in_ch, k, k, n, height, width),
                           xv.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i * d:i * d + height,
                               j * d:j * d + width].transpose(1, 0, 2, 3)
    return cols.reshape(in_ch * k * k, n * height * width)


def _conv_gemm(xv: np.ndarray, wv: np.ndarray, d: int) -> np.ndarray:
    """Same-padding dilated correlation as one GEMM; returns (out_ch, N*H*W)."""
    out_ch, in_ch, k, _ = wv.shape
    cols_mat = _im2col(xv, k, d)
    w_mat = wv.reshape(out_ch, in_ch * k * k)
    return w_mat @ cols_mat


def _conv1x1_impl(x: Variable, w: Variable, b: Variable) -> Variable:
    xv, bv = x.value, b.value
    n, in_ch, height, width = xv.shape
    out_ch = w.value.shape[0]
    w2 = w.value[:, :, 0, 0]  # (O, C)
    out_val = (w2 @ _as_channel_major(xv, "conv1x1_x")) \
        .reshape(out_ch, n, height, width)
    out_val = out_val.transpose(1, 0, 2, 3) + bv[None, :, None, None]
    out = Variable(out_val)

    def backward_fn(g):
        gw = gb = gx = None
        g_mat = _as_channel_major(g, "conv1x1_g")
        if w.requires_grad:
            x_mat = _as_channel_major(xv, "conv1x1_x")
            gw = (g_mat @ x_mat.T).reshape(out_ch, in_ch, 1, 1)
        if b.requires_grad:
            gb = g_mat.sum(axis=1)
        if x.requires_grad:
            gx = (w2.T @ g_mat).reshape(in_ch, n, height, width) \
                .transpose(1, 0, 2, 3)
        return (gx, gw, gb)

    return record_op(out, (x, w, b), backward_fn)


def conv1x1(x, w, b) -> Variable:
    """Per-pixel linear map across channels (1x1 convolution, dilation 1)."""
    w = as_variable(w)
    if w.value.ndim != 4 or w.value.shape[2:] != (1, 1):
        raise ValueError(f"conv1x1 weights must be (out_ch, in_ch, 1, 1), "
                         f"got {w.value.shape}")
    return conv2d(x, w, as_variable(b), dilation=1)


def batch_norm(x, gamma, beta, running_mean, running_var, *,
               eps: float = 1e-5, momentum: float = 0.9,
               training: bool) -> Variable:
    """Per-channel batch normalization over the (N, H, W) axes.

    Training mode normalizes with batch statistics and folds them into the
    running buffers as running = momentum*running + (1-momentum)*batch;
    inference mode normalizes with the running buffers only.  The running
    buffers are plain arrays mutated in place, never differentiated.
    """
    x, gamma, beta = as_variable(x), as_variable(gamma), as_variable(beta)
    xv = x.value
    _require_nchw(xv, "batch_norm")
    ch = xv.shape[1]
    if gamma.value.shape != (ch,) or beta.value.shape != (ch,):
        raise ValueError(f"gamma/beta must have shape ({ch},)")
    if running_mean.shape != (ch,) or running_var.shape != (ch,):
        raise ValueError(f"running stats must have shape ({ch},)")
    m = xv.shape[0] * xv.shape[2] * xv.shape[3]
    if m == 0:
        raise ValueError("batch_norm got a zero-size batch")

    if training:
        mu = xv.mean(axis=(0, 2, 3))
        var = xv.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu = running_mean.copy()
        var = running_var.copy()

    inv = 1.0 / np.sqrt(var + eps)
    xhat = xv - mu[None, :, None, None]
    xhat *= inv[None, :, None, None]
    out_val = xhat * gamma.value[None, :, None, None]
    out_val += beta.value[None, :, None, None]
    out = Variable(out_val)

    gamma_v = gamma.value

    def backward_fn(g):
        ggamma = gbeta = gx = None
        if gamma.requires_grad:
            ggamma = np.einsum("nchw,nchw->c", g, xhat)
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gx = g * gamma_v[None, :, None, None]
            if training:
                inv_m = 1.0 / m
                mean_dxhat = gx.sum(axis=(0, 2, 3)) * inv_m
                mean_dxhat_xhat = np.einsum("nchw,nchw->c", gx, xhat) * inv_m
                gx -= mean_dxhat[None, :, None, None]
                gx -= xhat * mean_dxhat_xhat[None, :, None, None]
            gx *= inv[None, :, None, None]
        return (gx, ggamma, gbeta)

    return record_op(out, (x, gamma, beta), backward_fn)


def elu(x) -> Variable:
    """Exponential linear unit with alpha = 1: x for x > 0, exp(x)-1 otherwise."""
    x = as_variable(x)
    xv = x.value
    # max(x,0) + expm1(min(x,0)) equals the two branches without indexing
    out_val = np.maximum(xv, 0)
    out_val += np.expm1(np.minimum(xv, 0))
    out = Variable(out_val)

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        # derivative is 1 on the positive branch, exp(x) = y + 1 otherwise
        one = np.ones((), dtype=xv.dtype)
        return (g * np.where(xv > 0, one, out_val + one),)

    return record_op(out, (x,), backward_fn)


def maxpool2x2(x) -> tuple[Variable, np.ndarray]:
    """2x2 max pooling with stride 2.

    Returns (pooled, argmax) where argmax holds the flat index 0..3 of the
    winning element per window in row-major window order; ties go to the
    first occurrence, and the backward rule routes the whole gradient there.
    """
    x = as_variable(x)
    xv = x.value
    _require_nchw(xv, "maxpool2x2")
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    windows = (xv.reshape(n, c, h // 2, 2, w // 2, 2)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, c, h // 2, w // 2, 4))
    idx = windows.argmax(axis=-1)
    out_val = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = Variable(out_val)

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        gx = (dwin.reshape(n, c, h // 2, w // 2, 2, 2)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h, w))
        return (gx,)

    return record_op(out, (x,), backward_fn), idx


def upsample2x2(x) -> Variable:
    """Nearest-neighbor 2x upsampling: every pixel fills a 2x2 block.

    The backward rule sums the four gradient contributions per source pixel.
    """
    x = as_variable(x)
    xv = x.value
    _require_nchw(xv, "upsample2x2")
    n, c, h, w = xv.shape
    out = Variable(xv.repeat(2, axis=2).repeat(2, axis=3))

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return record_op(out, (x,), backward_fn)


def concat_channels(a, b) -> Variable:
    """Stack two feature maps along the channel axis."""
    a, b = as_variable(a), as_variable(b)
    av, bv = a.value, b.value
    _require_nchw(av, "concat_channels")
    _require_nchw(bv, "concat_channels")
    if av.shape[0] != bv.shape[0] or av.shape[2:] != bv.shape[2:]:
        raise ValueError(
            f"batch/spatial mismatch: {av.shape} vs {bv.shape}")
    ca = av.shape[1]
    out = Variable(np.concatenate([av, bv], axis=1))

    def backward_fn(g):
        return (g[:, :ca] if a.requires_grad else None,
                g[:, ca:] if b.requires_grad else None)

    return record_op(out, (a, b), backward_fn)


def softmax_channels(x) -> Variable:
    """Per-pixel softmax over the channel axis, computed max-shifted."""
    x = as_variable(x)
    xv = x.value
    _require_nchw(xv, "softmax_channels")
    shifted = xv - xv.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Variable(y)

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return record_op(out, (x,), backward_fn)


class Conv2d:
    """Convolution layer owning its weight and bias Variables.

    Weights start from a centered normal scaled by sqrt(2/fan_in);
    biases start at zero.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, dilation: int,
                 rng: np.random.Generator, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        scale = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, scale, size=(out_ch, in_ch, kernel, kernel))
        self.w = Variable(w.astype(dtype), requires_grad=True)
        self.b = Variable(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.dilation = dilation
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel

    def __call__(self, x) -> Variable:
        return conv2d(x, self.w, self.b, dilation=self.dilation)

    def parameters(self) -> dict[str, Variable]:
        return {"w": self.w, "b": self.b}


class BatchNorm2d:
    """Batch normalization layer; gamma/beta trainable, running stats buffered."""

    def __init__(self, ch: int, eps: float = 1e-5, momentum: float = 0.9,
                 dtype=np.float32):
        self.gamma = Variable(np.ones(ch, dtype=dtype), requires_grad=True)
        self.beta = Variable(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self.ch = ch

    def __call__(self, x, training: bool) -> Variable:
        return batch_norm(x, self.gamma, self.beta,
                          self.running_mean, self.running_var,
                          eps=self.eps, momentum=self.momentum,
                          training=training)

    def parameters(self) -> dict[str, Variable]:
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean,
                "running_var": self.running_var}
