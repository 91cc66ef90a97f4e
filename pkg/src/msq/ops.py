"""Differentiable neural network building blocks.

Every op follows the same convention: ``op(arrays..., **hyper)`` returns
``(y, vjp)`` where ``vjp(upstream)`` yields the gradients of the array
arguments in order. Forward functions are pure; batch-norm returns its
updated running statistics instead of mutating state, so callers decide when
to commit them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# im2col machinery shared by the convolution ops


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    num = size + 2 * pad - k
    if num < 0 or num % stride != 0:
        raise ValueError(
            f"invalid conv geometry: size={size} kernel={k} stride={stride} pad={pad}"
        )
    return num // stride + 1


def _scatter_windows(dwin: np.ndarray, xshape, kh: int, kw: int,
                     stride: int, pad: int) -> np.ndarray:
    """Adjoint of patch extraction: accumulate per-window grads onto the input."""
    n, c, h, w = xshape
    oh, ow = dwin.shape[-2:]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dwin.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dwin[:, :, i, j]
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(dxp)


# ---------------------------------------------------------------------------
# Convolutions


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Contiguous (N, C*kh*kw, OH*OW) patch matrix via per-tap slice copies."""
    n, c, h, w = x.shape
    oh = _out_extent(h, kh, stride, pad)
    ow = _out_extent(w, kw, stride, pad)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        return np.ascontiguousarray(x.reshape(n, c, oh * ow)), oh, ow
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    buf = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    if stride == 1:
        for i in range(kh):
            for j in range(kw):
                buf[:, :, i, j] = x[:, :, i:i + oh, j:j + ow]
    else:
        # gather each stride phase once, then taps are unit-stride slices
        s = stride
        phases = [[np.ascontiguousarray(x[:, :, a::s, b::s]) for b in range(s)]
                  for a in range(s)]
        for i in range(kh):
            for j in range(kw):
                ph = phases[i % s][j % s]
                buf[:, :, i, j] = ph[:, :, i // s:i // s + oh, j // s:j // s + ow]
    return buf.reshape(n, c * kh * kw, oh * ow), oh, ow


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
           stride: int = 1, padding: int = 0):
    """Standard cross-correlation with zero padding.

    x: (N, C, H, W); w: (O, C, kH, kW); b: (O).
    """
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight expects {ci}")
    if b.shape != (o,):
        raise ValueError(f"bias shape {b.shape} != ({o},)")
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    wmat = w.reshape(o, c * kh * kw)
    y = np.matmul(wmat, cols)
    y += b[None, :, None]
    y = y.reshape(n, o, oh, ow)

    def vjp(dy):
        dyf = dy.reshape(n, o, oh * ow)
        db = dyf.sum(axis=(0, 2))
        dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        dcols = np.matmul(wmat.T, dyf)
        if kh == 1 and kw == 1 and stride == 1 and padding == 0:
            return dcols.reshape(x.shape), dw, db
        dwin = dcols.reshape(n, c, kh, kw, oh, ow)
        dx = _scatter_windows(dwin, x.shape, kh, kw, stride, padding)
        return dx, dw, db

    return y, vjp


def depthwise_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                     stride: int = 1, padding: int = 0):
    """Per-channel convolution: w is (C, 1, kH, kW), output channel c sees
    only input channel c."""
    n, c, h, wd = x.shape
    co, one, kh, kw = w.shape
    if one != 1 or co != c:
        raise ValueError(
            f"depthwise weight must be (C, 1, kh, kw) with C={c}, got {w.shape}"
        )
    if b.shape != (c,):
        raise ValueError(f"bias shape {b.shape} != ({c},)")
    oh = _out_extent(h, kh, stride, padding)
    ow = _out_extent(wd, kw, stride, padding)
    xp = (np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
          if padding else x)
    wk = w[:, 0]
    # per-tap fused multiply-add avoids materializing the full patch tensor
    y = np.tile(b[None, :, None, None], (n, 1, oh, ow))
    tmp = np.empty((n, c, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
            np.multiply(sl, wk[None, :, i, j, None, None], out=tmp)
            y += tmp

    def vjp(dy):
        db = dy.sum(axis=(0, 2, 3))
        dw = np.empty_like(w)
        dxp = np.zeros_like(xp)
        tmp = np.empty_like(dy)
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
                np.multiply(dy, sl, out=tmp)
                dw[:, 0, i, j] = tmp.sum(axis=(0, 2, 3))
                np.multiply(dy, wk[None, :, i, j, None, None], out=tmp)
                dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += tmp
        if padding:
            return (np.ascontiguousarray(
                dxp[:, :, padding:padding + h, padding:padding + wd]), dw, db)
        return dxp, dw, db

    return y, vjp


# ---------------------------------------------------------------------------
# Batch normalization


@dataclass
class BatchNormState:
    """Learned affine plus running statistics for one channel axis."""
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, epsilon: float = 1e-5,
               dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )


def batchnorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
              running_mean: np.ndarray, running_var: np.ndarray,
              momentum: float, epsilon: float, train: bool):
    """Channel-wise batch normalization over (N, H, W).

    Train mode normalizes by the batch mean and population (biased) variance
    and returns updated running statistics; infer mode applies the stored
    running statistics. Returns (y, vjp, new_running_mean, new_running_var).
    """
    n, c, h, w = x.shape
    axes = (0, 2, 3)
    if train:
        count = n * h * w
        if count < 2:
            raise ValueError("batchnorm train mode needs at least 2 elements per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_rm = (1.0 - momentum) * running_mean + momentum * mean.astype(running_mean.dtype)
        new_rv = (1.0 - momentum) * running_var + momentum * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
        new_rm, new_rv = running_mean, running_var
    ivar = 1.0 / np.sqrt(var + epsilon)
    # y = gamma * (x - mean) * ivar + beta, folded into one scale and shift
    a = (gamma * ivar).astype(x.dtype)
    shift = (beta - gamma * ivar * mean).astype(x.dtype)
    y = x * a[None, :, None, None]
    y += shift[None, :, None, None]

    def vjp(dy):
        xhat = x - mean[None, :, None, None].astype(x.dtype)
        xhat *= ivar[None, :, None, None].astype(x.dtype)
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        if train:
            t1 = dy - dy.mean(axis=axes)[None, :, None, None]
            xhat *= (dy * xhat).mean(axis=axes)[None, :, None, None]
            dx = (gamma * ivar)[None, :, None, None] * (t1 - xhat)
        else:
            dx = dy * (gamma * ivar)[None, :, None, None]
        return dx.astype(dy.dtype), dgamma, dbeta

    return y, vjp, new_rm, new_rv


# ---------------------------------------------------------------------------
# Pointwise / pooling / dense ops


def relu(x: np.ndarray):
    y = np.maximum(x, 0)

    def vjp(dy):
        # x > 0 exactly where y > 0, so the output doubles as the mask
        return (dy * (y > 0),)

    return y, vjp


def global_avg_pool(x: np.ndarray):
    """(N, C, H, W) -> (N, C) spatial mean."""
    n, c, h, w = x.shape
    y = x.mean(axis=(2, 3))

    def vjp(dy):
        dx = np.broadcast_to(dy[:, :, None, None], x.shape) / (h * w)
        return (dx.astype(x.dtype),)

    return y, vjp


def fully_connected(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w.T + b with x: (N, Din), w: (Dout, Din), b: (Dout)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"fully_connected shape mismatch: x {x.shape}, w {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} != ({w.shape[0]},)")
    y = x @ w.T + b[None, :]

    def vjp(dy):
        return dy @ w, dy.T @ x, dy.sum(axis=0)

    return y, vjp


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood over the batch.

    Returns (loss, dlogits) where dlogits = (softmax - onehot) / N.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    grad = softmax(logits, axis=1)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# Temporal shift


def _tsm_batch(x: np.ndarray, fold_div: int):
    """Shift channel blocks along the time axis of (B, T, C, H, W)."""
    b, t, c, h, w = x.shape
    if fold_div < 2:
        raise ValueError(f"fold_div must be >= 2, got {fold_div}")
    if c < fold_div:
        raise ValueError(f"need C >= fold_div, got C={c}, fold_div={fold_div}")
    fold = c // fold_div
    y = np.zeros_like(x)
    y[:, 1:, :fold] = x[:, :-1, :fold]          # past -> present
    y[:, :-1, fold:2 * fold] = x[:, 1:, fold:2 * fold]  # future -> present
    y[:, :, 2 * fold:] = x[:, :, 2 * fold:]

    def vjp(dy):
        dx = np.zeros_like(dy)
        dx[:, :-1, :fold] = dy[:, 1:, :fold]
        dx[:, 1:, fold:2 * fold] = dy[:, :-1, fold:2 * fold]
        dx[:, :, 2 * fold:] = dy[:, :, 2 * fold:]
        return (dx,)

    return y, vjp


def temporal_shift(x: np.ndarray, fold_div: int = 8):
    """(T, C, H, W): move the first C/fold_div channels one frame forward in
    time and the next C/fold_div one frame backward, zero-filling at the clip
    boundaries; remaining channels pass through."""
    y, inner = _tsm_batch(x[None], fold_div)

    def vjp(dy):
        (dx,) = inner(dy[None])
        return (dx[0],)

    return y[0], vjp
