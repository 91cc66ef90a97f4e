"""Restricted-neighborhood correlation volumes between adjacent frame features.

The match score of position x against displacement p = (dx, dy) with
|dx|, |dy| <= k is the channel dot product of the first feature map at x and
the second at x + p; displacements that land outside the grid score exactly 0.
The flat displacement index is dy-major: idx = (dy + k) * P + (dx + k) with
P = 2k + 1.
"""

from __future__ import annotations

import numpy as np

from .ops import conv2d


def displacement_offsets(k: int, dtype=np.float64):
    """(P^2,) arrays of dx and dy for each flat displacement index."""
    p = 2 * k + 1
    idx = np.arange(p * p)
    dx = (idx % p - k).astype(dtype)
    dy = (idx // p - k).astype(dtype)
    return dx, dy


def reduce_channels(f: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Per-frame 1x1 convolution halving the channel count, no activation.

    f: (T, C, H, W); w: (C/2, C, 1, 1); b: (C/2).
    """
    t, c, h, wd = f.shape
    if c % 2 != 0:
        raise ValueError(f"channel count must be even, got {c}")
    if w.shape != (c // 2, c, 1, 1):
        raise ValueError(f"reduction weight shape {w.shape} != {(c // 2, c, 1, 1)}")
    return conv2d(f, w, b, stride=1, padding=0)


def correlation_volume_batch(fa: np.ndarray, fb: np.ndarray, k: int):
    """Correlation volumes for a batch of frame pairs.

    fa, fb: (B, C, H, W) -> (B, P^2, H, W).
    """
    if fa.shape != fb.shape:
        raise ValueError(f"shape mismatch: {fa.shape} vs {fb.shape}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    b, c, h, w = fa.shape
    p = 2 * k + 1
    fbp = np.pad(fb, ((0, 0), (0, 0), (k, k), (k, k)))
    out = np.empty((b, p * p, h, w), dtype=fa.dtype)
    # block over the batch so the shift loop's working set stays in cache
    per = 6 * c * (h + 2 * k) * (w + 2 * k) * fa.itemsize
    chunk = max(1, (1 << 21) // per)

    for s0 in range(0, b, chunk):
        s = slice(s0, min(s0 + chunk, b))
        fas, fbs = fa[s], fbp[s]
        for dy in range(-k, k + 1):
            for dx in range(-k, k + 1):
                idx = (dy + k) * p + (dx + k)
                shifted = fbs[:, :, k + dy:k + dy + h, k + dx:k + dx + w]
                # one-pass dot over channels; avoids materializing the product
                np.einsum("nchw,nchw->nhw", fas, shifted, out=out[s, idx])

    def vjp(dvol):
        dfa = np.zeros_like(fa)
        dfbp = np.zeros_like(fbp)
        for s0 in range(0, b, chunk):
            s = slice(s0, min(s0 + chunk, b))
            fas, fbs = fa[s], fbp[s]
            dfas, dfbs, dvs = dfa[s], dfbp[s], dvol[s]
            tmp = np.empty_like(fas)
            for dy in range(-k, k + 1):
                for dx in range(-k, k + 1):
                    idx = (dy + k) * p + (dx + k)
                    up = dvs[:, idx][:, None]
                    shifted = fbs[:, :, k + dy:k + dy + h, k + dx:k + dx + w]
                    np.multiply(up, shifted, out=tmp)
                    dfas += tmp
                    np.multiply(up, fas, out=tmp)
                    dfbs[:, :, k + dy:k + dy + h, k + dx:k + dx + w] += tmp
        dfb = dfbp[:, :, k:k + h, k:k + w] if k else dfbp
        return dfa, np.ascontiguousarray(dfb)

    return out, vjp


def correlation_volume(ft: np.ndarray, ft1: np.ndarray, k: int):
    """Single-pair volume: (C, H, W) x (C, H, W) -> (P^2, H, W)."""
    vol, inner = correlation_volume_batch(ft[None], ft1[None], k)

    def vjp(dvol):
        dfa, dfb = inner(dvol[None])
        return dfa[0], dfb[0]

    return vol[0], vjp


def correlation_volume_naive(ft: np.ndarray, ft1: np.ndarray, k: int) -> np.ndarray:
    """Brute-force reference: explicit loops over position and displacement."""
    c, h, w = ft.shape
    p = 2 * k + 1
    out = np.zeros((p * p, h, w), dtype=ft.dtype)
    for dy in range(-k, k + 1):
        for dx in range(-k, k + 1):
            idx = (dy + k) * p + (dx + k)
            for y in range(h):
                for x in range(w):
                    ty, tx = y + dy, x + dx
                    if 0 <= ty < h and 0 <= tx < w:
                        out[idx, y, x] = float(np.dot(ft[:, y, x], ft1[:, ty, tx]))
    return out


def correlation_flops(t: int, h: int, w: int, c: int, p: int) -> int:
    """Multiply-accumulate count T*H*W*C*P^2 of the full correlation pass."""
    for name, v in (("T", t), ("H", h), ("W", w), ("C", c), ("P", p)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    macs = t * h * w * c * p * p
    if macs >= 1 << 63:
        raise OverflowError(f"MAC count {macs} exceeds 64-bit range")
    return macs
