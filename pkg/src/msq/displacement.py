"""Displacement and confidence estimation from correlation volumes.

Both estimators output a 2-channel field ordered (dx, dy) in feature-grid
pixel units; values are convex combinations of the displacement candidates
and therefore bounded by the neighborhood radius k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlation import displacement_offsets
from .ops import softmax


@dataclass
class KernelSoftArgmaxParams:
    sigma: float = 5.0
    tau: float = 0.01
    use_kernel: bool = True

    def validate(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


def _radius(p2: int) -> int:
    p = int(round(np.sqrt(p2)))
    if p * p != p2 or p % 2 == 0:
        raise ValueError(f"volume channel count {p2} is not an odd square")
    return (p - 1) // 2


def _weighted_displacement(weights: np.ndarray, dx: np.ndarray, dy: np.ndarray):
    """d = sum_p w_p * p for weights (B, P^2, H, W) -> (B, 2, H, W).

    Accumulates in f64 so symmetric weight patterns (uniform softmax on a
    constant volume) cancel to exactly zero even for f32 inputs.
    """
    ddx = np.einsum("bphw,p->bhw", weights, dx, dtype=np.float64)
    ddy = np.einsum("bphw,p->bhw", weights, dy, dtype=np.float64)
    return np.stack([ddx, ddy], axis=1).astype(weights.dtype)


def _softmax_argmax_vjp(weights, scale, dx, dy, d):
    """VJP of d = sum_p softmax(scale-weighted scores)_p * p w.r.t. scores.

    ``scale`` is dscore/dS (1/tau for plain soft-argmax, g/tau for the kernel
    variant with the kernel treated as a constant mask).
    """
    v = np.stack([dx, dy], axis=0)  # (2, P^2)

    def vjp(dout):
        # inner_p = sum_ch u_ch * (v[ch, p] - d[ch])
        proj = np.einsum("bchw,cp->bphw", dout, v)
        mean = np.einsum("bchw,bchw->bhw", dout, d)
        return (weights * (proj - mean[:, None]) * scale,)

    return vjp


def soft_argmax_batch(s: np.ndarray, tau: float):
    """(B, P^2, H, W) -> (B, 2, H, W) softmax-weighted average displacement."""
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    k = _radius(s.shape[1])
    dx, dy = displacement_offsets(k, dtype=s.dtype)
    w = softmax(s / tau, axis=1)
    d = _weighted_displacement(w, dx, dy)
    return d, _softmax_argmax_vjp(w, 1.0 / tau, dx, dy, d)


def soft_argmax(s: np.ndarray, tau: float):
    d, inner = soft_argmax_batch(s[None], tau)

    def vjp(dout):
        (ds,) = inner(dout[None])
        return (ds[0],)

    return d[0], vjp


def gaussian_kernel_mask(s: np.ndarray, sigma: float,
                         include_prefactor: bool = True) -> np.ndarray:
    """Isotropic Gaussian mask centered on the per-position hard argmax.

    g_p = (1 / (sqrt(2 pi) sigma)) * exp(-||p - p*||^2 / (2 sigma^2)), with
    ties in the argmax broken toward the lowest flat index. The prefactor can
    be dropped, which leaves a unit-peak mask.
    """
    b, p2, h, w = s.shape
    k = _radius(p2)
    dx, dy = displacement_offsets(k, dtype=np.float64)
    star = s.argmax(axis=1)  # (B, H, W), first occurrence on ties
    # the mask value depends only on (candidate, argmax) index pairs, so a
    # P^2 x P^2 table covers every position
    dist2 = ((dx[None, :] - dx[:, None]) ** 2 + (dy[None, :] - dy[:, None]) ** 2)
    table = np.exp(-dist2 / (2.0 * sigma * sigma))
    if include_prefactor:
        table = table / (np.sqrt(2.0 * np.pi) * sigma)
    g = table.astype(s.dtype)[star]  # (B, H, W, P^2)
    return np.ascontiguousarray(np.moveaxis(g, -1, 1))


def kernel_soft_argmax_batch(s: np.ndarray, params: KernelSoftArgmaxParams,
                             include_prefactor: bool = True):
    """Soft-argmax over scores masked by a Gaussian at the hard argmax.

    The kernel center is piecewise constant in the scores, so no gradient
    flows through it; backward treats the mask as a constant.
    """
    params.validate()
    k = _radius(s.shape[1])
    dx, dy = displacement_offsets(k, dtype=s.dtype)
    g = gaussian_kernel_mask(s, params.sigma, include_prefactor)
    w = softmax(g * s / params.tau, axis=1)
    d = _weighted_displacement(w, dx, dy)
    return d, _softmax_argmax_vjp(w, g / params.tau, dx, dy, d)


def kernel_soft_argmax(s: np.ndarray, params: KernelSoftArgmaxParams,
                       include_prefactor: bool = True):
    d, inner = kernel_soft_argmax_batch(s[None], params, include_prefactor)

    def vjp(dout):
        (ds,) = inner(dout[None])
        return (ds[0],)

    return d[0], vjp


def confidence_map_batch(s: np.ndarray):
    """(B, P^2, H, W) -> (B, 1, H, W) maximum score per position.

    Backward routes the upstream gradient to the first-scan-order argmax.
    """
    star = s.argmax(axis=1)
    conf = np.take_along_axis(s, star[:, None], axis=1)

    def vjp(dout):
        ds = np.zeros_like(s)
        np.put_along_axis(ds, star[:, None], dout, axis=1)
        return (ds,)

    return conf, vjp


def confidence_map(s: np.ndarray):
    conf, inner = confidence_map_batch(s[None])

    def vjp(dout):
        (ds,) = inner(dout[None])
        return (ds[0],)

    return conf[0], vjp


def assemble_displacement(d_fwd: np.ndarray, conf_fwd: np.ndarray,
                          d_bwd: np.ndarray | None = None,
                          conf_bwd: np.ndarray | None = None):
    """Stack (dx, dy, conf[, dx_b, dy_b, conf_b]) along the channel axis.

    Accepts (2, H, W)/(1, H, W) fields or batched (B, 2, H, W)/(B, 1, H, W).
    """
    if (d_bwd is None) != (conf_bwd is None):
        raise ValueError("backward displacement and confidence must come together")
    parts = [d_fwd, conf_fwd] if d_bwd is None else [d_fwd, conf_fwd, d_bwd, conf_bwd]
    spatial = d_fwd.shape[-2:]
    for a in parts:
        if a.shape[-2:] != spatial or a.ndim != d_fwd.ndim:
            raise ValueError(f"spatial shape mismatch: {a.shape} vs {d_fwd.shape}")
    axis = d_fwd.ndim - 3
    out = np.concatenate(parts, axis=axis)
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(dout):
        return tuple(np.ascontiguousarray(p) for p in np.split(dout, splits, axis=axis))

    return out, vjp
