"""The complete motion feature block.

Pipeline per adjacent frame pair: 1x1 channel reduction -> correlation
volume -> (kernel-)soft-argmax displacement + confidence -> four
depthwise-separable transform layers -> fusion with the appearance features.
The last motion feature is padded by repeating the second-to-last one, so a
clip of T frames yields T fused frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correlation import correlation_volume_batch
from .displacement import (KernelSoftArgmaxParams, assemble_displacement,
                           confidence_map_batch, kernel_soft_argmax_batch,
                           soft_argmax_batch)
from .layers import (BatchNormLayer, Conv2dLayer, ReLULayer, Sequential)
from .tensor import Rng

FUSION_MODES = ("add", "multiply", "concat", "ms_only")


@dataclass
class MsModuleConfig:
    k: int = 7
    ksa: KernelSoftArgmaxParams = field(default_factory=KernelSoftArgmaxParams)
    fusion: str = "add"
    use_backward_displacement: bool = False
    transform_widths: tuple | None = None  # (w1, w2, w3); last width is always C

    def validate(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        self.ksa.validate()


def make_transform_stack(rng: Rng, in_ch: int, widths: tuple, out_ch: int,
                         dtype=np.float32) -> Sequential:
    """Four depthwise-separable layers (7x7 then three 3x3), each depthwise
    and pointwise conv followed by BN and ReLU; same-padding, stride 1."""
    if len(widths) != 3:
        raise ValueError(f"expected 3 intermediate widths, got {widths}")
    plan = list(zip((7, 3, 3, 3), (in_ch,) + tuple(widths),
                    tuple(widths) + (out_ch,)))
    children = []
    for i, (kern, cin, cout) in enumerate(plan, start=1):
        children += [
            (f"dw{i}", Conv2dLayer.create(rng, cin, cin, kern, padding=kern // 2,
                                          depthwise=True, dtype=dtype)),
            (f"dw{i}_bn", BatchNormLayer.create(cin, dtype=dtype)),
            (f"dw{i}_relu", ReLULayer()),
            (f"pw{i}", Conv2dLayer.create(rng, cin, cout, 1, dtype=dtype)),
            (f"pw{i}_bn", BatchNormLayer.create(cout, dtype=dtype)),
            (f"pw{i}_relu", ReLULayer()),
        ]
    return Sequential(children)


def feature_transform(d: np.ndarray, stack: Sequential,
                      train: bool = False) -> np.ndarray:
    """Apply the transform stack to a displacement tensor (T, 3|6, H, W)."""
    expected = stack.children[0][1].w.shape[0]
    if d.shape[1] != expected:
        raise ValueError(
            f"displacement tensor has {d.shape[1]} channels, stack expects {expected}")
    return stack.forward(d, train)


def fuse(f: np.ndarray, m: np.ndarray, mode: str, proj: Sequential | None = None,
         train: bool = False):
    """Combine appearance and motion features of identical shape.

    Returns (y, vjp) with vjp(dy) -> (df, dm). In concat mode the supplied
    projection (1x1 conv + BN + ReLU) carries its own parameter gradients.
    """
    if f.shape != m.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {m.shape}")
    if mode == "add":
        def vjp(dy):
            return dy, dy
        return f + m, vjp
    if mode == "multiply":
        def vjp(dy):
            return dy * m, dy * f
        return f * m, vjp
    if mode == "ms_only":
        def vjp(dy):
            return np.zeros_like(dy), dy
        return m.copy(), vjp
    if mode == "concat":
        if proj is None:
            raise ValueError("concat fusion requires a projection stack")
        c = f.shape[1]
        y = proj.forward(np.concatenate([f, m], axis=1), train)

        def vjp(dy):
            dcat = proj.backward(dy)
            return (np.ascontiguousarray(dcat[:, :c]),
                    np.ascontiguousarray(dcat[:, c:]))
        return y, vjp
    raise ValueError(f"unknown fusion mode {mode!r}")


class MsModule:
    """Parameter container and forward/backward engine for the motion block."""

    def __init__(self, cfg: MsModuleConfig, channels: int, rng: Rng,
                 dtype=np.float32):
        cfg.validate()
        if channels % 2 != 0:
            raise ValueError(f"channel count must be even, got {channels}")
        self.cfg = cfg
        self.channels = channels
        self.reduce = Conv2dLayer.create(rng, channels, channels // 2, 1,
                                         dtype=dtype)
        in_ch = 6 if cfg.use_backward_displacement else 3
        widths = cfg.transform_widths or (max(channels // 4, 1),) * 3
        self.transform = make_transform_stack(rng, in_ch, tuple(widths),
                                              channels, dtype=dtype)
        self.proj = None
        if cfg.fusion == "concat":
            self.proj = Sequential([
                ("conv", Conv2dLayer.create(rng, 2 * channels, channels, 1,
                                            bias=False, dtype=dtype)),
                ("bn", BatchNormLayer.create(channels, dtype=dtype)),
                ("relu", ReLULayer()),
            ])
        self._ctx = None

    # -- parameter plumbing ------------------------------------------------

    def _parts(self):
        parts = [("reduce", self.reduce), ("transform", self.transform)]
        if self.proj is not None:
            parts.append(("proj", self.proj))
        return parts

    def _collect(self, getter):
        out = {}
        for name, layer in self._parts():
            for key, arr in getter(layer).items():
                out[f"{name}.{key}"] = arr
        return out

    def variables(self):
        return self._collect(lambda l: l.variables())

    def trainable(self):
        return self._collect(lambda l: l.trainable())

    def grads(self):
        return self._collect(lambda l: l.grads())

    def zero_grad(self):
        for g in self.grads().values():
            g[...] = 0.0

    # -- forward / backward ------------------------------------------------

    def _estimate(self, ga, gb):
        """Displacement + confidence for a batch of frame pairs."""
        vol, vol_vjp = correlation_volume_batch(ga, gb, self.cfg.k)
        if self.cfg.ksa.use_kernel:
            d, d_vjp = kernel_soft_argmax_batch(vol, self.cfg.ksa)
        else:
            d, d_vjp = soft_argmax_batch(vol, self.cfg.ksa.tau)
        conf, conf_vjp = confidence_map_batch(vol)
        return d, conf, {"vol_vjp": vol_vjp, "d_vjp": d_vjp, "conf_vjp": conf_vjp}

    def forward(self, fseq: np.ndarray, train: bool = False):
        """fseq: (T, C, H, W) or (N, T, C, H, W). Returns (fused, disp) of the
        same leading layout; disp carries (dx, dy, conf[, backward triple])
        padded to T frames."""
        squeeze = fseq.ndim == 4
        x = fseq[None] if squeeze else fseq
        n, t, c, h, w = x.shape
        if t < 2:
            raise ValueError(f"need at least 2 frames, got {t}")
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")

        frames = x.reshape(n * t, c, h, w)
        g = self.reduce.forward(frames, train).reshape(n, t, c // 2, h, w)
        ga = np.ascontiguousarray(g[:, :-1]).reshape(n * (t - 1), c // 2, h, w)
        gb = np.ascontiguousarray(g[:, 1:]).reshape(n * (t - 1), c // 2, h, w)

        d_f, conf_f, ctx_f = self._estimate(ga, gb)
        if self.cfg.use_backward_displacement:
            d_b, conf_b, ctx_b = self._estimate(gb, ga)
            disp, asm_vjp = assemble_displacement(d_f, conf_f, d_b, conf_b)
        else:
            ctx_b = None
            disp, asm_vjp = assemble_displacement(d_f, conf_f)

        m = self.transform.forward(disp, train)
        m5 = m.reshape(n, t - 1, c, h, w)
        m_full = np.concatenate([m5, m5[:, -1:]], axis=1)

        f_frames = frames
        m_frames = m_full.reshape(n * t, c, h, w)
        fused, fuse_vjp = fuse(f_frames, m_frames, self.cfg.fusion,
                               self.proj, train)

        disp_full = np.concatenate(
            [disp.reshape(n, t - 1, -1, h, w),
             disp.reshape(n, t - 1, -1, h, w)[:, -1:]], axis=1)

        self._ctx = {
            "shape": (n, t, c, h, w), "squeeze": squeeze,
            "ctx_f": ctx_f, "ctx_b": ctx_b, "asm_vjp": asm_vjp,
            "fuse_vjp": fuse_vjp,
        }
        fused = fused.reshape(n, t, c, h, w)
        if squeeze:
            return fused[0], disp_full[0]
        return fused, disp_full

    def backward(self, dfused: np.ndarray) -> np.ndarray:
        """Gradient of a loss on the fused output w.r.t. the input clip;
        parameter gradients accumulate on the layers."""
        ctx = self._ctx
        n, t, c, h, w = ctx["shape"]
        if ctx["squeeze"]:
            dfused = dfused[None]
        df_frames, dm_frames = ctx["fuse_vjp"](dfused.reshape(n * t, c, h, w))

        dm5 = dm_frames.reshape(n, t, c, h, w)
        dm = dm5[:, :t - 1].copy()
        dm[:, -1] += dm5[:, t - 1]
        ddisp = self.transform.backward(dm.reshape(n * (t - 1), c, h, w))

        parts = ctx["asm_vjp"](ddisp)
        if ctx["ctx_b"] is not None:
            dd_f, dconf_f, dd_b, dconf_b = parts
        else:
            dd_f, dconf_f = parts

        def back_estimate(e_ctx, dd, dconf):
            (dvol_d,) = e_ctx["d_vjp"](dd)
            (dvol_c,) = e_ctx["conf_vjp"](dconf)
            return e_ctx["vol_vjp"](dvol_d + dvol_c)

        dga, dgb = back_estimate(ctx["ctx_f"], dd_f, dconf_f)
        if ctx["ctx_b"] is not None:
            dgb2, dga2 = back_estimate(ctx["ctx_b"], dd_b, dconf_b)
            dga += dga2
            dgb += dgb2

        dg = np.zeros((n, t, c // 2, h, w), dtype=dga.dtype)
        dg[:, :-1] += dga.reshape(n, t - 1, c // 2, h, w)
        dg[:, 1:] += dgb.reshape(n, t - 1, c // 2, h, w)
        dframes = self.reduce.backward(dg.reshape(n * t, c // 2, h, w))

        dx = dframes.reshape(n, t, c, h, w) + df_frames.reshape(n, t, c, h, w)
        return dx[0] if ctx["squeeze"] else dx


def ms_forward(fseq: np.ndarray, module: MsModule, train: bool = False):
    """Run the block on one clip (T, C, H, W) -> (fused, displacement)."""
    return module.forward(fseq, train)
