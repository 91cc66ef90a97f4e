"""Toy video classifier demonstrating motion feature learning.

Backbone: 3x3 conv stem at full resolution, two stride-2 conv stages with
temporal shift, the motion block after the middle stage (where the feature
grid is still larger than the correlation window), then global average
pooling and a per-frame linear head. Per-frame logits are temporally
averaged downstream for the classification loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .displacement import KernelSoftArgmaxParams
from .layers import DenseLayer, GlobalAvgPoolLayer, conv_bn_relu
from .ms_module import MsModule, MsModuleConfig
from .ops import _tsm_batch
from .tensor import Rng


def default_ms_config() -> MsModuleConfig:
    return MsModuleConfig(k=3, ksa=KernelSoftArgmaxParams(sigma=5.0, tau=0.01))


@dataclass
class ToyNetConfig:
    frames: int = 8
    in_channels: int = 1
    size: int = 32
    stage_widths: tuple = (16, 32, 64)
    classes: int = 8
    use_tsm: bool = True
    use_ms: bool = True
    tsm_fold: int = 8
    ms: MsModuleConfig = field(default_factory=default_ms_config)
    seed: int = 0

    def validate(self):
        if len(self.stage_widths) != 3:
            raise ValueError(f"expected 3 stage widths, got {self.stage_widths}")
        if self.use_ms:
            ms_res = self.size // 2
            if ms_res < 2 * self.ms.k + 1:
                raise ValueError(
                    f"motion block at {ms_res}x{ms_res} cannot host a "
                    f"{2 * self.ms.k + 1}-wide correlation window")


class ToyMSNet:
    def __init__(self, cfg: ToyNetConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        rng = Rng(cfg.seed)
        w1, w2, w3 = cfg.stage_widths
        self.stem = conv_bn_relu(rng, cfg.in_channels, w1, 3, padding=1,
                                 dtype=dtype)
        # 4x4 stride-2 pad-1 halves even extents exactly
        self.stage2 = conv_bn_relu(rng, w1, w2, 4, stride=2, padding=1,
                                   dtype=dtype)
        self.ms = MsModule(cfg.ms, w2, rng, dtype=dtype) if cfg.use_ms else None
        self.stage3 = conv_bn_relu(rng, w2, w3, 4, stride=2, padding=1,
                                   dtype=dtype)
        self.pool = GlobalAvgPoolLayer()
        self.head = DenseLayer.create(rng, w3, cfg.classes, dtype=dtype)
        self._ctx = None

    def _parts(self):
        parts = [("stem", self.stem), ("stage2", self.stage2)]
        if self.ms is not None:
            parts.append(("ms", self.ms))
        parts += [("stage3", self.stage3), ("head", self.head)]
        return parts

    def _collect(self, getter):
        out = {}
        for name, part in self._parts():
            for key, arr in getter(part).items():
                out[f"{name}.{key}"] = arr
        return out

    def variables(self):
        return self._collect(lambda p: p.variables())

    def trainable(self):
        return self._collect(lambda p: p.trainable())

    def grads(self):
        return self._collect(lambda p: p.grads())

    def zero_grad(self):
        for g in self.grads().values():
            g[...] = 0.0

    def parameter_count(self) -> int:
        return sum(a.size for a in self.trainable().values())

    def load_variables(self, values: dict):
        own = self.variables()
        if set(own) != set(values):
            missing = set(own) ^ set(values)
            raise ValueError(f"checkpoint variable mismatch: {sorted(missing)}")
        for name, arr in own.items():
            src = values[name]
            if src.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {arr.shape}")
            arr[...] = src.astype(arr.dtype)

    # -- forward / backward ------------------------------------------------

    def _shift(self, x, n, t, vjps):
        c, h, w = x.shape[1:]
        y, vjp = _tsm_batch(x.reshape(n, t, c, h, w), self.cfg.tsm_fold)
        vjps.append((vjp, (n, t, c, h, w)))
        return y.reshape(n * t, c, h, w)

    def forward(self, clips: np.ndarray, train: bool = False) -> np.ndarray:
        """clips: (N, T, Cin, S, S) -> per-frame logits (N, T, K)."""
        n, t = clips.shape[:2]
        x = clips.reshape(n * t, *clips.shape[2:])
        tsm_vjps = []

        x = self.stem.forward(x, train)
        if self.cfg.use_tsm:
            x = self._shift(x, n, t, tsm_vjps)
        x = self.stage2.forward(x, train)
        if self.ms is not None:
            c, h, w = x.shape[1:]
            fused, _ = self.ms.forward(x.reshape(n, t, c, h, w), train)
            x = fused.reshape(n * t, c, h, w)
        if self.cfg.use_tsm:
            x = self._shift(x, n, t, tsm_vjps)
        x = self.stage3.forward(x, train)
        x = self.pool.forward(x, train)
        logits = self.head.forward(x, train)

        self._ctx = {"n": n, "t": t, "tsm_vjps": tsm_vjps}
        return logits.reshape(n, t, self.cfg.classes)

    def backward(self, dlogits: np.ndarray):
        """Accumulate parameter gradients from per-frame logit gradients."""
        ctx = self._ctx
        n, t = ctx["n"], ctx["t"]
        tsm_vjps = list(ctx["tsm_vjps"])

        dy = dlogits.reshape(n * t, self.cfg.classes)
        dy = self.head.backward(dy)
        dy = self.pool.backward(dy)
        dy = self.stage3.backward(dy)
        if self.cfg.use_tsm:
            vjp, shape = tsm_vjps.pop()
            (dy5,) = vjp(dy.reshape(shape))
            dy = dy5.reshape(-1, *shape[2:])
        if self.ms is not None:
            c, h, w = dy.shape[1:]
            dy = self.ms.backward(dy.reshape(n, t, c, h, w)).reshape(n * t, c, h, w)
        dy = self.stage2.backward(dy)
        if self.cfg.use_tsm:
            vjp, shape = tsm_vjps.pop()
            (dy5,) = vjp(dy.reshape(shape))
            dy = dy5.reshape(-1, *shape[2:])
        dy = self.stem.backward(dy)
        return dy.reshape(n, t, *dy.shape[1:])
