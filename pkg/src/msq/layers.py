"""Stateful layer wrappers over the functional ops.

Layers cache the VJP closure of their last forward call; ``backward``
consumes it, accumulates parameter gradients, and returns the input
gradient. ``variables()`` lists every persistent array (checkpointed),
``trainable()`` the subset touched by the optimizer.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Rng, rng_normal


class Layer:
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def variables(self) -> dict:
        return {}

    def trainable(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def zero_grad(self):
        for g in self.grads().values():
            g[...] = 0.0


class Conv2dLayer(Layer):
    def __init__(self, w: np.ndarray, b: np.ndarray | None, stride: int = 1,
                 padding: int = 0, depthwise: bool = False):
        self.w = w
        self.use_bias = b is not None
        self.b = b if self.use_bias else np.zeros(w.shape[0], dtype=w.dtype)
        self.stride = stride
        self.padding = padding
        self.depthwise = depthwise
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._vjp = None

    @classmethod
    def create(cls, rng: Rng, in_ch: int, out_ch: int, kernel: int,
               stride: int = 1, padding: int = 0, depthwise: bool = False,
               bias: bool = True, std: float = 0.02, dtype=np.float32):
        wshape = ((out_ch, 1, kernel, kernel) if depthwise
                  else (out_ch, in_ch, kernel, kernel))
        w = rng_normal(rng, wshape, 0.0, std, dtype)
        b = np.zeros(out_ch, dtype=dtype) if bias else None
        return cls(w, b, stride, padding, depthwise)

    def forward(self, x, train=False):
        fn = ops.depthwise_conv2d if self.depthwise else ops.conv2d
        y, self._vjp = fn(x, self.w, self.b, self.stride, self.padding)
        return y

    def backward(self, dy):
        dx, dw, db = self._vjp(dy)
        self.gw += dw
        if self.use_bias:
            self.gb += db
        return dx

    def variables(self):
        out = {"w": self.w}
        if self.use_bias:
            out["b"] = self.b
        return out

    def trainable(self):
        return self.variables()

    def grads(self):
        out = {"w": self.gw}
        if self.use_bias:
            out["b"] = self.gb
        return out


class BatchNormLayer(Layer):
    def __init__(self, state: ops.BatchNormState):
        self.state = state
        self.ggamma = np.zeros_like(state.gamma)
        self.gbeta = np.zeros_like(state.beta)
        self._vjp = None

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1,
               epsilon: float = 1e-5):
        return cls(ops.BatchNormState.create(channels, momentum, epsilon, dtype))

    def forward(self, x, train=False):
        s = self.state
        y, self._vjp, new_rm, new_rv = ops.batchnorm(
            x, s.gamma, s.beta, s.running_mean, s.running_var,
            s.momentum, s.epsilon, train)
        if train:
            s.running_mean[...] = new_rm
            s.running_var[...] = new_rv
        return y

    def backward(self, dy):
        dx, dg, db = self._vjp(dy)
        self.ggamma += dg
        self.gbeta += db
        return dx

    def variables(self):
        s = self.state
        return {"gamma": s.gamma, "beta": s.beta,
                "running_mean": s.running_mean, "running_var": s.running_var}

    def trainable(self):
        return {"gamma": self.state.gamma, "beta": self.state.beta}

    def grads(self):
        return {"gamma": self.ggamma, "beta": self.gbeta}


class ReLULayer(Layer):
    def forward(self, x, train=False):
        y, self._vjp = ops.relu(x)
        return y

    def backward(self, dy):
        (dx,) = self._vjp(dy)
        return dx


class GlobalAvgPoolLayer(Layer):
    def forward(self, x, train=False):
        y, self._vjp = ops.global_avg_pool(x)
        return y

    def backward(self, dy):
        (dx,) = self._vjp(dy)
        return dx


class DenseLayer(Layer):
    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w, self.b = w, b
        self.gw = np.zeros_like(w)
        self.gb = np.zeros_like(b)
        self._vjp = None

    @classmethod
    def create(cls, rng: Rng, d_in: int, d_out: int, std: float = 0.02,
               dtype=np.float32):
        return cls(rng_normal(rng, (d_out, d_in), 0.0, std, dtype),
                   np.zeros(d_out, dtype=dtype))

    def forward(self, x, train=False):
        y, self._vjp = ops.fully_connected(x, self.w, self.b)
        return y

    def backward(self, dy):
        dx, dw, db = self._vjp(dy)
        self.gw += dw
        self.gb += db
        return dx

    def variables(self):
        return {"w": self.w, "b": self.b}

    def trainable(self):
        return self.variables()

    def grads(self):
        return {"w": self.gw, "b": self.gb}


class Sequential(Layer):
    """Named chain of layers; variable names are prefixed child-first."""

    def __init__(self, children: list[tuple[str, Layer]]):
        names = [n for n, _ in children]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate child names in {names}")
        self.children = children

    def forward(self, x, train=False):
        for _, layer in self.children:
            x = layer.forward(x, train)
        return x

    def backward(self, dy):
        for _, layer in reversed(self.children):
            dy = layer.backward(dy)
        return dy

    def _collect(self, getter):
        out = {}
        for name, layer in self.children:
            for key, arr in getter(layer).items():
                out[f"{name}.{key}"] = arr
        return out

    def variables(self):
        return self._collect(lambda l: l.variables())

    def trainable(self):
        return self._collect(lambda l: l.trainable())

    def grads(self):
        return self._collect(lambda l: l.grads())


def conv_bn_relu(rng: Rng, in_ch: int, out_ch: int, kernel: int,
                 stride: int = 1, padding: int = 0, depthwise: bool = False,
                 dtype=np.float32) -> Sequential:
    return Sequential([
        ("conv", Conv2dLayer.create(rng, in_ch, out_ch, kernel, stride,
                                    padding, depthwise, dtype=dtype)),
        ("bn", BatchNormLayer.create(out_ch, dtype=dtype)),
        ("relu", ReLULayer()),
    ])
