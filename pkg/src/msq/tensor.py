"""Dense tensor construction, elementwise arithmetic, and deterministic RNG.

Tensors are plain numpy arrays in row-major (C) order with dtype float32 or
float64. Randomness comes from a SplitMix64 counter stream pushed through the
Box-Muller transform, so every draw is a pure function of the seed and is
reproducible across platforms and runs.
"""

from __future__ import annotations

import numpy as np

F32 = np.float32
F64 = np.float64

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D49BDB133111EB)
_TWO53 = float(1 << 53)


def _splitmix64_finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator.

    The raw stream is ``state_i = seed + i * 0x9E3779B97F4A7C15 (mod 2^64)``
    finalized with the standard SplitMix64 mixing function. Uniforms in (0, 1]
    are ``((z >> 11) + 1) * 2^-53``; normals consume uniforms pairwise through
    Box-Muller (``sqrt(-2 ln u1) * {cos, sin}(2 pi u2)``), with the trailing
    sample of an odd-length request discarded. A single Rng instance must not
    be shared between concurrent callers.
    """

    def __init__(self, seed: int):
        self.state = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)

    def next_raw(self, n: int) -> np.ndarray:
        """Advance the stream by n steps and return n mixed 64-bit words."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * _GAMMA
            states = self.state + steps
            self.state = self.state + np.uint64(n) * _GAMMA
            return _splitmix64_finalize(states)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in (0, 1], each from one SplitMix64 step."""
        bits = self.next_raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) / _TWO53

    def integers(self, n: int, lo: int, hi: int) -> np.ndarray:
        """n ints uniform on [lo, hi) via floor of the uniform stream."""
        if hi <= lo:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        u = self.uniform(n)
        # u is in (0, 1]; flip to [0, 1) so hi is never produced
        return lo + np.minimum((1.0 - u) * (hi - lo), hi - lo - 1).astype(np.int64)

    def normal(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller over the uniform stream."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]


def _check_dtype(dtype) -> np.dtype:
    dt = np.dtype(dtype)
    if dt not in _DTYPES:
        raise ValueError(f"unsupported dtype {dt}; expected f32 or f64")
    return dt


def tensor_new(shape, fill=None, data=None, dtype=F32) -> np.ndarray:
    """Construct a tensor from a fill value or an explicit flat data array."""
    dt = _check_dtype(dtype)
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ValueError("shape must be non-empty")
    if any(s < 1 for s in shape):
        raise ValueError(f"all extents must be >= 1, got {shape}")
    n = int(np.prod(shape))
    if data is not None:
        flat = np.asarray(data, dtype=dt).reshape(-1)
        if flat.size != n:
            raise ValueError(
                f"data length {flat.size} does not match shape {shape} (size {n})"
            )
        return flat.reshape(shape).copy()
    return np.full(shape, 0.0 if fill is None else fill, dtype=dt)


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add or mul of two tensors with identical shape and dtype."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * a.dtype.type(c)


def rng_normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0,
               dtype=F32) -> np.ndarray:
    """Gaussian tensor from the deterministic stream; std must be >= 0."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    dt = _check_dtype(dtype)
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape))
    z = rng.normal(n) * std + mean
    return z.astype(dt).reshape(shape)
