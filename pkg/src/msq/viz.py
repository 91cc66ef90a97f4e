"""Flow-field colorization, confidence rendering, and PPM output.

Displacement fields are rendered with the classic optical-flow color wheel:
hue encodes the motion angle, saturation the magnitude after normalizing by
the per-map maximum. Zero motion renders as pure white.
"""

from __future__ import annotations

import numpy as np

# Segment lengths of the color wheel (red-yellow, yellow-green, green-cyan,
# cyan-blue, blue-magenta, magenta-red); 55 anchors total.
RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6
WHEEL_SIZE = RY + YG + GC + CB + BM + MR


def color_wheel() -> np.ndarray:
    """(55, 3) RGB anchors in [0, 1]."""
    wheel = np.zeros((WHEEL_SIZE, 3))
    i = 0
    wheel[i:i + RY, 0] = 1.0
    wheel[i:i + RY, 1] = np.arange(RY) / RY
    i += RY
    wheel[i:i + YG, 0] = 1.0 - np.arange(YG) / YG
    wheel[i:i + YG, 1] = 1.0
    i += YG
    wheel[i:i + GC, 1] = 1.0
    wheel[i:i + GC, 2] = np.arange(GC) / GC
    i += GC
    wheel[i:i + CB, 1] = 1.0 - np.arange(CB) / CB
    wheel[i:i + CB, 2] = 1.0
    i += CB
    wheel[i:i + BM, 0] = np.arange(BM) / BM
    wheel[i:i + BM, 2] = 1.0
    i += BM
    wheel[i:i + MR, 0] = 1.0
    wheel[i:i + MR, 2] = 1.0 - np.arange(MR) / MR
    return wheel


def flow_colorize(d: np.ndarray) -> np.ndarray:
    """(2, H, W) displacement field (dx, dy) -> (3, H, W) uint8 image.

    The angle picks a (linearly interpolated) wheel anchor via
    f = (atan2(-dy, -dx) / pi + 1) / 2 * (wheel_size - 1); the magnitude,
    normalized by the map maximum (+1e-9), fades the color toward white, so
    zero-magnitude pixels are exactly white.
    """
    if d.ndim != 3 or d.shape[0] != 2:
        raise ValueError(f"expected a (2, H, W) field, got {d.shape}")
    wheel = color_wheel()
    u, v = d[0].astype(np.float64), d[1].astype(np.float64)
    mag = np.sqrt(u * u + v * v)
    norm = mag / (mag.max() + 1e-9)

    a = np.arctan2(-v, -u) / np.pi  # [-1, 1]
    f = (a + 1.0) / 2.0 * (WHEEL_SIZE - 1)
    k0 = np.floor(f).astype(int)
    k1 = np.where(k0 + 1 == WHEEL_SIZE, 0, k0 + 1)
    frac = f - k0
    col = (1.0 - frac)[..., None] * wheel[k0] + frac[..., None] * wheel[k1]
    col = 1.0 - norm[..., None] * (1.0 - col)
    img = np.floor(255.0 * col + 0.5).astype(np.uint8)
    return np.moveaxis(img, -1, 0)


def confidence_viz(s_star: np.ndarray) -> np.ndarray:
    """(1, H, W) confidence map -> (1, H, W) uint8 via min-max scaling.

    Constant maps (max == min) render as all-zero; rounding is half-up.
    """
    if s_star.ndim != 3 or s_star.shape[0] != 1:
        raise ValueError(f"expected a (1, H, W) map, got {s_star.shape}")
    v = s_star.astype(np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v, dtype=np.uint8)
    scaled = (v - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def ppm_write(img: np.ndarray) -> bytes:
    """Encode a (1|3, H, W) uint8 image as binary PGM (P5) or PPM (P6)."""
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected (1|3, H, W) image, got {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    ch, h, w = img.shape
    magic = "P5" if ch == 1 else "P6"
    header = f"{magic}\n{w} {h}\n255\n".encode("ascii")
    # interleave channels: row-major (H, W, C)
    return header + np.moveaxis(img, 0, -1).tobytes()
