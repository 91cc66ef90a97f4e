"""Synthetic moving-sprite clips for direction classification.

Each clip shows one randomly textured square patch translating at constant
velocity with periodic wraparound on a 32x32 canvas. The label is the motion
direction (8 compass classes), the texture is resampled independently per
clip, and the start position is uniform, so a single frame carries no label
information by construction. Generation is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Rng

NUM_DIRECTIONS = 8


@dataclass
class DatasetConfig:
    frames: int = 8
    size: int = 32
    train_clips: int = 2000
    test_clips: int = 2000
    min_sprite: int = 6
    max_sprite: int = 10
    min_speed: float = 1.0
    max_speed: float = 2.0

    def validate(self):
        if self.frames < 2:
            raise ValueError(f"need at least 2 frames, got {self.frames}")
        if not (1 <= self.min_sprite <= self.max_sprite <= self.size):
            raise ValueError("invalid sprite size range")
        if not (0 < self.min_speed <= self.max_speed):
            raise ValueError("invalid speed range")


@dataclass
class SyntheticMotionDataset:
    train_clips: np.ndarray  # (Ntr, T, 1, S, S) float32
    train_labels: np.ndarray  # (Ntr,) int64 in [0, 8)
    test_clips: np.ndarray
    test_labels: np.ndarray
    seed: int


def _render_clip(rng: Rng, cfg: DatasetConfig, label: int) -> np.ndarray:
    s = cfg.size
    side = int(rng.integers(1, cfg.min_sprite, cfg.max_sprite + 1)[0])
    texture = 0.25 + 0.75 * rng.uniform(side * side).reshape(side, side)
    speed = cfg.min_speed + (cfg.max_speed - cfg.min_speed) * rng.uniform(1)[0]
    start = s * rng.uniform(2)
    angle = label * (2.0 * np.pi / NUM_DIRECTIONS)
    vx, vy = speed * np.cos(angle), speed * np.sin(angle)

    clip = np.zeros((cfg.frames, 1, s, s), dtype=np.float32)
    for t in range(cfg.frames):
        x0 = int(np.floor(start[0] + vx * t + 0.5)) % s
        y0 = int(np.floor(start[1] + vy * t + 0.5)) % s
        rows = (np.arange(side) + y0) % s
        cols = (np.arange(side) + x0) % s
        clip[t, 0][np.ix_(rows, cols)] = texture
    return clip


def gen_dataset(cfg: DatasetConfig, seed: int) -> SyntheticMotionDataset:
    """Generate and split clips; the split is by index parity of a seeded
    shuffle so both halves are label-balanced in expectation."""
    cfg.validate()
    total = cfg.train_clips + cfg.test_clips
    rng = Rng(seed)
    clips = np.empty((total, cfg.frames, 1, cfg.size, cfg.size), dtype=np.float32)
    labels = np.empty(total, dtype=np.int64)
    for i in range(total):
        labels[i] = i % NUM_DIRECTIONS
        clips[i] = _render_clip(rng, cfg, int(labels[i]))

    order = shuffled_indices(Rng(seed ^ 0x5DEECE66D), total)
    train_idx = order[0::2][:cfg.train_clips]
    test_idx = order[1::2][:cfg.test_clips]
    if len(train_idx) < cfg.train_clips or len(test_idx) < cfg.test_clips:
        raise ValueError("split sizes exceed the generated clip count")
    return SyntheticMotionDataset(
        train_clips=clips[train_idx], train_labels=labels[train_idx],
        test_clips=clips[test_idx], test_labels=labels[test_idx], seed=seed)


def shuffled_indices(rng: Rng, n: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of range(n)."""
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(1, 0, i + 1)[0])
        idx[i], idx[j] = idx[j], idx[i]
    return idx
