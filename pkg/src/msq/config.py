"""Flat JSON run configuration shared by the CLI subcommands.

Unknown keys are rejected outright so typos fail fast. Every field has a
default; the seed can also come from --seed or, as a last resort, the
MSQ_SEED environment variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .dataset import DatasetConfig
from .displacement import KernelSoftArgmaxParams
from .model import ToyNetConfig
from .ms_module import MsModuleConfig
from .train import TrainConfig

DEFAULTS = {
    "seed": None,
    # dataset
    "frames": 8,
    "size": 32,
    "train_clips": 2000,
    "test_clips": 2000,
    "min_sprite": 6,
    "max_sprite": 10,
    "min_speed": 1.0,
    "max_speed": 2.0,
    # network
    "classes": 8,
    "stage_widths": [16, 32, 64],
    "use_tsm": True,
    "use_ms": True,
    "tsm_fold": 8,
    # motion block
    "k": 3,
    "sigma": 5.0,
    "tau": 0.01,
    "use_kernel": True,
    "fusion": "add",
    "use_backward_displacement": False,
    "transform_widths": None,
    # training
    "epochs": 30,
    "batch_size": 16,
    "lr": 0.01,
    "decay_epochs": [15, 25],
    "decay_factor": 0.1,
    "momentum": 0.9,
}


@dataclass
class RunConfig:
    raw: dict
    seed: int
    dataset: DatasetConfig
    net: ToyNetConfig
    train: TrainConfig


def resolve_seed(cli_seed, config_seed) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get("MSQ_SEED")
    if env is not None:
        return int(env)
    return 0


def build_run_config(overrides: dict | None = None,
                     cli_seed: int | None = None) -> RunConfig:
    cfg = dict(DEFAULTS)
    if overrides:
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(overrides)
    seed = resolve_seed(cli_seed, cfg["seed"])

    dataset = DatasetConfig(
        frames=int(cfg["frames"]), size=int(cfg["size"]),
        train_clips=int(cfg["train_clips"]), test_clips=int(cfg["test_clips"]),
        min_sprite=int(cfg["min_sprite"]), max_sprite=int(cfg["max_sprite"]),
        min_speed=float(cfg["min_speed"]), max_speed=float(cfg["max_speed"]))
    ms = MsModuleConfig(
        k=int(cfg["k"]),
        ksa=KernelSoftArgmaxParams(sigma=float(cfg["sigma"]),
                                   tau=float(cfg["tau"]),
                                   use_kernel=bool(cfg["use_kernel"])),
        fusion=str(cfg["fusion"]),
        use_backward_displacement=bool(cfg["use_backward_displacement"]),
        transform_widths=(tuple(cfg["transform_widths"])
                          if cfg["transform_widths"] else None))
    net = ToyNetConfig(
        frames=int(cfg["frames"]), size=int(cfg["size"]),
        stage_widths=tuple(int(w) for w in cfg["stage_widths"]),
        classes=int(cfg["classes"]), use_tsm=bool(cfg["use_tsm"]),
        use_ms=bool(cfg["use_ms"]), tsm_fold=int(cfg["tsm_fold"]),
        ms=ms, seed=seed)
    net.validate()
    train = TrainConfig(
        epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        decay_epochs=tuple(int(e) for e in cfg["decay_epochs"]),
        decay_factor=float(cfg["decay_factor"]),
        momentum=float(cfg["momentum"]), seed=seed)
    return RunConfig(raw=cfg, seed=seed, dataset=dataset, net=net, train=train)


def load_config(path: str | None, cli_seed: int | None = None) -> RunConfig:
    overrides = None
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
        if not isinstance(overrides, dict):
            raise ValueError("config file must hold a JSON object")
    return build_run_config(overrides, cli_seed)
