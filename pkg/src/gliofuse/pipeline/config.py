"""Run configuration: nested dataclasses with a flat dotted-key JSON schema.

A config file is a single JSON object such as::

    {"seed": 7, "seg.lr": 0.001, "seg.unet.depth": 2, "cls.epochs": 50}

Keys name dataclass fields joined by dots; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..clsnet import ResNetSpec
from ..fusion import DEFAULT_ALPHA
from ..optim import LossConfig
from ..phantom import AugmentConfig
from ..segnet import UnetSpec, default_unet_spec

TASKS = ("generate", "preprocess", "train-seg", "fuse", "train-cls", "evaluate", "gradcheck", "report")


@dataclass
class SegConfig:
    mode: str = "2d"
    lr: float = 5e-4
    lr_min: float = 0.0
    batch: int = 8
    epochs: int = 100
    weight_decay: float = 0.0
    augment: bool = True
    unet: UnetSpec | None = None  # None -> default_unet_spec(mode)
    metric: str = "foreground"  # or "whole_tumor"
    target_metric: float | None = None  # stop early once validation reaches this


@dataclass
class ClsConfig:
    lr: float = 1e-3
    lr_min: float = 0.0
    batch: int = 32
    epochs: int = 100
    weight_decay: float = 1e-5
    augment: bool = False
    resnet: ResNetSpec = field(default_factory=ResNetSpec)
    target_metric: float | None = None


@dataclass
class FusionConfig:
    alpha: float = DEFAULT_ALPHA
    grid: bool = False


@dataclass
class RunConfig:
    task: str = "train-seg"
    data_dir: str = "data"
    output_dir: str = "runs"
    seed: int = 0
    split_ratio: float = 0.8
    crop: tuple[int, int, int] = (128, 128, 128)
    seg: SegConfig = field(default_factory=SegConfig)
    cls: ClsConfig = field(default_factory=ClsConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss: LossConfig = field(default_factory=lambda: LossConfig(l2_lambda=1e-5))
    augment: AugmentConfig = field(default_factory=AugmentConfig)


REFERENCE_VALUES = {
    "seg.lr": 5e-4,
    "seg.batch": 8,
    "seg.epochs": 100,
    "cls.lr": 1e-3,
    "cls.batch": 32,
    "cls.weight_decay": 1e-5,
    "fusion.alpha": 0.6,
}


def desk_preset(seed: int = 0) -> RunConfig:
    """Small networks and short schedules that train on one CPU core in minutes."""
    cfg = RunConfig(seed=seed, crop=(32, 32, 32))
    cfg.seg = SegConfig(epochs=60, batch=8, lr=5e-3, augment=False, unet=UnetSpec(depth=2, base_channels=8))
    cfg.cls = ClsConfig(epochs=60, batch=16, lr=1e-2,
                        resnet=ResNetSpec(stage_blocks=(1, 1, 1, 1), width_scale=1 / 8))
    return cfg


def derive_seed(seed: int, name: str) -> int:
    """Independent 31-bit stream seed for a named component."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def flatten(obj, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(flatten(v, key + "."))
        else:
            out[key] = list(v) if isinstance(v, tuple) else v
    return out


def _coerce(current, value, key):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{key}: expected a boolean")
        return value
    if isinstance(current, tuple):
        return tuple(value)
    if isinstance(current, int) and not isinstance(value, bool) and float(value) == int(value):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def set_value(cfg, key: str, value):
    """Assign ``value`` at dotted ``key``; frozen spec dataclasses are replaced."""
    head, _, rest = key.partition(".")
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    if head not in fields:
        raise ValueError(f"unknown config key {key!r}")
    current = getattr(cfg, head)
    if rest:
        if current is None and head == "unet":
            current = default_unet_spec(getattr(cfg, "mode", "2d"))
        if not dataclasses.is_dataclass(current):
            raise ValueError(f"unknown config key {key!r}")
        new = set_value(current, rest, value)
    elif dataclasses.is_dataclass(current):
        raise ValueError(f"config key {key!r} names a section, not a value")
    else:
        new = _coerce(current, value, key) if current is not None else value
    if getattr(type(cfg), "__dataclass_params__").frozen:
        return dataclasses.replace(cfg, **{head: new})
    setattr(cfg, head, new)
    return cfg


def apply_overrides(cfg: RunConfig, values: dict) -> RunConfig:
    for key in sorted(values):
        set_value(cfg, key, values[key])
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    values = json.loads(Path(path).read_text())
    if not isinstance(values, dict):
        raise ValueError("config file must hold a JSON object")
    return apply_overrides(base or RunConfig(), values)


def self_test(cfg: RunConfig | None = None) -> dict[str, tuple[float, float, bool]]:
    """Compare defaults with the reference hyperparameters: key -> (value, expected, ok)."""
    flat = flatten(cfg or RunConfig())
    return {k: (flat[k], v, flat[k] == v) for k, v in REFERENCE_VALUES.items()}
