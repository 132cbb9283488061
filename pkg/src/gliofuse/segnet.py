"""Encoder-decoder (UNET) segmentation in 2D (slice-wise) and 3D (volumetric)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import Tensor, batch_norm, concat, conv, dropout, maxpool, no_grad, relu, softmax, upsample
from .voxio import MODALITIES, CaseRecord


@dataclass(frozen=True)
class UnetSpec:
    spatial_rank: int = 2
    depth: int = 4
    base_channels: int = 16
    in_channels: int = 4
    out_channels: int = 4
    dropout_rate: float = 0.0
    batch_norm: bool = False
    kernel: int = 3

    def __post_init__(self):
        if self.spatial_rank not in (2, 3):
            raise ValueError("spatial_rank must be 2 or 3")
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


def default_unet_spec(mode: str) -> UnetSpec:
    if mode == "2d":
        return UnetSpec(spatial_rank=2, depth=4, base_channels=16)
    if mode == "3d":
        return UnetSpec(spatial_rank=3, depth=3, base_channels=8)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class UnetModel:
    spec: UnetSpec
    params: dict[str, Tensor]
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @property
    def kind(self) -> str:
        return f"seg{self.spec.spatial_rank}d"

    def spec_dict(self) -> dict:
        return asdict(self.spec)


def _init_conv(params, rng, name, cout, cin, k, rank, dtype):
    fan_in = cin * k ** rank
    bound = np.sqrt(6.0 / fan_in)
    params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (cout, cin) + (k,) * rank).astype(dtype), requires_grad=True)
    params[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


def _init_norm(params, buffers, name, c, dtype):
    params[f"{name}.gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
    params[f"{name}.beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
    buffers[name] = {"mean": np.zeros(c, dtype=dtype), "var": np.ones(c, dtype=dtype)}


def layer_names(spec: UnetSpec) -> list[tuple[str, int, int, int]]:
    """(name, cout, cin, kernel) for every convolution, in forward order."""
    k = spec.kernel
    layers = []
    cin = spec.in_channels
    for level in range(spec.depth):
        c = spec.channels(level)
        layers += [(f"enc{level}.conv1", c, cin, k), (f"enc{level}.conv2", c, c, k)]
        cin = c
    c = spec.channels(spec.depth)
    layers += [("mid.conv1", c, cin, k), ("mid.conv2", c, c, k)]
    for level in reversed(range(spec.depth)):
        c = spec.channels(level)
        layers += [(f"dec{level}.up", c, spec.channels(level + 1), k),
                   (f"dec{level}.conv1", c, 2 * c, k), (f"dec{level}.conv2", c, c, k)]
    layers.append(("head", spec.out_channels, spec.base_channels, 1))
    return layers


def build_unet(spec: UnetSpec, seed: int = 0, dtype=np.float32) -> UnetModel:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    buffers: dict[str, dict[str, np.ndarray]] = {}
    for name, cout, cin, k in layer_names(spec):
        _init_conv(params, rng, name, cout, cin, k, spec.spatial_rank, dtype)
        if spec.batch_norm and name != "head":
            _init_norm(params, buffers, name.replace("conv", "norm").replace(".up", ".upnorm"), cout, dtype)
    return UnetModel(spec, params, buffers, np.random.default_rng([seed, 1]))


def _conv_act(model: UnetModel, name: str, x: Tensor, mode: str) -> Tensor:
    p = model.params
    y = conv(x, p[f"{name}.weight"], p[f"{name}.bias"], padding=model.spec.kernel // 2)
    if model.spec.batch_norm:
        norm = name.replace("conv", "norm").replace(".up", ".upnorm")
        y = batch_norm(y, p[f"{norm}.gamma"], p[f"{norm}.beta"], mode=mode, running=model.buffers[norm])
    return relu(y)


def unet_logits(model: UnetModel, batch, mode: str = "eval") -> Tensor:
    spec = model.spec
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
    if x.ndim != spec.spatial_rank + 2:
        raise ValueError(f"expected a rank-{spec.spatial_rank + 2} batch, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    step = 2 ** spec.depth
    if any(s % step for s in x.shape[2:]):
        raise ValueError(f"spatial extents {x.shape[2:]} not divisible by 2^depth = {step}")
    skips = []
    for level in range(spec.depth):
        x = _conv_act(model, f"enc{level}.conv1", x, mode)
        x = _conv_act(model, f"enc{level}.conv2", x, mode)
        skips.append(x)
        x = maxpool(x, 2)
    x = _conv_act(model, "mid.conv1", x, mode)
    x = _conv_act(model, "mid.conv2", x, mode)
    x = dropout(x, spec.dropout_rate, model.rng, mode)
    for level in reversed(range(spec.depth)):
        x = _conv_act(model, f"dec{level}.up", upsample(x, 2), mode)
        x = concat([skips[level], x], axis=1)
        x = _conv_act(model, f"dec{level}.conv1", x, mode)
        x = _conv_act(model, f"dec{level}.conv2", x, mode)
    p = model.params
    return conv(x, p["head.weight"], p["head.bias"])


def unet_forward(model: UnetModel, batch, mode: str = "eval") -> Tensor:
    """Per-voxel class probabilities, same spatial extents as the input."""
    return softmax(unet_logits(model, batch, mode), axis=1)


def case_array(case: CaseRecord, dtype=np.float32) -> np.ndarray:
    """Stack modalities in canonical order -> (4, D, H, W)."""
    return np.stack([case.modalities[m].data for m in MODALITIES]).astype(dtype, copy=False)


def segment_volume(model: UnetModel, case: CaseRecord, mode: str | None = None, batch_size: int = 16) -> np.ndarray:
    """Class-probability volume (4, D, H, W) for one preprocessed case.

    ``2d`` runs every axial slice (last axis) through a 2D model and stacks
    the results; ``3d`` runs the whole volume at once.
    """
    mode = mode or f"{model.spec.spatial_rank}d"
    if mode != f"{model.spec.spatial_rank}d":
        raise ValueError(f"mode {mode!r} does not match a {model.spec.spatial_rank}D model")
    dtype = next(iter(model.params.values())).dtype
    vol = case_array(case, dtype)
    with no_grad():
        if mode == "3d":
            return unet_forward(model, vol[None], "eval").data[0]
        slices = np.moveaxis(vol, -1, 0)  # (W, 4, D, H)
        outs = [unet_forward(model, slices[i:i + batch_size], "eval").data
                for i in range(0, slices.shape[0], batch_size)]
    return np.moveaxis(np.concatenate(outs, axis=0), 0, -1)
