"""Bottleneck residual classifier (ResNet-50 topology, 4-way head)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import (Tensor, affine, batch_norm, conv, global_avg_pool, maxpool, no_grad, relu,
                     softmax)

SUBCLASSES = ("NoTumor", "NCR/NET", "ED", "ET")
STAGE_BASE = (64, 128, 256, 512)


@dataclass(frozen=True)
class ResNetSpec:
    stage_blocks: tuple[int, int, int, int] = (3, 4, 6, 3)
    stem_channels: int = 64
    expansion: int = 4
    num_classes: int = 4
    width_scale: float = 1.0
    in_channels: int = 4
    stem_kernel: int = 7
    stem_stride: int = 2
    pool_kernel: int = 3
    pool_stride: int = 2

    def __post_init__(self):
        if len(self.stage_blocks) != 4 or min(self.stage_blocks) < 1:
            raise ValueError("stage_blocks needs four positive counts")
        if self.num_classes != 4:
            raise ValueError("the subclass head has exactly 4 outputs")
        if self.width_scale <= 0:
            raise ValueError("width_scale must be positive")

    def width(self, c: int) -> int:
        return max(1, int(round(c * self.width_scale)))

    @property
    def stem_width(self) -> int:
        return self.width(self.stem_channels)

    def stage_width(self, i: int) -> int:
        return self.width(STAGE_BASE[i])

    def stage_out(self, i: int) -> int:
        return self.stage_width(i) * self.expansion


@dataclass
class ClassifierModel:
    spec: ResNetSpec
    params: dict[str, Tensor]
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    kind = "cls"

    def spec_dict(self) -> dict:
        return asdict(self.spec)


def _conv_param(params, rng, name, cout, cin, k, dtype):
    bound = np.sqrt(6.0 / (cin * k * k))
    params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)).astype(dtype), requires_grad=True)


def _norm_param(params, buffers, name, c, dtype):
    params[f"{name}.gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
    params[f"{name}.beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
    buffers[name] = {"mean": np.zeros(c, dtype=dtype), "var": np.ones(c, dtype=dtype)}


def block_layout(spec: ResNetSpec) -> list[dict]:
    """One entry per bottleneck block: name, channels, stride, projection."""
    blocks = []
    cin = spec.stem_width
    for s, n in enumerate(spec.stage_blocks):
        mid, out = spec.stage_width(s), spec.stage_out(s)
        for b in range(n):
            stride = 2 if (b == 0 and s > 0) else 1
            blocks.append({"name": f"stage{s + 2}.block{b}", "stage": s, "cin": cin, "mid": mid, "out": out,
                           "stride": stride, "project": stride != 1 or cin != out})
            cin = out
    return blocks


def build_resnet(spec: ResNetSpec, seed: int = 0, dtype=np.float32) -> ClassifierModel:
    """Stem conv -> max pool -> four bottleneck stages -> global average pool -> affine head."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    buffers: dict[str, dict[str, np.ndarray]] = {}
    _conv_param(params, rng, "stem.conv", spec.stem_width, spec.in_channels, spec.stem_kernel, dtype)
    _norm_param(params, buffers, "stem.norm", spec.stem_width, dtype)
    for blk in block_layout(spec):
        n = blk["name"]
        _conv_param(params, rng, f"{n}.conv1", blk["mid"], blk["cin"], 1, dtype)
        _norm_param(params, buffers, f"{n}.norm1", blk["mid"], dtype)
        _conv_param(params, rng, f"{n}.conv2", blk["mid"], blk["mid"], 3, dtype)
        _norm_param(params, buffers, f"{n}.norm2", blk["mid"], dtype)
        _conv_param(params, rng, f"{n}.conv3", blk["out"], blk["mid"], 1, dtype)
        _norm_param(params, buffers, f"{n}.norm3", blk["out"], dtype)
        if blk["project"]:
            _conv_param(params, rng, f"{n}.proj", blk["out"], blk["cin"], 1, dtype)
            _norm_param(params, buffers, f"{n}.projnorm", blk["out"], dtype)
    feat = spec.stage_out(3)
    bound = np.sqrt(6.0 / feat)
    params["head.weight"] = Tensor(rng.uniform(-bound, bound, (feat, spec.num_classes)).astype(dtype), requires_grad=True)
    params["head.bias"] = Tensor(np.zeros(spec.num_classes, dtype=dtype), requires_grad=True)
    return ClassifierModel(spec, params, buffers)


def parameter_count(model: ClassifierModel) -> int:
    return int(sum(p.size for p in model.params.values()))


def _cbn(model, x, conv_name, norm_name, mode, stride=1, padding=0, act=True):
    p = model.params
    y = conv(x, p[f"{conv_name}.weight"], None, stride=stride, padding=padding)
    y = batch_norm(y, p[f"{norm_name}.gamma"], p[f"{norm_name}.beta"], mode=mode, running=model.buffers[norm_name])
    return relu(y) if act else y


def bottleneck(model: ClassifierModel, blk: dict, x: Tensor, mode: str) -> Tensor:
    n = blk["name"]
    y = _cbn(model, x, f"{n}.conv1", f"{n}.norm1", mode)
    y = _cbn(model, y, f"{n}.conv2", f"{n}.norm2", mode, stride=blk["stride"], padding=1)
    y = _cbn(model, y, f"{n}.conv3", f"{n}.norm3", mode, act=False)
    shortcut = _cbn(model, x, f"{n}.proj", f"{n}.projnorm", mode, stride=blk["stride"], act=False) if blk["project"] else x
    return relu(y + shortcut)


def resnet_features(model: ClassifierModel, x, mode: str = "eval") -> list[Tensor]:
    """Stem output followed by the output of each of the four stages."""
    spec = model.spec
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(f"expected (N, {spec.in_channels}, H, W) input, got {x.shape}")
    x = _cbn(model, x, "stem.conv", "stem.norm", mode, stride=spec.stem_stride, padding=spec.stem_kernel // 2)
    x = maxpool(x, spec.pool_kernel, spec.pool_stride, padding=spec.pool_kernel // 2)
    feats = [x]
    stage = 0
    for blk in block_layout(spec):
        if blk["stage"] != stage:
            feats.append(x)
            stage = blk["stage"]
        x = bottleneck(model, blk, x, mode)
    feats.append(x)
    return feats


def resnet_logits(model: ClassifierModel, x, mode: str = "eval") -> Tensor:
    p = model.params
    return affine(global_avg_pool(resnet_features(model, x, mode)[-1]), p["head.weight"], p["head.bias"])


def classify(model: ClassifierModel, x, mode: str = "eval"):
    """Softmax probabilities and argmax labels (lowest index wins ties).

    A single (4, H, W) slice yields a length-4 vector and an int.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    dtype = model.params["head.weight"].dtype
    with no_grad():
        probs = softmax(resnet_logits(model, arr.astype(dtype, copy=False), mode), axis=1).data
    labels = probs.argmax(axis=1)
    if single:
        return probs[0], int(labels[0])
    return probs, labels


def derive_subclass_label(mask_slice) -> int:
    """0 for an all-background slice, else the most frequent tumour label
    (ties to the lowest label)."""
    labels = np.asarray(mask_slice)
    if labels.size and (labels.min() < 0 or labels.max() > 3):
        raise ValueError("labels must lie in {0, 1, 2, 3}")
    counts = np.bincount(labels.ravel().astype(np.int64), minlength=4)[1:4]
    if counts.sum() == 0:
        return 0
    return int(counts.argmax()) + 1
