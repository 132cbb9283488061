"""Training loops for the segmenters and the subclass classifier."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..clsnet import ClassifierModel, build_resnet, derive_subclass_label, resnet_logits
from ..metrics import dice_coefficient, mean_foreground_dice
from ..optim import (AdamState, CosineSchedule, adam_step, classification_objective, cosine_lr,
                     segmentation_objective)
from ..phantom import augment_arrays
from ..segnet import UnetModel, build_unet, case_array, default_unet_spec, unet_forward
from ..tensor import backward, no_grad, softmax
from ..voxio import CaseRecord
from .checkpoint import Checkpoint, checkpoint_from_model, save_checkpoint
from .config import RunConfig, derive_seed

LOG_HEADER = ("epoch", "lr", "train_loss", "val_metric", "wall_seconds")
KINDS = ("seg2d", "seg3d", "cls")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SampleSet:
    """Inputs ``x`` of shape (N, 4, *S) with targets: label maps (N, *S) for
    segmentation, class indices (N,) for classification."""
    x: np.ndarray
    y: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} targets")

    def __len__(self) -> int:
        return len(self.x)


def slice_samples(cases: Sequence[CaseRecord], indices: Sequence[int] | None = None) -> SampleSet:
    """Axial slices (last axis) of every case: x (N, 4, D, H), y (N, D, H)."""
    xs, ys, ids = [], [], []
    for case in cases:
        vol = case_array(case)
        picks = range(vol.shape[-1]) if indices is None else indices
        for k in picks:
            xs.append(vol[..., k])
            ys.append(case.mask.labels[..., k])
            ids.append(f"{case.case_id}:{k}")
    return SampleSet(np.stack(xs), np.stack(ys).astype(np.int64), ids)


def volume_samples(cases: Sequence[CaseRecord]) -> SampleSet:
    return SampleSet(np.stack([case_array(c) for c in cases]),
                     np.stack([c.mask.labels for c in cases]).astype(np.int64), [c.case_id for c in cases])


def classification_samples(fused: Sequence[np.ndarray], masks: Sequence[np.ndarray],
                           ids: Sequence[str] | None = None) -> SampleSet:
    """Axial slices of (4, D, H, W) fused maps labelled from the matching truth slice."""
    xs, ys, names = [], [], []
    for n, (f, m) in enumerate(zip(fused, masks)):
        for k in range(f.shape[-1]):
            xs.append(f[..., k])
            ys.append(derive_subclass_label(m[..., k]))
            names.append(f"{ids[n] if ids else n}:{k}")
    return SampleSet(np.stack(xs).astype(np.float32), np.asarray(ys, dtype=np.int64), names)


def balanced_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Every sample once, interleaved round-robin across classes so each
    batch sees the classes as evenly as their counts allow."""
    pools = [list(rng.permutation(np.flatnonzero(labels == c))) for c in np.unique(labels)]
    order = []
    while any(pools):
        for pool in pools:
            if pool:
                order.append(pool.pop())
    return np.asarray(order, dtype=np.int64)


@dataclass
class TrainResult:
    model: UnetModel | ClassifierModel
    adam: AdamState
    rows: list[dict]
    best: Checkpoint
    best_metric: float
    best_epoch: int


def build_model(kind: str, cfg: RunConfig, seed: int):
    if kind == "cls":
        return build_resnet(cfg.cls.resnet, seed)
    mode = kind[3:]
    spec = cfg.seg.unet or default_unet_spec(mode)
    if spec.spatial_rank != int(mode[0]):
        spec = replace(spec, spatial_rank=int(mode[0]))
    return build_unet(spec, seed)


def predict(model, x: np.ndarray, batch: int) -> np.ndarray:
    """Class probabilities in eval mode, batched."""
    outs = []
    with no_grad():
        for i in range(0, len(x), batch):
            chunk = x[i:i + batch]
            if isinstance(model, ClassifierModel):
                outs.append(softmax(resnet_logits(model, chunk, "eval"), axis=1).data)
            else:
                outs.append(unet_forward(model, chunk, "eval").data)
    return np.concatenate(outs)


def validation_metric(model, data: SampleSet, batch: int, metric: str = "foreground") -> float:
    """Accuracy for the classifier; for segmenters the mean foreground Dice
    or the whole-tumour (label > 0) Dice."""
    pred = predict(model, data.x, batch).argmax(axis=1)
    if isinstance(model, ClassifierModel):
        return float(np.mean(pred == data.y))
    if metric == "whole_tumor":
        return dice_coefficient(pred > 0, data.y > 0)
    if metric != "foreground":
        raise ValueError(f"unknown validation metric {metric!r}")
    return mean_foreground_dice(pred, data.y)


def _augment_batch(x, y, aug, draw_seeds, segment: bool):
    xs, ys = [], []
    for xi, yi, s in zip(x, y, draw_seeds):
        img, lab = augment_arrays(xi, yi if segment else None, aug, int(s))
        xs.append(img.astype(x.dtype, copy=False))
        ys.append(lab if segment else yi)
    return np.stack(xs), np.stack(ys) if segment else np.asarray(ys)


def train_model(kind: str, cfg: RunConfig, train: SampleSet, val: SampleSet | None = None,
                log_path=None, checkpoint_path=None, model=None) -> TrainResult:
    """Epoch loop: (augment, forward, loss, backward, Adam) with a per-step
    cosine learning rate.  One CSV row per epoch; the lr column is the rate
    at the epoch's first step.  Validation falls back to the training set.
    The returned model holds the best-validation parameters.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if len(train) == 0:
        raise ValueError("empty training set")
    section = cfg.cls if kind == "cls" else cfg.seg
    segment = kind != "cls"
    val = val if val is not None and len(val) else train
    model = model or build_model(kind, cfg, derive_seed(cfg.seed, f"{kind}:init"))
    order_rng = np.random.default_rng(derive_seed(cfg.seed, f"{kind}:order"))
    aug = replace(cfg.augment, seed=derive_seed(cfg.seed, f"{kind}:augment"))
    steps = math.ceil(len(train) / section.batch)
    schedule = CosineSchedule(section.lr, section.lr_min, section.epochs * steps)
    adam = AdamState()
    dtype = next(iter(model.params.values())).dtype
    x_all = train.x.astype(dtype, copy=False)
    rows: list[dict] = []
    best, best_metric, best_epoch = None, -math.inf, -1
    start = time.perf_counter()
    for epoch in range(section.epochs):
        order = balanced_order(train.y, order_rng) if not segment else order_rng.permutation(len(train))
        epoch_lr = cosine_lr(schedule, epoch * steps)
        losses = []
        for s in range(steps):
            idx = order[s * section.batch:(s + 1) * section.batch]
            xb, yb = x_all[idx], train.y[idx]
            if section.augment:
                xb, yb = _augment_batch(xb, yb, aug, epoch * len(train) + idx, segment)
            if segment:
                probs = unet_forward(model, xb, "train")
                loss = segmentation_objective(probs, yb, model.params, cfg.loss)
            else:
                probs = softmax(resnet_logits(model, xb, "train"), axis=1)
                loss = classification_objective(probs, yb, model.params, cfg.loss)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"{kind}: non-finite loss {value} at epoch {epoch}, step {s}")
            names = list(model.params)
            grads = backward(loss, [model.params[n] for n in names])
            lr = cosine_lr(schedule, epoch * steps + s)
            adam_step(adam, model.params, dict(zip(names, grads)), lr, section.weight_decay)
            losses.append(value)
        metric = validation_metric(model, val, section.batch, getattr(section, "metric", "foreground"))
        rows.append({"epoch": epoch, "lr": epoch_lr, "train_loss": float(np.mean(losses)),
                     "val_metric": metric, "wall_seconds": time.perf_counter() - start})
        if metric > best_metric:
            best_metric, best_epoch = metric, epoch
            best = checkpoint_from_model(model, adam, epoch, {"val_metric": metric})
        if section.target_metric is not None and metric >= section.target_metric:
            break
    if log_path is not None:
        write_log(log_path, rows)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, best)
    for k, p in model.params.items():
        p.data[...] = best.params[k]
    for k, d in model.buffers.items():
        for s in d:
            d[s][...] = best.buffers[k][s]
    return TrainResult(model, adam, rows, best, best_metric, best_epoch)


def write_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r["epoch"], repr(r["lr"]), repr(r["train_loss"]), repr(r["val_metric"]),
                        f"{r['wall_seconds']:.3f}"])


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
