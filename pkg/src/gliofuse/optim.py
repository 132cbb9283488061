"""Losses and optimisation: smoothed multi-class Dice, focal loss, L2 penalty,
Adam with decoupled weight decay, cosine annealing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor, clip_min, log, power, tmean, tsum

NUM_CLASSES = 4


@dataclass
class LossConfig:
    smooth: float = 1.0
    focal_gamma: float = 2.0
    focal_weights: tuple[float, ...] | None = None
    l2_lambda: float = 0.0
    dice_weight: float = 1.0
    focal_weight: float = 1.0

    def __post_init__(self):
        if self.smooth <= 0:
            raise ValueError("smooth must be positive")
        if self.focal_gamma < 0 or self.l2_lambda < 0:
            raise ValueError("focal gamma and l2 lambda must be non-negative")


def is_decayed(name: str) -> bool:
    """Only convolution / dense weights carry L2 and weight decay."""
    return name.endswith(".weight")


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES, axis: int = 1, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    oh = np.eye(num_classes, dtype=dtype)[labels]
    return np.moveaxis(oh, -1, axis)


def dice_loss(pred: Tensor, truth: np.ndarray, smooth: float = 1.0, class_axis: int = 1) -> Tensor:
    """``1 - T_D`` where T_D averages the smoothed per-class Dice over all classes.

    Sums run over every axis except ``class_axis`` (batch included).
    """
    truth = np.asarray(truth)
    if truth.shape != pred.shape:
        raise ValueError(f"dice_loss: pred {pred.shape} vs truth {truth.shape}")
    if not (np.isin(truth, (0, 1)).all() and np.all(truth.sum(axis=class_axis) == 1)):
        raise ValueError("dice_loss: truth must be one-hot along the class axis")
    axes = tuple(a for a in range(pred.ndim) if a != class_axis % pred.ndim)
    t = Tensor(truth, dtype=pred.dtype)
    inter = tsum(pred * t, axis=axes)
    p_pp = tsum(pred, axis=axes)
    t_pp = truth.sum(axis=axes).astype(pred.dtype)
    per_class = (inter * 2.0 + smooth) / (p_pp + (t_pp + smooth))
    return 1.0 - tmean(per_class)


def focal_loss(probs: Tensor, target: np.ndarray, gamma: float = 2.0, weights=None, class_axis: int = 1) -> Tensor:
    """Mean of ``-w_t (1 - p_t)^gamma ln p_t`` over every sample / voxel."""
    target = np.asarray(target)
    k = probs.shape[class_axis]
    if target.size and (target.min() < 0 or target.max() >= k or not np.issubdtype(target.dtype, np.integer)):
        raise ValueError(f"focal_loss: target must be class indices in [0, {k})")
    oh = Tensor(one_hot(target, k, axis=class_axis % probs.ndim, dtype=probs.dtype))
    p_t = clip_min(tsum(probs * oh, axis=class_axis), 1e-12)
    term = log(p_t) * -1.0
    if gamma != 0:
        term = power(1.0 - p_t, gamma) * term
    if weights is not None:
        w = np.asarray(weights, dtype=probs.dtype)[target]
        term = term * w
    return tmean(term)


def l2_penalty(parameters, lam: float) -> Tensor:
    """``lam * sum(theta^2)``.  A mapping keeps only decayed (``.weight``) entries."""
    if isinstance(parameters, Mapping):
        tensors = [t for name, t in parameters.items() if is_decayed(name)]
    else:
        tensors = list(parameters)
    if lam < 0:
        raise ValueError("l2 lambda must be non-negative")
    total = Tensor(np.zeros((), dtype=tensors[0].dtype if tensors else np.float64))
    for t in tensors:
        total = total + tsum(t * t)
    return total * lam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, parameters: Mapping[str, Tensor], gradients: Mapping[str, np.ndarray],
              lr: float, weight_decay: float = 0.0) -> AdamState:
    """One bias-corrected Adam update, in place.

    ``weight_decay`` is decoupled: ``theta -= lr * wd * theta`` for decayed
    parameters, after the moment step.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in parameters.items():
        g = gradients[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter {p.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)
        if weight_decay and is_decayed(name):
            p.data -= (lr * weight_decay) * p.data
    return state


@dataclass(frozen=True)
class CosineSchedule:
    eta_max: float
    eta_min: float = 0.0
    total_steps: int = 1

    def __post_init__(self):
        if self.eta_min > self.eta_max or self.total_steps < 1:
            raise ValueError("cosine schedule needs eta_min <= eta_max and total_steps >= 1")


def cosine_lr(schedule: CosineSchedule, t: float) -> float:
    if not 0 <= t <= schedule.total_steps:
        raise ValueError(f"step {t} outside [0, {schedule.total_steps}]")
    return schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) * (1 + math.cos(math.pi * t / schedule.total_steps))


def segmentation_objective(probs: Tensor, labels: np.ndarray, params: Mapping[str, Tensor], cfg: LossConfig) -> Tensor:
    """Dice + voxelwise focal + L2 on class-probability maps (N, C, *S)."""
    loss = dice_loss(probs, one_hot(labels, probs.shape[1], dtype=probs.dtype), cfg.smooth) * cfg.dice_weight
    if cfg.focal_weight:
        loss = loss + focal_loss(probs, labels, cfg.focal_gamma, cfg.focal_weights) * cfg.focal_weight
    if cfg.l2_lambda:
        loss = loss + l2_penalty(params, cfg.l2_lambda)
    return loss


def classification_objective(probs: Tensor, labels: Sequence[int], params: Mapping[str, Tensor], cfg: LossConfig) -> Tensor:
    loss = focal_loss(probs, np.asarray(labels), cfg.focal_gamma, cfg.focal_weights)
    if cfg.l2_lambda:
        loss = loss + l2_penalty(params, cfg.l2_lambda)
    return loss
