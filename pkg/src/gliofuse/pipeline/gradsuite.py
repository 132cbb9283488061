"""Finite-difference audit of every differentiable primitive and loss (64-bit)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..optim import dice_loss, focal_loss, l2_penalty, one_hot
from ..tensor import (GradCheckReport, Tensor, affine, batch_norm, concat, conv, grad_check, maxpool,
                      precision, relu, softmax, tsum, upsample)


@dataclass
class SuiteEntry:
    name: str
    shape: tuple
    report: GradCheckReport


def _projected(out: Tensor, r: np.ndarray) -> Tensor:
    """Scalar <out, r> so every output coordinate contributes a distinct weight."""
    return tsum(out * Tensor(r))


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 1.0, size=shape)


def _distinct(rng, shape):
    """Values whose pairwise gaps dwarf the finite-difference step (clean max)."""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) / n + rng.uniform(0, 1e-3, shape)).astype(np.float64)


def _case_conv2d(rng, i):
    n, c, k, h = 1 + i % 2, 1 + i % 3, 2 + i % 2, 5 + i
    x = rng.normal(size=(n, c, h, h + 1))
    w = rng.normal(size=(2, c, k, k))
    b = rng.normal(size=2)
    stride, pad = 1 + i % 2, i % 2
    out_shape = conv(Tensor(x), Tensor(w), Tensor(b), stride, pad).shape
    r = rng.normal(size=out_shape)
    return (lambda x, w, b: _projected(conv(x, w, b, stride, pad), r)), (x, w, b)


def _case_conv3d(rng, i):
    c, k = 1 + i % 2, 2 + i % 2
    x = rng.normal(size=(1, c, 4 + i % 2, 4 + i // 2, 5))
    w = rng.normal(size=(2, c, k, k, k))
    b = rng.normal(size=2)
    pad = i % 2
    r = rng.normal(size=conv(Tensor(x), Tensor(w), Tensor(b), 1, pad).shape)
    return (lambda x, w, b: _projected(conv(x, w, b, 1, pad), r)), (x, w, b)


def _case_maxpool(rng, i):
    rank = 2 + i % 2
    shape = (1, 1 + i) + (4 + 2 * (i % 2),) * rank
    x = _distinct(rng, shape)
    window, pad = (2, 0) if i < 3 else (3, 1)
    stride = 2
    r = rng.normal(size=maxpool(Tensor(x), window, stride, pad).shape)
    return (lambda x: _projected(maxpool(x, window, stride, pad), r)), (x,)


def _case_upsample(rng, i):
    shape = (1, 1 + i) + (2 + i % 2,) * (2 + i % 2)
    x = rng.normal(size=shape)
    r = rng.normal(size=upsample(Tensor(x), 2).shape)
    return (lambda x: _projected(upsample(x, 2), r)), (x,)


def _case_concat(rng, i):
    a = rng.normal(size=(2, 1 + i, 3, 2 + i))
    b = rng.normal(size=(2, 2, 3, 2 + i))
    r = rng.normal(size=(2, a.shape[1] + 2, 3, 2 + i))
    return (lambda a, b: _projected(concat([a, b], 1), r)), (a, b)


def _case_affine(rng, i):
    x = rng.normal(size=(2 + i, 3 + i % 2))
    w = rng.normal(size=(x.shape[1], 4))
    b = rng.normal(size=4)
    r = rng.normal(size=(x.shape[0], 4))
    return (lambda x, w, b: _projected(affine(x, w, b), r)), (x, w, b)


def _case_batch_norm(rng, i):
    c = 1 + i
    shape = (2 + i % 2, c) + (3,) * (1 + i % 2)
    x = rng.normal(size=shape)
    g = rng.normal(size=c)
    b = rng.normal(size=c)
    r = rng.normal(size=shape)
    return (lambda x, g, b: _projected(batch_norm(x, g, b, mode="train"), r)), (x, g, b)


def _case_softmax(rng, i):
    z = rng.normal(size=(2 + i, 4))
    axis = -1 if i % 2 else 0
    r = rng.normal(size=z.shape)
    return (lambda z: _projected(softmax(z, axis), r)), (z,)


def _case_relu(rng, i):
    x = _away_from_zero(rng, (3 + i, 4))
    w = rng.normal(size=(4, 3))
    r = rng.normal(size=(3 + i, 3))
    return (lambda x, w: _projected(affine(relu(x), w) * affine(relu(x), w), r)), (x, w)


def _probs(rng, shape):
    z = rng.normal(size=shape)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return z, e / e.sum(axis=1, keepdims=True)


def _case_dice(rng, i):
    shape = (1 + i % 2, 4) + (2 + i,) * (1 + i % 2)
    z, _ = _probs(rng, shape)
    labels = rng.integers(0, 4, size=(shape[0],) + shape[2:])
    truth = one_hot(labels, 4)
    return (lambda z: dice_loss(softmax(z, 1), truth, 1.0)), (z,)


def _case_focal(rng, i):
    shape = (2 + i, 4) + ((3,) if i % 2 else ())
    z, _ = _probs(rng, shape)
    target = rng.integers(0, 4, size=(shape[0],) + shape[2:])
    gamma = [0.0, 0.5, 1.0, 2.0, 3.0][i % 5]
    weights = rng.uniform(0.5, 2.0, 4) if i % 2 else None
    return (lambda z: focal_loss(softmax(z, 1), target, gamma, weights)), (z,)


def _case_l2(rng, i):
    a = rng.normal(size=(2 + i, 3))
    b = rng.normal(size=(4,))
    lam = 10.0 ** -(i % 3)
    return (lambda a, b: l2_penalty([a, b], lam)), (a, b)


CASES: dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "conv3d": _case_conv3d,
    "maxpool": _case_maxpool,
    "upsample": _case_upsample,
    "concat": _case_concat,
    "affine": _case_affine,
    "batch_norm": _case_batch_norm,
    "softmax": _case_softmax,
    "relu_composition": _case_relu,
    "dice_loss": _case_dice,
    "focal_loss": _case_focal,
    "l2_penalty": _case_l2,
}


def run_suite(seed: int = 0, per_case: int = 5, tol: float = 1e-4, names=None) -> list[SuiteEntry]:
    """``per_case`` random shapes for every entry of ``CASES`` (or ``names``)."""
    rng = np.random.default_rng(seed)
    out = []
    with precision(np.float64):
        for name in names or CASES:
            for i in range(per_case):
                fn, point = CASES[name](rng, i)
                out.append(SuiteEntry(name, tuple(np.shape(point[0])), grad_check(fn, point, tol)))
    return out
