"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def grad_check(fn: Callable[..., Tensor], point: Sequence[np.ndarray], tol: float = 1e-4) -> GradCheckReport:
    """Compare ``backward`` against central differences at ``point``.

    ``fn`` takes one Tensor per array in ``point`` and returns a scalar
    Tensor.  Step is ``1e-5 * max(1, |x|)`` per coordinate; the error of a
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    arrays = [np.array(p, dtype=np.float64) for p in point]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    analytic = backward(fn(*leaves), leaves)

    def value(i, x):
        probe = [a if j != i else x for j, a in enumerate(arrays)]
        return float(fn(*[Tensor(p) for p in probe]).data)

    per_input = []
    for i, a in enumerate(arrays):
        worst = 0.0
        flat = a.reshape(-1)
        for k in range(flat.size):
            h = 1e-5 * max(1.0, abs(flat[k]))
            xp = a.copy()
            xp.reshape(-1)[k] += h
            xm = a.copy()
            xm.reshape(-1)[k] -= h
            numeric = (value(i, xp) - value(i, xm)) / (2 * h)
            err = abs(analytic[i].reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
        per_input.append(worst)
    return GradCheckReport(max(per_input, default=0.0), tol, per_input)
