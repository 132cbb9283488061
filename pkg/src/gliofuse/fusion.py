"""Weighted-average fusion of 2D and 3D class-probability volumes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import mean_foreground_dice

DEFAULT_ALPHA = 0.6
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class FusionParams:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def fuse(s2d: np.ndarray, s3d: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``alpha * s2d + (1 - alpha) * s3d``, voxelwise and classwise."""
    s2d = np.asarray(s2d)
    s3d = np.asarray(s3d)
    if s2d.shape != s3d.shape:
        raise ValueError(f"shape mismatch: 2D {s2d.shape} vs 3D {s3d.shape}")
    alpha = FusionParams(float(alpha)).alpha
    return alpha * s2d + (1.0 - alpha) * s3d


def fused_labels(s2d, s3d, alpha: float) -> np.ndarray:
    return fuse(s2d, s3d, alpha).argmax(axis=0)


def score_alpha(cases: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]], alpha: float) -> float:
    """Mean foreground Dice of the fused argmax labels over ``(s2d, s3d, truth)`` cases."""
    return float(np.mean([mean_foreground_dice(fused_labels(a, b, alpha), t) for a, b, t in cases]))


def grid_search_alpha(cases: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
                      candidates: Sequence[float] = DEFAULT_GRID, tie_tol: float = 1e-12):
    """Best ``alpha`` on a validation set and the full ``(alpha, score)`` table.

    Ties (scores within ``tie_tol``) go to the candidate nearest 0.5, then to
    the smaller one.
    """
    candidates = [float(a) for a in candidates]
    if not candidates:
        raise ValueError("empty candidate list")
    if not cases:
        raise ValueError("need at least one validation case")
    for a in candidates:
        FusionParams(a)
    table = [(a, score_alpha(cases, a)) for a in candidates]
    best_score = max(s for _, s in table)
    tied = [a for a, s in table if s >= best_score - tie_tol]
    best = min(tied, key=lambda a: (round(abs(a - 0.5), 12), a))
    return best, table
