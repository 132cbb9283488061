"""Omnibus significance tests (one-way ANOVA, Kruskal-Wallis) with in-house
p-values from the regularised incomplete beta and gamma functions."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 10_000


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if not 0 <= x <= 1:
        raise ValueError("betainc needs x in [0, 1]")
    if x == 0 or x == 1:
        return float(x)
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1) / (a + b + 2):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def gammaincc(a: float, x: float) -> float:
    """Regularised upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ValueError("gammaincc needs a > 0")
    if x < 0:
        raise ValueError("gammaincc needs x >= 0")
    if x == 0:
        return 1.0
    log_front = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1:
        # series for P(a, x)
        term = total = 1.0 / a
        ap = a
        for _ in range(_MAX_ITER):
            ap += 1
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                return 1.0 - total * math.exp(log_front)
        raise ArithmeticError("incomplete gamma series did not converge")
    # continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = b + an / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(log_front) * h
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def f_sf(f: float, df1: float, df2: float) -> float:
    """Survival function of the F distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def chi2_sf(x: float, df: float) -> float:
    return gammaincc(df / 2.0, x / 2.0) if x > 0 else 1.0


def _groups(groups: Sequence[Sequence[float]]) -> list[np.ndarray]:
    gs = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(gs) < 2:
        raise ValueError("need at least two groups")
    return gs


def one_way_anova(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """``(F, p)`` with df ``(k - 1, N - k)``."""
    gs = _groups(groups)
    if any(len(g) < 2 for g in gs):
        raise ValueError("every group needs at least two observations")
    k = len(gs)
    n = sum(len(g) for g in gs)
    grand = np.concatenate(gs).mean()
    ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in gs)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in gs)
    if ssw == 0:
        raise ValueError("zero within-group variance: F is undefined")
    f = (ssb / (k - 1)) / (ssw / (n - k))
    return float(f), float(f_sf(f, k - 1, n - k))


def rankdata(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks (1-based) and the sizes of every tie block."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    ties = []
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        ties.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(ties)


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Tie-corrected ``(H, p)`` with a chi-square reference on ``k - 1`` df."""
    gs = _groups(groups)
    n = sum(len(g) for g in gs)
    if n < 3 or any(len(g) == 0 for g in gs):
        raise ValueError("need non-empty groups and at least three observations")
    ranks, ties = rankdata(np.concatenate(gs))
    correction = 1.0 - float((ties ** 3 - ties).sum()) / (n ** 3 - n)
    if correction == 0:
        raise ValueError("all observations identical: H is undefined")
    # between-group spread of mean ranks; avoids the cancellation in the sum-of-squares form
    mean_rank = (n + 1) / 2.0
    h = 0.0
    start = 0
    for g in gs:
        h += len(g) * (ranks[start:start + len(g)].mean() - mean_rank) ** 2
        start += len(g)
    h = 12.0 * h / (n * (n + 1)) / correction
    return float(h), float(chi2_sf(h, len(gs) - 1))
