import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gliofuse.fusion import (DEFAULT_ALPHA, DEFAULT_GRID, FusionParams, fuse, fused_labels, grid_search_alpha,
                             score_alpha)
from gliofuse.metrics import mean_foreground_dice


def _probs(rng, shape=(4, 3, 3, 3)):
    e = rng.random(shape) + 1e-3
    return e / e.sum(axis=0, keepdims=True)


def test_endpoints_are_exact(rng):
    a, b = _probs(rng), _probs(rng)
    assert np.array_equal(fuse(a, b, 1.0), a)
    assert np.array_equal(fuse(a, b, 0.0), b)


def test_default_alpha_example():
    assert DEFAULT_ALPHA == 0.6
    assert np.isclose(fuse(np.array([0.5]), np.array([1.0])), 0.7)[0]


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_convex_and_distribution_preserving(seed, alpha):
    rng = np.random.default_rng(seed)
    a, b = _probs(rng), _probs(rng)
    f = fuse(a, b, alpha)
    assert np.all(f >= np.minimum(a, b) - 1e-15) and np.all(f <= np.maximum(a, b) + 1e-15)
    np.testing.assert_allclose(f.sum(axis=0), 1.0, atol=1e-6)


@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_fusing_equal_inputs_is_identity(seed, alpha):
    s = _probs(np.random.default_rng(seed))
    np.testing.assert_allclose(fuse(s, s, alpha), s, rtol=1e-15, atol=0)


def test_errors(rng):
    with pytest.raises(ValueError, match="shape"):
        fuse(_probs(rng), _probs(rng, (4, 2, 2, 2)))
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            fuse(_probs(rng), _probs(rng), bad)
        with pytest.raises(ValueError):
            FusionParams(bad)
    with pytest.raises(ValueError):
        grid_search_alpha([(_probs(rng), _probs(rng), np.zeros((3, 3, 3), int))], [])


def _one_hot_probs(labels, sharp=0.97):
    p = np.full((4,) + labels.shape, (1 - sharp) / 3)
    np.put_along_axis(p, labels[None], sharp, axis=0)
    return p


def test_perfect_2d_wins_endpoint_search(rng):
    truth = rng.integers(0, 4, size=(6, 6, 6))
    case = (_one_hot_probs(truth), _probs(rng, (4, 6, 6, 6)), truth)
    best, _ = grid_search_alpha([case], [0.0, 1.0])
    assert best == 1.0


def test_equal_inputs_tie_break_to_half(rng):
    s = _probs(rng, (4, 5, 5, 5))
    truth = rng.integers(0, 4, size=(5, 5, 5))
    best, table = grid_search_alpha([(s, s, truth)])
    assert best == 0.5
    assert len({score for _, score in table}) == 1


def test_tie_break_prefers_smaller_when_equidistant(rng):
    s = _probs(rng, (4, 4, 4, 4))
    truth = rng.integers(0, 4, size=(4, 4, 4))
    assert grid_search_alpha([(s, s, truth)], [0.3, 0.7])[0] == 0.3


def test_grid_matches_exhaustive_oracle(rng):
    cases = []
    for _ in range(3):
        truth = rng.integers(0, 4, size=(6, 6, 6))
        noisy2 = np.where(rng.random(truth.shape) < 0.3, rng.integers(0, 4, truth.shape), truth)
        noisy3 = np.where(rng.random(truth.shape) < 0.4, rng.integers(0, 4, truth.shape), truth)
        cases.append((_one_hot_probs(noisy2, 0.7) * 0.5 + _probs(rng, (4, 6, 6, 6)) * 0.5,
                      _one_hot_probs(noisy3, 0.8) * 0.5 + _probs(rng, (4, 6, 6, 6)) * 0.5, truth))
    best, table = grid_search_alpha(cases)
    oracle = {}
    for a in DEFAULT_GRID:
        scores = []
        for s2, s3, t in cases:
            lab = np.argmax(a * s2 + (1 - a) * s3, axis=0)
            scores.append(mean_foreground_dice(lab, t))
        oracle[a] = np.mean(scores)
    top = max(oracle.values())
    assert np.isclose(oracle[best], top, rtol=0, atol=1e-12)
    assert [a for a, _ in table] == list(DEFAULT_GRID)
    assert np.allclose([s for _, s in table], [oracle[a] for a in DEFAULT_GRID], rtol=0, atol=1e-12)
    assert score_alpha(cases, best) == dict(table)[best]
    assert np.array_equal(fused_labels(*cases[0][:2], 0.4), fuse(*cases[0][:2], 0.4).argmax(axis=0))
