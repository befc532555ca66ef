import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vcmorph.align import FeatureSequence, dtw_align, local_costs, paired_vectors
from vcmorph.errors import EmptyInputError, ShapeError


def brute_force_cost(c):
    """Minimum path cost by enumerating every monotone (1,1)/(1,0)/(0,1) path."""
    N, M = c.shape
    best = np.inf

    def walk(i, j, acc):
        nonlocal best
        acc += c[i, j]
        if acc >= best:
            return
        if (i, j) == (N - 1, M - 1):
            best = acc
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < N and j + dj < M:
                walk(i + di, j + dj, acc)
    walk(0, 0, 0.0)
    return best


def _seq(rng, n, d=3, voiced=True):
    return FeatureSequence(rng.standard_normal((n, d)),
                           voiced=rng.random(n) < 0.5 if voiced else None)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_matches_exhaustive_enumeration(N, M, seed):
    rng = np.random.default_rng(seed)
    a, b = _seq(rng, N), _seq(rng, M)
    path = dtw_align(a, b)
    assert path.total_cost == brute_force_cost(local_costs(a, b))


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
def test_path_structure(N, M, seed):
    rng = np.random.default_rng(seed)
    a, b = _seq(rng, N), _seq(rng, M)
    p = dtw_align(a, b)
    assert tuple(p.pairs[0]) == (0, 0) and tuple(p.pairs[-1]) == (N - 1, M - 1)
    steps = np.diff(p.pairs, axis=0)
    assert all(tuple(s) in {(1, 1), (1, 0), (0, 1)} for s in steps)
    assert max(N, M) <= len(p) <= N + M - 1
    c = local_costs(a, b)
    assert np.isclose(p.total_cost, c[p.pairs[:, 0], p.pairs[:, 1]].sum())


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31))
def test_symmetry(N, M, seed):
    rng = np.random.default_rng(seed)
    a, b = _seq(rng, N), _seq(rng, M)
    assert np.isclose(dtw_align(a, b).total_cost, dtw_align(b, a).total_cost)


def test_identity_has_zero_cost_diagonal(rng):
    a = _seq(rng, 9)
    p = dtw_align(a, a)
    assert p.total_cost == 0.0
    np.testing.assert_array_equal(p.pairs, np.repeat(np.arange(9)[:, None], 2, axis=1))


def test_repeated_frame_absorbed():
    a = FeatureSequence([[0.0], [1.0], [2.0]])
    b = FeatureSequence([[0.0], [1.0], [1.0], [2.0]])
    p = dtw_align(a, b)
    assert p.total_cost == 0.0
    assert [tuple(x) for x in p.pairs] == [(0, 0), (1, 1), (1, 2), (2, 3)]


def test_voicing_penalty_added():
    a = FeatureSequence([[0.0]], voiced=[True])
    b = FeatureSequence([[0.0]], voiced=[False])
    assert dtw_align(a, b, voicing_penalty=2.5).total_cost == 2.5
    assert dtw_align(a, b, voicing_penalty=0.0).total_cost == 0.0


def test_band_constrains_path(rng):
    a, b = _seq(rng, 20), _seq(rng, 20)
    p = dtw_align(a, b, band=1)
    assert np.all(np.abs(p.pairs[:, 0] - p.pairs[:, 1]) <= 1)
    assert p.total_cost >= dtw_align(a, b).total_cost


def test_errors(rng):
    with pytest.raises(EmptyInputError):
        dtw_align(FeatureSequence(np.zeros((0, 2))), _seq(rng, 3, 2))
    with pytest.raises(ShapeError):
        dtw_align(_seq(rng, 3, 2), _seq(rng, 3, 3))
    with pytest.raises(ShapeError):
        FeatureSequence(np.zeros((3, 2)), timing=[0, 2, 1])


def test_paired_vectors(rng):
    a, b = _seq(rng, 4, 2), _seq(rng, 5, 2)
    p = dtw_align(a, b)
    z = paired_vectors(a, b, p)
    assert z.shape == (len(p), 4)
    np.testing.assert_array_equal(z[:, :2], a.frames[p.pairs[:, 0]])
    np.testing.assert_array_equal(z[:, 2:], b.frames[p.pairs[:, 1]])


def test_exhaustive_small_all_sizes(rng):
    for N, M in itertools.product(range(1, 5), repeat=2):
        a, b = _seq(rng, N), _seq(rng, M)
        assert dtw_align(a, b).total_cost == brute_force_cost(local_costs(a, b))
