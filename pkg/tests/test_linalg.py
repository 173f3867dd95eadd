import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from advtriplet.errors import UsageError
from advtriplet.linalg import Rng, axpy, dot, matvec, norm2, pairwise_sq_dists, scale, sq_dist

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_dot_examples():
    assert dot([1, 0], [0, 2]) == 0.0
    assert dot([1, 2], [3, 4]) == 11.0
    assert dot([3, 4], [3, 4]) == 25.0


def test_sq_dist_examples():
    assert sq_dist([1.5, -2], [1.5, -2]) == 0.0
    assert sq_dist([0, 0], [1, 0]) == 1.0
    assert sq_dist([0, 0], [1, 2]) == 5.0


def test_grouped_ops():
    v = np.array([0.3, -1.7, 2.0])
    np.testing.assert_array_equal(matvec(np.eye(3), v), v)
    assert norm2([3, 4]) == 5.0
    np.testing.assert_array_equal(scale(2, [1, -1]), [2, -2])
    np.testing.assert_array_equal(axpy(2, [1, 1], [0, 1]), [2, 3])


@pytest.mark.parametrize("fn", [dot, sq_dist])
def test_dim_mismatch(fn):
    with pytest.raises(UsageError):
        fn([1, 2], [1, 2, 3])


def test_matvec_mismatch():
    with pytest.raises(UsageError):
        matvec(np.ones((2, 3)), [1, 2])


@given(st.integers(1, 8).flatmap(lambda d: st.tuples(arrays(np.float64, d, elements=finite),
                                                     arrays(np.float64, d, elements=finite))))
def test_sq_dist_properties(ab):
    a, b = ab
    assert sq_dist(a, b) == dot(a - b, a - b)
    assert sq_dist(a, b) == sq_dist(b, a)
    assert sq_dist(a, b) >= 0


def test_pairwise_matches_sq_dist():
    x = Rng(3).gaussian((6, 4))
    d = pairwise_sq_dists(x)
    for i in range(6):
        for j in range(6):
            assert d[i, j] == sq_dist(x[i], x[j])
    assert np.all(np.diag(d) == 0)


def test_rng_determinism():
    assert np.array_equal(Rng(7).uniform(100), Rng(7).uniform(100))
    assert np.array_equal(Rng(7).gaussian(50), Rng(7).gaussian(50))
    assert not np.array_equal(Rng(7).uniform(10), Rng(8).uniform(10))
    assert not np.array_equal(Rng(7, 1).uniform(10), Rng(7, 2).uniform(10))
    u = Rng(0).uniform(1000)
    assert u.min() >= 0 and u.max() < 1


def test_rng_shuffle_is_permutation():
    out = Rng(1).shuffle(range(20))
    assert sorted(out) == list(range(20))
    assert out == Rng(1).shuffle(range(20))


def test_weighted_choice_degenerate():
    r = Rng(0)
    assert all(r.choice_weighted([1, 0, 0]) == 0 for _ in range(1000))
    assert set(r.choice_weighted_many([0, 0, 2, 0], 1000).tolist()) == {2}


def test_weighted_choice_fair_coin():
    draws = Rng(11).choice_weighted_many([1, 1], 100_000)
    assert abs(np.mean(draws == 0) - 0.5) < 0.01


def test_weighted_choice_chi_square():
    w = np.array([0.1, 0.4, 0.2, 0.3])
    draws = Rng(5).choice_weighted_many(w, 100_000)
    counts = np.bincount(draws, minlength=4)
    assert stats.chisquare(counts, w * 100_000).pvalue > 0.001


@pytest.mark.parametrize("w", [[0, 0], [-1, 2], [np.nan, 1], []])
def test_weighted_choice_rejects(w):
    with pytest.raises(UsageError):
        Rng(0).choice_weighted(w)
