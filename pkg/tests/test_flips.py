import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipflip.data import HypothesisSpec
from clipflip.errors import EnumerationTooLarge, InvalidB, InvalidHypothesis
from clipflip.flips import directional_p, flip_scores, generate_flips, p_value
from clipflip.scores import ScoreDecomposition, cluster_scores
from clipflip.weights import identity_weights

import oracles
from conftest import make_dataset


def decomposition(zeta, n):
    zeta = np.atleast_2d(np.asarray(zeta, float))
    if zeta.shape[0] == 1:
        zeta = zeta.T
    return ScoreDecomposition(zeta, zeta.sum(0) / np.sqrt(n),
                              np.sqrt((zeta**2).sum(0) / n), (), (), n,
                              tuple(range(zeta.shape[1])))


def test_single_row_plan():
    plan = generate_flips(3, B=1, seed=0)
    np.testing.assert_array_equal(plan.signs, [[1, 1, 1]])


def test_exhaustive_order_two_clusters():
    plan = generate_flips(2, mode="exhaustive")
    np.testing.assert_array_equal(plan.signs, [[1, 1], [1, -1], [-1, 1], [-1, -1]])


def test_exhaustive_matches_oracle_order():
    plan = generate_flips(5, mode="exhaustive")
    np.testing.assert_array_equal(plan.signs, np.array(oracles.all_sign_vectors(5)))


def test_deterministic_and_seed_sensitive():
    a = generate_flips(7, B=200, seed=3)
    b = generate_flips(7, B=200, seed=3)
    c = generate_flips(7, B=200, seed=4)
    d = generate_flips(7, B=200, seed=3, replicate=1)
    np.testing.assert_array_equal(a.signs, b.signs)
    assert not np.array_equal(a.signs, c.signs)
    assert not np.array_equal(a.signs, d.signs)
    np.testing.assert_array_equal(a.signs[0], 1)
    assert set(np.unique(a.signs[1:])) == {-1, 1}


def test_prefix_stable_across_B():
    small = generate_flips(6, B=50, seed=9)
    big = generate_flips(6, B=500, seed=9)
    np.testing.assert_array_equal(small.signs, big.signs[:50])


def test_rademacher_balance():
    s = generate_flips(40, B=5001, seed=1).signs[1:].astype(float)
    assert abs(s.mean()) < 0.01
    c = np.corrcoef(s, rowvar=False)
    assert np.max(np.abs(c - np.eye(40))) < 0.06


def test_enumeration_cap():
    with pytest.raises(EnumerationTooLarge, match="25"):
        generate_flips(25, mode="exhaustive")
    assert generate_flips(20, mode="exhaustive").B == 2**20


def test_invalid_B_and_mode():
    for B in (0, -3, 2.5):
        with pytest.raises(InvalidB):
            generate_flips(3, B=B)
    with pytest.raises(InvalidB):
        generate_flips(3, mode="bootstrap")


def test_all_negative_row_negates_observed():
    zeta = np.array([[1.0, 2.0], [-0.5, 0.3], [2.0, -1.0]])
    dec = decomposition(zeta, 9)
    plan = generate_flips(3, mode="exhaustive")
    fs = flip_scores(dec, plan, studentized=False)
    np.testing.assert_allclose(fs.M[-1], -fs.M[0], rtol=1e-14)


def test_single_outcome_studentized_is_scaled_raw():
    dec = decomposition([1.0, -2.0, 0.5, 3.0], 10)
    plan = generate_flips(4, B=64, seed=2)
    raw = flip_scores(dec, plan, studentized=False).M
    stud = flip_scores(dec, plan, studentized=True).M
    np.testing.assert_allclose(stud, raw / dec.sigma_hat, rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("studentized", [False, True])
def test_flip_matrix_vs_direct_sums(seed, studentized):
    ds = make_dataset(seed, N=5, nj=(1, 4), M=3, q=2)
    dec = cluster_scores(ds, identity_weights(ds), HypothesisSpec.all_outcomes(ds))
    fs = flip_scores(dec, generate_flips(5, mode="exhaustive"), studentized)
    cols = [list(dec.zeta[:, k]) for k in range(3)]
    oracle = np.array(oracles.flip_matrix(cols, ds.n, studentized))
    np.testing.assert_allclose(fs.M, oracle, rtol=1e-10, atol=1e-12 * np.abs(oracle).max())


def test_p_value_all_ties():
    assert p_value(np.full(100, 2.5)) == 1.0


def test_p_value_strict_maximum():
    T = np.concatenate([[10.0], np.linspace(-1, 1, 999)])
    assert p_value(T) == pytest.approx(0.001)


def test_p_value_small_enumeration():
    # N = 3, zeta = (1, 2, 4): |S| is distinct for all pairs +-s, so exactly
    # the identity and its negation reach the observed value
    dec = decomposition([1.0, 2.0, 4.0], 3)
    M = flip_scores(dec, generate_flips(3, mode="exhaustive"), False).M[:, 0]
    assert directional_p(M, "two-sided") == pytest.approx(2 / 8)
    assert directional_p(M, "greater") == pytest.approx(1 / 8)
    assert directional_p(M, "less") == pytest.approx(1.0)


def test_unknown_alternative():
    with pytest.raises(InvalidHypothesis):
        directional_p([1.0, 0.0], "both")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_directional_symmetry(z):
    dec = decomposition(z, len(z) + 3)
    if dec.sigma_hat[0] == 0:
        return
    neg = decomposition([-v for v in z], len(z) + 3)
    plan = generate_flips(len(z), mode="exhaustive")
    a = flip_scores(dec, plan, False).M[:, 0]
    b = flip_scores(neg, plan, False).M[:, 0]
    assert directional_p(a, "greater") == directional_p(b, "less")
    assert directional_p(a, "two-sided") == directional_p(b, "two-sided")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_p_values_bounded_and_match_brute_count(z):
    dec = decomposition(z, len(z))
    plan = generate_flips(len(z), mode="exhaustive")
    col = flip_scores(dec, plan, False).M[:, 0]
    for alt in ("greater", "less", "two-sided"):
        p = directional_p(col, alt)
        assert 1 / len(col) <= p <= 1.0
    assert directional_p(col, "two-sided") == pytest.approx(oracles.brute_two_sided(list(col)))


@pytest.mark.parametrize("zeta", [[1.0, 2.0, 4.0, 8.0], [0.3, -1.1, 2.7, 0.9],
                                  [5.0, -4.0, 1.5, 0.25]])
def test_two_sided_relation_under_enumeration(zeta):
    # with the full sign group the flip distribution is symmetric, so the
    # two-sided p equals twice the smaller one-sided p
    dec = decomposition(zeta, 4)
    col = flip_scores(dec, generate_flips(4, mode="exhaustive"), False).M[:, 0]
    pg, pl = directional_p(col, "greater"), directional_p(col, "less")
    two = directional_p(col, "two-sided")
    assert two == pytest.approx(min(1.0, 2 * min(pg, pl)))


def test_row_covariance_converges_to_zeta_gram():
    rng = np.random.default_rng(0)
    zeta = rng.standard_normal((30, 3))
    n = 90
    dec = decomposition(zeta, n)
    fs = flip_scores(dec, generate_flips(30, B=20001, seed=5), studentized=False)
    target = zeta.T @ zeta / n
    assert np.max(np.abs(fs.empirical_row_cov - target)) < 0.05 * np.abs(target).max()


def test_exhaustive_row_covariance_is_exact():
    rng = np.random.default_rng(1)
    zeta = rng.standard_normal((6, 2))
    dec = decomposition(zeta, 12)
    fs = flip_scores(dec, generate_flips(6, mode="exhaustive"), studentized=False)
    full = fs.M.T @ fs.M / fs.M.shape[0]
    np.testing.assert_allclose(full, zeta.T @ zeta / 12, rtol=1e-12)
