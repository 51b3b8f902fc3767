import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from clipflip.baselines import (
    baseline_test,
    cluster_meat,
    cluster_sandwich_test,
    hc3_test,
    hc_meat,
    leverages,
    ols_test,
    sandwich_var,
)
from clipflip.data import ClusteredDataset, HypothesisSpec
from clipflip.errors import DegenerateFit, LeverageOne, UnknownMethod

from conftest import make_dataset

H0 = HypothesisSpec((0,), (0.0,))


def ds_from(y, x, Z, sizes):
    return ClusteredDataset.from_arrays(np.asarray(y, float), np.asarray(x, float), Z, sizes)


def test_perfect_fit_raises():
    x = np.arange(8.0)
    ds = ds_from(1 + 2 * x, x, np.ones(8), [4, 4])
    with pytest.raises(DegenerateFit):
        ols_test(ds, 0, H0)


def test_orthogonal_design_closed_form():
    x = np.array([1.0, -1.0, 2.0, -2.0, 0.5, -0.5])
    y = np.array([3.0, 1.0, 2.0, -1.0, 0.0, 4.0])
    ds = ds_from(y, x, None, [2, 2, 2])
    fit = ols_test(ds, 0, H0)
    assert fit.beta_hat == pytest.approx(x @ y / (x @ x), rel=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_ols_vs_normal_equations(seed):
    ds = make_dataset(seed, N=8, nj=(3, 6), q=3)
    X = np.column_stack([ds.x[0], ds.Z[0]])
    y = ds.y[0]
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    e = y - X @ beta
    df = len(y) - X.shape[1]
    se = np.sqrt(e @ e / df * np.linalg.inv(X.T @ X)[0, 0])
    fit = ols_test(ds, 0, H0)
    assert fit.beta_hat == pytest.approx(beta[0], rel=1e-10)
    assert fit.se == pytest.approx(se, rel=1e-10)
    assert fit.p == pytest.approx(2 * stats.t(df).sf(abs(beta[0] / se)), rel=1e-10)
    assert fit.df_policy == f"t(n-p={df})"


def test_hc3_close_to_ols_under_homoskedasticity():
    rng = np.random.default_rng(0)
    n = 500
    x = rng.standard_normal(n)
    ds = ds_from(rng.standard_normal(n), x, np.ones(n), [5] * 100)
    a, b = ols_test(ds, 0, H0), hc3_test(ds, 0, H0)
    assert abs(b.se / a.se - 1) < 0.15
    assert a.beta_hat == b.beta_hat


def test_leverage_one_raises():
    x = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    ds = ds_from(y, x, np.ones(5), [2, 3])
    with pytest.raises(LeverageOne):
        hc3_test(ds, 0, H0)


@pytest.mark.parametrize("seed", range(4))
def test_hc3_elementwise_oracle(seed):
    ds = make_dataset(seed, N=6, nj=(2, 5), q=2)
    X = np.column_stack([ds.x[0], ds.Z[0]])
    y = ds.y[0]
    A = np.linalg.inv(X.T @ X)
    e = y - X @ (A @ X.T @ y)
    meat = np.zeros((X.shape[1],) * 2)
    for i in range(len(y)):
        hi = X[i] @ A @ X[i]
        meat += np.outer(X[i], X[i]) * (e[i] / (1 - hi)) ** 2
    V = A @ meat @ A
    assert hc3_test(ds, 0, H0).se == pytest.approx(np.sqrt(V[0, 0]), rel=1e-10)


def test_singleton_clusters_reduce_to_hc0():
    ds = make_dataset(5, N=12, nj=(1, 1), q=2)
    X = np.column_stack([ds.x[0], ds.Z[0]])
    A = np.linalg.inv(X.T @ X)
    e = ds.y[0] - X @ (A @ X.T @ ds.y[0])
    V0 = sandwich_var(X, A, hc_meat(X, e))
    assert cluster_sandwich_test(ds, 0, H0).se == pytest.approx(np.sqrt(V0[0, 0]), rel=1e-12)


@pytest.mark.parametrize("k", [2, 3, 5])
def test_duplicated_clusters_shrink_se(k):
    base = make_dataset(6, N=6, nj=(2, 4), q=2)
    n = base.n
    rep = ClusteredDataset.from_arrays(np.tile(base.y[0], k), np.tile(base.x[0], k),
                                       np.tile(base.Z[0], (k, 1)), np.tile(base.sizes, k))
    a, b = cluster_sandwich_test(base, 0, H0), cluster_sandwich_test(rep, 0, H0)
    assert b.beta_hat == pytest.approx(a.beta_hat, rel=1e-10)
    assert b.se == pytest.approx(a.se / np.sqrt(k), rel=1e-10)
    assert rep.n == k * n


@pytest.mark.parametrize("seed", range(3))
def test_cluster_sandwich_blockwise_oracle(seed):
    ds = make_dataset(seed, N=7, nj=(2, 5), q=2)
    X = np.column_stack([ds.x[0], ds.Z[0]])
    A = np.linalg.inv(X.T @ X)
    e = ds.y[0] - X @ (A @ X.T @ ds.y[0])
    meat = np.zeros((3, 3))
    for j in range(ds.N):
        s = X[ds.block(j)].T @ e[ds.block(j)]
        meat += np.outer(s, s)
    np.testing.assert_allclose(cluster_meat(X, e, ds.offsets), meat, rtol=1e-12, atol=1e-14)
    fit = cluster_sandwich_test(ds, 0, H0)
    se = np.sqrt((A @ meat @ A)[0, 0])
    assert fit.se == pytest.approx(se, rel=1e-10)
    assert fit.p == pytest.approx(2 * stats.norm.sf(abs(fit.beta_hat / se)), rel=1e-10)
    assert fit.df_policy == "normal"


def test_all_methods_share_point_estimate(small_ds):
    fits = [baseline_test(m, small_ds, 1, HypothesisSpec((1,), (0.0,)))
            for m in ("ols", "hc3", "cluster_sandwich")]
    assert len({round(f.beta_hat, 12) for f in fits}) == 1


def test_unknown_method(small_ds):
    with pytest.raises(UnknownMethod):
        baseline_test("wild", small_ds, 0, H0)


@pytest.mark.parametrize("seed", range(5))
def test_hc3_at_least_hc0(seed):
    ds = make_dataset(seed, N=6, nj=(2, 4), q=2)
    X = np.column_stack([ds.x[0], ds.Z[0]])
    A = np.linalg.inv(X.T @ X)
    e = ds.y[0] - X @ (A @ X.T @ ds.y[0])
    h = leverages(X, A)
    V0 = sandwich_var(X, A, hc_meat(X, e))
    V3 = sandwich_var(X, A, hc_meat(X, e, h))
    assert V3[0, 0] >= V0[0, 0]


def test_one_sided_p_values():
    ds = make_dataset(7, N=10, nj=(3, 5), q=1)
    f2 = ols_test(ds, 0, H0)
    fg = ols_test(ds, 0, HypothesisSpec((0,), (0.0,), "greater"))
    fl = ols_test(ds, 0, HypothesisSpec((0,), (0.0,), "less"))
    assert fg.p + fl.p == pytest.approx(1.0)
    assert f2.p == pytest.approx(2 * min(fg.p, fl.p))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_affine_equivariance(seed, a, b, c):
    ds = make_dataset(seed, N=6, nj=(2, 4), q=2)
    y2 = a * ds.y[0] + b * ds.x[0] + c
    ds2 = ClusteredDataset.from_arrays(y2, ds.x[0], ds.Z[0], ds.sizes)
    for m in ("ols", "hc3", "cluster_sandwich"):
        f1 = baseline_test(m, ds, 0, H0)
        f2 = baseline_test(m, ds2, 0, H0)
        assert f2.beta_hat == pytest.approx(a * f1.beta_hat + b, rel=1e-8, abs=1e-8)
        assert f2.se == pytest.approx(a * f1.se, rel=1e-8)
