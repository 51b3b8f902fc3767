"""Classical comparators on pooled rows: OLS, HC3 and a cluster sandwich.

The tested coefficient is the one on the covariate of interest in the
regression of ``y`` on ``[x, Z]``. OLS and HC3 use a ``t(n - p)``
reference; the cluster sandwich (CR0, i.e. GEE with independence working
correlation) uses the normal reference with no small-sample correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import ClusteredDataset, HypothesisSpec
from .errors import DegenerateFit, LeverageOne, RankDeficientDesign, UnknownMethod

METHODS = ("ols", "hc3", "cluster_sandwich")
LEVERAGE_TOL = 1e-12


@dataclass(frozen=True)
class FitSummary:
    beta_hat: float
    se: float
    statistic: float
    p: float
    df_policy: str
    method: str


def _design(dataset: ClusteredDataset, l: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.column_stack([dataset.x[l], dataset.Z[l]])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientDesign(
            f"outcome {dataset.outcome_labels[l]!r}: design [x, Z] is rank deficient"
        )
    return X, dataset.y[l]


def _fit(X, y):
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    return beta, XtX_inv, y - X @ beta


def _p(stat: float, alternative: str, dist) -> float:
    if alternative == "greater":
        return float(dist.sf(stat))
    if alternative == "less":
        return float(dist.cdf(stat))
    return float(min(1.0, 2.0 * dist.sf(abs(stat))))


def _summary(beta, var, beta0, alternative, dist, df_policy, method, label):
    if not var > 0:
        raise DegenerateFit(f"outcome {label!r}: {method} variance is zero")
    se = float(np.sqrt(var))
    stat = (float(beta) - beta0) / se
    return FitSummary(float(beta), se, stat, _p(stat, alternative, dist), df_policy, method)


def sandwich_var(X, XtX_inv, meat) -> np.ndarray:
    return XtX_inv @ meat @ XtX_inv


def ols_test(dataset: ClusteredDataset, l: int, hypothesis: HypothesisSpec) -> FitSummary:
    X, y = _design(dataset, l)
    n, p = X.shape
    beta, XtX_inv, e = _fit(X, y)
    df = n - p
    if df <= 0:
        raise DegenerateFit("no residual degrees of freedom")
    s2 = float(e @ e) / df
    if s2 <= np.finfo(float).eps ** 2 * max(float(y @ y), 1.0):
        raise DegenerateFit(
            f"outcome {dataset.outcome_labels[l]!r}: residual variance is zero (perfect fit)"
        )
    return _summary(beta[0], s2 * XtX_inv[0, 0], hypothesis.null_value(l),
                    hypothesis.alternative, stats.t(df), f"t(n-p={df})", "ols",
                    dataset.outcome_labels[l])


def leverages(X: np.ndarray, XtX_inv: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", X, XtX_inv, X)


def hc_meat(X, e, h=None) -> np.ndarray:
    """``X' diag(u^2) X`` with ``u = e`` (HC0) or ``e / (1 - h)`` (HC3)."""
    u = e if h is None else e / (1.0 - h)
    Xu = X * u[:, None]
    return Xu.T @ Xu


def hc3_test(dataset: ClusteredDataset, l: int, hypothesis: HypothesisSpec) -> FitSummary:
    X, y = _design(dataset, l)
    n, p = X.shape
    beta, XtX_inv, e = _fit(X, y)
    h = leverages(X, XtX_inv)
    if np.any(h >= 1.0 - LEVERAGE_TOL):
        i = int(np.argmax(h))
        raise LeverageOne(
            f"outcome {dataset.outcome_labels[l]!r}: row {i} has leverage {h[i]:.15g}"
        )
    V = sandwich_var(X, XtX_inv, hc_meat(X, e, h))
    df = n - p
    return _summary(beta[0], V[0, 0], hypothesis.null_value(l), hypothesis.alternative,
                    stats.t(df), f"t(n-p={df})", "hc3", dataset.outcome_labels[l])


def cluster_meat(X, e, offsets) -> np.ndarray:
    scores = np.add.reduceat(X * e[:, None], offsets[:-1], axis=0)
    return scores.T @ scores


def cluster_sandwich_test(dataset: ClusteredDataset, l: int,
                          hypothesis: HypothesisSpec) -> FitSummary:
    X, y = _design(dataset, l)
    beta, XtX_inv, e = _fit(X, y)
    V = sandwich_var(X, XtX_inv, cluster_meat(X, e, dataset.offsets))
    return _summary(beta[0], V[0, 0], hypothesis.null_value(l), hypothesis.alternative,
                    stats.norm, "normal", "cluster_sandwich", dataset.outcome_labels[l])


def baseline_test(method: str, dataset: ClusteredDataset, l: int,
                  hypothesis: HypothesisSpec) -> FitSummary:
    fn = {"ols": ols_test, "hc3": hc3_test, "cluster_sandwich": cluster_sandwich_test}
    if method not in fn:
        raise UnknownMethod(f"unknown baseline {method!r}; use one of {METHODS}")
    return fn[method](dataset, l, hypothesis)
