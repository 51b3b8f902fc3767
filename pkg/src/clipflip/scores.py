"""Profiled nuisance estimation and clusterwise score contributions.

For outcome ``l`` with working weights ``W`` (symmetric root ``R``) the
score contribution of cluster ``j`` is the inner product of the ``j``-th
blocks of ``(I - H) R x`` and ``R (y - mu_hat)``, where ``H`` projects onto
the whitened nuisance design ``R Z``. ``H`` is applied through a Cholesky
factorization of ``Z' W Z`` and never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import ClusteredDataset, HypothesisSpec
from .errors import DegenerateScore, SingularNuisance
from .weights import WorkingWeights

COND_MAX = 1e12
# A score column whose contributions are all below ZERO_RTOL times the
# Cauchy-Schwarz bound |W^1/2 x| |W^1/2 (y - x beta0)| is rounding noise of an
# exact zero (perfect null fit, n <= q, ...) and is stored as exactly zero.
ZERO_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class ScoreDecomposition:
    """Clusterwise contributions ``zeta`` (``N x |L|``) and derived statistics.

    ``S = zeta.sum(0) / sqrt(n)`` and ``sigma_hat**2 = (zeta**2).sum(0) / n``.
    """

    zeta: np.ndarray
    S: np.ndarray
    sigma_hat: np.ndarray
    gamma_hat: tuple[np.ndarray, ...]
    mu_hat: tuple[np.ndarray, ...]
    n: int
    outcomes: tuple[int, ...]

    @property
    def N(self) -> int:
        return self.zeta.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        return ~(self.sigma_hat > 0)


def _whiten(dataset: ClusteredDataset, roots, cols: np.ndarray) -> np.ndarray:
    out = np.empty_like(cols)
    for j, r in enumerate(roots):
        s = dataset.block(j)
        out[s] = r @ cols[s]
    return out


def _factor(G: np.ndarray, label: str):
    evals = np.linalg.eigvalsh(G)
    cond = evals[-1] / evals[0] if evals[0] > 0 else np.inf
    if not cond <= COND_MAX:
        raise SingularNuisance(
            f"outcome {label!r}: Z'WZ is singular or ill-conditioned "
            f"(condition estimate {cond:.3g} > {COND_MAX:.0e})"
        )
    return cho_factor(G, lower=True)


class _Whitened:
    """Whitened design for one outcome, cached across outcomes sharing it."""

    def __init__(self, dataset, weights, l):
        x, Z = dataset.x[l], dataset.Z[l]
        label = dataset.outcome_labels[l]
        if weights.is_identity:
            self.roots = None
            self.xt, self.Zt = x, Z
        else:
            self.roots = weights.roots(l)
            XZ = _whiten(dataset, self.roots, np.column_stack([x, Z]))
            self.xt, self.Zt = XZ[:, 0], XZ[:, 1:]
        q = Z.shape[1]
        if q:
            self.chol = _factor(self.Zt.T @ self.Zt, label)
            # (I - H) R x
            self.a = self.xt - self.Zt @ cho_solve(self.chol, self.Zt.T @ self.xt)
        else:
            self.chol = None
            self.a = np.array(self.xt, dtype=float)

    def whiten(self, dataset, v):
        return v if self.roots is None else _whiten(dataset, self.roots, v[:, None])[:, 0]


def _whitened(dataset, weights, l, cache):
    key = (id(dataset.x[l]), id(dataset.Z[l]),
           None if weights.is_identity else id(weights.roots(l)))
    if key not in cache:
        cache[key] = _Whitened(dataset, weights, l)
    return cache[key]


def profile_nuisance(dataset: ClusteredDataset, weights: WorkingWeights,
                     hypothesis: HypothesisSpec, l: int, _cache=None) -> np.ndarray:
    """Null-constrained GLS estimate of the nuisance coefficients for outcome ``l``."""
    wz = _whitened(dataset, weights, l, {} if _cache is None else _cache)
    if wz.chol is None:
        return np.zeros(0)
    y0 = dataset.y[l] - dataset.x[l] * hypothesis.null_value(l)
    return cho_solve(wz.chol, wz.Zt.T @ wz.whiten(dataset, y0))


def cluster_scores(dataset: ClusteredDataset, weights: WorkingWeights,
                   hypothesis: HypothesisSpec, strict: bool = False) -> ScoreDecomposition:
    """Score contributions for every tested outcome.

    With ``strict=True`` an outcome whose contributions are all zero raises
    :class:`DegenerateScore` (studentization would be impossible).
    """
    hypothesis.check(dataset)
    cache: dict = {}
    starts = dataset.offsets[:-1]
    zeta = np.empty((dataset.N, len(hypothesis.outcomes)))
    gammas, mus = [], []
    for k, l in enumerate(hypothesis.outcomes):
        wz = _whitened(dataset, weights, l, cache)
        gamma = profile_nuisance(dataset, weights, hypothesis, l, cache)
        mu = dataset.x[l] * hypothesis.null_value(l) + dataset.Z[l] @ gamma
        r = wz.whiten(dataset, dataset.y[l] - mu)
        col = np.add.reduceat(wz.a * r, starts)
        y0 = dataset.y[l] - dataset.x[l] * hypothesis.null_value(l)
        bound = np.linalg.norm(wz.whiten(dataset, dataset.x[l])) * \
            np.linalg.norm(wz.whiten(dataset, y0))
        zeta[:, k] = 0.0 if np.max(np.abs(col)) <= ZERO_RTOL * bound else col
        gammas.append(gamma)
        mus.append(mu)
    n = dataset.n
    S = zeta.sum(axis=0) / np.sqrt(n)
    sigma = np.sqrt((zeta**2).sum(axis=0) / n)
    dec = ScoreDecomposition(zeta, S, sigma, tuple(gammas), tuple(mus), n,
                             hypothesis.outcomes)
    if strict:
        _require_scale(dec, dataset.outcome_labels)
    return dec


def _require_scale(dec: ScoreDecomposition, labels=None) -> None:
    bad = np.flatnonzero(dec.degenerate)
    if bad.size:
        names = [labels[dec.outcomes[k]] if labels else dec.outcomes[k] for k in bad]
        raise DegenerateScore(
            f"all clusterwise score contributions are zero for outcome(s) {names}"
        )


def studentize(dec: ScoreDecomposition) -> np.ndarray:
    """Observed scores divided by their empirical scale ``sigma_hat``."""
    _require_scale(dec)
    return dec.S / dec.sigma_hat


def profiled_score(dataset: ClusteredDataset, weights: WorkingWeights,
                   hypothesis: HypothesisSpec, l: int) -> float:
    """``x' W (y - mu_hat)`` computed blockwise with the full weight matrices."""
    gamma = profile_nuisance(dataset, weights, hypothesis, l)
    mu = dataset.x[l] * hypothesis.null_value(l) + dataset.Z[l] @ gamma
    resid = dataset.y[l] - mu
    if weights.is_identity:
        return float(dataset.x[l] @ resid)
    Ws = weights.blocks(l)
    return float(sum(dataset.x[l][dataset.block(j)] @ Ws[j] @ resid[dataset.block(j)]
                     for j in range(dataset.N)))
