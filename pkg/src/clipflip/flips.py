"""Clusterwise sign-flip plans, flip-score matrices and resampling p-values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EnumerationTooLarge, InvalidB, InvalidHypothesis
from .scores import ScoreDecomposition, _require_scale

MODES = ("monte_carlo", "exhaustive")
MAX_EXHAUSTIVE_N = 20

# Ties are decided with a relative tolerance so that statistics that are
# equal in exact arithmetic (e.g. |S(F)| and |S(-F)|) are counted as ties
# regardless of floating-point summation order.
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class FlipPlan:
    """``B x N`` matrix of cluster signs; row 0 is the identity."""

    signs: np.ndarray
    mode: str
    seed: int | None = None
    replicate: int = 0

    @property
    def B(self) -> int:
        return self.signs.shape[0]

    @property
    def N(self) -> int:
        return self.signs.shape[1]


@dataclass(frozen=True, eq=False)
class FlipScores:
    """``M[b, k]`` is the (optionally studentized) score of outcome ``k`` under flip ``b``."""

    M: np.ndarray
    studentized: bool
    empirical_row_cov: np.ndarray | None
    outcomes: tuple[int, ...] = ()

    @property
    def observed(self) -> np.ndarray:
        return self.M[0]


def _column_bits(seed: int, replicate: int, j: int, count: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replicate, j))
    raw = np.random.Philox(ss).random_raw(count)
    return (raw >> np.uint64(63)).astype(np.int8)


def generate_flips(N: int, B: int = 1000, seed: int | None = 0,
                   mode: str = "monte_carlo", replicate: int = 0) -> FlipPlan:
    """Build a flip plan.

    ``monte_carlo``: rows 1..B-1 are i.i.d. Rademacher. The signs of cluster
    ``j`` come from a Philox stream keyed by ``(seed, replicate, j)``, so a
    plan is bit-identical across runs, platforms and worker scheduling.
    ``exhaustive``: all ``2**N`` sign vectors in binary counting order with
    the last cluster as the fastest-varying position (all ``+1`` first).
    """
    N = int(N)
    if N < 1:
        raise DimensionMismatch(f"need at least one cluster, got N={N}")
    if mode == "exhaustive":
        if N > MAX_EXHAUSTIVE_N:
            raise EnumerationTooLarge(
                f"exhaustive enumeration needs N <= {MAX_EXHAUSTIVE_N}, got N={N} "
                f"(2^{N} sign vectors)"
            )
        b = np.arange(2**N, dtype=np.int64)[:, None]
        shifts = np.arange(N - 1, -1, -1, dtype=np.int64)[None, :]
        signs = (1 - 2 * ((b >> shifts) & 1)).astype(np.int8)
        return FlipPlan(signs, mode, None, replicate)
    if mode != "monte_carlo":
        raise InvalidB(f"unknown flip mode {mode!r}; expected one of {MODES}")
    if int(B) != B or B < 1:
        raise InvalidB(f"B must be a positive integer, got {B!r}")
    if seed is None or seed < 0:
        raise InvalidB(f"monte_carlo flips need a non-negative integer seed, got {seed!r}")
    B = int(B)
    signs = np.ones((B, N), dtype=np.int8)
    if B > 1:
        for j in range(N):
            signs[1:, j] = 1 - 2 * _column_bits(int(seed), int(replicate), j, B - 1)
    return FlipPlan(signs, mode, int(seed), int(replicate))


def flip_scores(dec: ScoreDecomposition, plan: FlipPlan, studentized: bool = True
                ) -> FlipScores:
    """Flip-score matrix ``signs @ zeta / sqrt(n)``.

    One sign per (flip, cluster) multiplies the contributions of every
    outcome, so cross-outcome dependence is kept within each flip.
    """
    if plan.N != dec.N:
        raise DimensionMismatch(f"flip plan has {plan.N} clusters, scores have {dec.N}")
    M = (plan.signs.astype(float) @ dec.zeta) / np.sqrt(dec.n)
    M[0] = dec.S
    if studentized:
        _require_scale(dec)
        M /= dec.sigma_hat
    cov = np.atleast_2d(np.cov(M[1:], rowvar=False)) if plan.B >= 3 else None
    return FlipScores(M, studentized, cov, dec.outcomes)


def p_value(T) -> float:
    """Share of flips whose statistic is at least the observed ``T[0]``."""
    T = np.asarray(T, dtype=float)
    scale = np.max(np.abs(T)) if T.size else 0.0
    return float(np.count_nonzero(T >= T[0] - TIE_RTOL * scale)) / T.size


def directional_p(column, alternative: str = "two-sided") -> float:
    """Univariate p-value; ``column[0]`` is the observed score."""
    col = np.asarray(column, dtype=float)
    if alternative == "greater":
        return p_value(col)
    if alternative == "less":
        return p_value(-col)
    if alternative == "two-sided":
        return p_value(np.abs(col))
    raise InvalidHypothesis(f"unknown alternative {alternative!r}")
