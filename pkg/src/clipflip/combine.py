"""Global combining of flip scores and multiplicity adjustment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownCombiner
from .flips import TIE_RTOL, FlipScores, directional_p, p_value

COMBINERS = ("max_abs", "sum_abs")
_ALIASES = {"maxT": "max_abs", "maxt": "max_abs", "sumabs": "sum_abs"}


def combiner_name(psi: str) -> str:
    name = _ALIASES.get(psi, psi)
    if name not in COMBINERS:
        raise UnknownCombiner(f"unknown combining function {psi!r}; use one of {COMBINERS}")
    return name


@dataclass(frozen=True, eq=False)
class CombinedTest:
    psi_name: str
    T: np.ndarray
    global_p: float
    adjusted_p: np.ndarray
    raw_p: np.ndarray


def _matrix(M) -> np.ndarray:
    M = M.M if isinstance(M, FlipScores) else M
    return np.atleast_2d(np.asarray(M, dtype=float))


def combine(M: FlipScores | np.ndarray, psi_name: str = "max_abs") -> np.ndarray:
    """Per-flip global statistic ``psi(|M[b, :]|)``."""
    A = np.abs(_matrix(M))
    name = combiner_name(psi_name)
    return A.max(axis=1) if name == "max_abs" else A.sum(axis=1)


def maxT_adjusted(M: FlipScores | np.ndarray) -> np.ndarray:
    """Single-step max-T adjusted p-values, one per column."""
    A = np.abs(_matrix(M))
    maxima = A.max(axis=1)
    tol = TIE_RTOL * (maxima.max() if maxima.size else 0.0)
    return np.count_nonzero(maxima[:, None] >= A[0][None, :] - tol, axis=0) / A.shape[0]


def holm(p, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Holm step-down adjusted p-values and rejection flags at ``alpha``."""
    p = np.asarray(p, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    stepped = np.minimum(1.0, np.maximum.accumulate((m - np.arange(m)) * p[order]))
    adj = np.empty(m)
    adj[order] = stepped
    return adj, adj <= alpha


def combined_test(M: FlipScores | np.ndarray, psi_name: str = "max_abs") -> CombinedTest:
    """Global p-value, per-column two-sided raw p and max-T adjusted p."""
    A = _matrix(M)
    T = combine(A, psi_name)
    raw = np.array([directional_p(A[:, k], "two-sided") for k in range(A.shape[1])])
    return CombinedTest(combiner_name(psi_name), T, p_value(T), maxT_adjusted(A), raw)
