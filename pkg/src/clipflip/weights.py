"""Working weight matrices approximating inverse within-cluster covariances.

Every construction path yields, per tested outcome and cluster, an SPD
matrix ``W`` together with its unique symmetric PSD square root ``R``
(``R @ R == W``). The symmetric root is used rather than a Cholesky factor
because the clusterwise score split depends on the factorization.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import ClusteredDataset, HypothesisSpec
from .errors import (
    DegenerateResiduals,
    NonPositiveVariance,
    NotPositiveDefinite,
    NotSymmetric,
    ShapeMismatch,
    SingularNuisance,
)

PROVENANCES = ("identity", "diagonal", "random_intercept", "user_supplied")

SYM_RTOL = 1e-10
PD_RTOL = 1e-10
ROOT_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class WorkingWeights:
    """Blocks ``W[l][j]`` and roots ``R[l][j]`` keyed by outcome index."""

    W: Mapping[int, tuple[np.ndarray, ...]]
    R: Mapping[int, tuple[np.ndarray, ...]]
    provenance: str
    estimated_components: Mapping[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def outcomes(self) -> tuple[int, ...]:
        return tuple(self.W)

    @property
    def is_identity(self) -> bool:
        return self.provenance == "identity"

    def blocks(self, l: int) -> tuple[np.ndarray, ...]:
        try:
            return self.W[l]
        except KeyError:
            raise ShapeMismatch(f"no working weights for outcome index {l}") from None

    def roots(self, l: int) -> tuple[np.ndarray, ...]:
        try:
            return self.R[l]
        except KeyError:
            raise ShapeMismatch(f"no working weights for outcome index {l}") from None

    def scaled(self, kappa: float) -> WorkingWeights:
        """Weights multiplied by ``kappa > 0`` (roots by ``sqrt(kappa)``)."""
        rk = np.sqrt(kappa)
        return WorkingWeights(
            {l: tuple(kappa * w for w in ws) for l, ws in self.W.items()},
            {l: tuple(rk * r for r in rs) for l, rs in self.R.items()},
            "user_supplied" if self.is_identity else self.provenance,
            dict(self.estimated_components),
        )

    def validate(self, dataset: ClusteredDataset | None = None) -> None:
        for l in self.W:
            for j, (w, r) in enumerate(zip(self.W[l], self.R[l])):
                if dataset is not None and w.shape != (dataset.sizes[j],) * 2:
                    raise ShapeMismatch(
                        f"outcome {l}, cluster {j}: block shape {w.shape}, "
                        f"expected {(int(dataset.sizes[j]),) * 2}"
                    )
                _check_spd(w, f"outcome {l}, cluster {j}")
                err = np.linalg.norm(r @ r - w)
                if err > ROOT_RTOL * max(np.linalg.norm(w), 1.0):
                    raise NotPositiveDefinite(
                        f"outcome {l}, cluster {j}: square root residual {err:.3g}"
                    )


def _check_spd(w: np.ndarray, where: str) -> np.ndarray:
    """Validate symmetry and positive definiteness; return eigenvalues."""
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeMismatch(f"{where}: weight block must be square, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise NotPositiveDefinite(f"{where}: non-finite entries")
    scale = max(np.max(np.abs(w)), np.finfo(float).tiny)
    if np.max(np.abs(w - w.T)) > SYM_RTOL * scale:
        raise NotSymmetric(f"{where}: matrix is not symmetric")
    evals = np.linalg.eigvalsh(w)
    if evals[0] <= PD_RTOL * max(evals[-1], 0.0) or evals[-1] <= 0:
        raise NotPositiveDefinite(
            f"{where}: smallest eigenvalue {evals[0]:.3g} vs largest {evals[-1]:.3g}"
        )
    return evals


def spd_sqrt(w: np.ndarray, where: str = "block") -> np.ndarray:
    """Unique symmetric PSD square root via eigendecomposition."""
    _check_spd(w, where)
    w = 0.5 * (w + w.T)
    evals, vecs = np.linalg.eigh(w)
    return (vecs * np.sqrt(evals)) @ vecs.T


def spd_inverse_pair(cov: np.ndarray, where: str = "block") -> tuple[np.ndarray, np.ndarray]:
    """``(cov^{-1}, cov^{-1/2})`` for an SPD covariance block."""
    _check_spd(cov, where)
    cov = 0.5 * (cov + cov.T)
    evals, vecs = np.linalg.eigh(cov)
    w = (vecs / evals) @ vecs.T
    r = (vecs / np.sqrt(evals)) @ vecs.T
    return 0.5 * (w + w.T), 0.5 * (r + r.T)


def _outcomes(dataset: ClusteredDataset, outcomes) -> tuple[int, ...]:
    return tuple(range(dataset.M)) if outcomes is None else tuple(outcomes)


def identity_weights(dataset: ClusteredDataset, outcomes: Sequence[int] | None = None
                     ) -> WorkingWeights:
    eyes = tuple(np.eye(int(nj)) for nj in dataset.sizes)
    ls = _outcomes(dataset, outcomes)
    return WorkingWeights({l: eyes for l in ls}, {l: eyes for l in ls}, "identity")


def diagonal_weights(dataset: ClusteredDataset, variances,
                     outcomes: Sequence[int] | None = None) -> WorkingWeights:
    """Inverse-variance diagonal weights.

    ``variances`` is a length-``n`` vector shared by all outcomes, or an
    ``n x M`` array with one column per outcome.
    """
    v = np.asarray(variances, dtype=float)
    if v.shape[0] != dataset.n or v.ndim > 2:
        raise ShapeMismatch(f"variances must have {dataset.n} rows, got {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise NonPositiveVariance("variance estimates must be finite and strictly positive")
    W, R = {}, {}
    for l in _outcomes(dataset, outcomes):
        col = v if v.ndim == 1 else v[:, l]
        W[l] = tuple(np.diag(1.0 / col[dataset.block(j)]) for j in range(dataset.N))
        R[l] = tuple(np.diag(1.0 / np.sqrt(col[dataset.block(j)])) for j in range(dataset.N))
    return WorkingWeights(W, R, "diagonal")


def moment_components(resid: np.ndarray, sizes: np.ndarray) -> tuple[float, float]:
    """One-way ANOVA moment estimates ``(sigma_b^2, sigma_eps^2)``.

    Within: pooled residual variance around cluster means on ``n - N`` df.
    Between: ``(MSB - MSW) / n0`` with the unbalanced-design size
    ``n0 = (n - sum(n_j^2) / n) / (N - 1)``, truncated at zero.
    """
    sizes = np.asarray(sizes)
    N, n = len(sizes), int(sizes.sum())
    idx = np.repeat(np.arange(N), sizes)
    means = np.bincount(idx, weights=resid, minlength=N) / sizes
    ssw = float(np.sum((resid - means[idx]) ** 2))
    if n - N <= 0:
        raise DegenerateResiduals("no within-cluster replication (all n_j = 1)")
    msw = ssw / (n - N)
    if not msw > 0:
        raise DegenerateResiduals("within-cluster residual variance is zero")
    grand = resid.mean()
    msb = float(np.sum(sizes * (means - grand) ** 2)) / (N - 1)
    n0 = (n - np.sum(sizes.astype(float) ** 2) / n) / (N - 1)
    sb2 = max(0.0, (msb - msw) / n0)
    return sb2, msw


def random_intercept_block(nj: int, sb2: float, se2: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form inverse and inverse root of ``se2*I + sb2*11'``."""
    ones = np.ones((nj, nj))
    c = sb2 / (se2 + nj * sb2)
    w = (np.eye(nj) - c * ones) / se2
    # eigenvalue 1/(se2 + nj*sb2) on the ones direction, 1/se2 elsewhere
    d = (np.sqrt(se2 / (se2 + nj * sb2)) - 1.0) / nj
    r = (np.eye(nj) + d * ones) / np.sqrt(se2)
    return w, r


def random_intercept_weights(dataset: ClusteredDataset, hypothesis: HypothesisSpec
                             ) -> WorkingWeights:
    """Random-intercept weights from moments of null-model OLS residuals.

    For each tested outcome the offset ``x * beta0`` is removed, the
    remainder regressed on the nuisance design by OLS, and the residuals fed
    to :func:`moment_components`.
    """
    hypothesis.check(dataset)
    W, R, comps = {}, {}, {}
    for l in hypothesis.outcomes:
        y0 = dataset.y[l] - dataset.x[l] * hypothesis.null_value(l)
        Z = dataset.Z[l]
        if Z.shape[1]:
            if np.linalg.matrix_rank(Z) < Z.shape[1]:
                raise SingularNuisance(
                    f"outcome {dataset.outcome_labels[l]!r}: nuisance design is rank deficient"
                )
            coef, *_ = np.linalg.lstsq(Z, y0, rcond=None)
            resid = y0 - Z @ coef
        else:
            resid = y0
        try:
            sb2, se2 = moment_components(resid, dataset.sizes)
        except DegenerateResiduals as e:
            raise DegenerateResiduals(f"outcome {dataset.outcome_labels[l]!r}: {e.args[0]}") from None
        pairs = [random_intercept_block(int(nj), sb2, se2) for nj in dataset.sizes]
        W[l] = tuple(p[0] for p in pairs)
        R[l] = tuple(p[1] for p in pairs)
        comps[l] = (sb2, se2)
    return WorkingWeights(W, R, "random_intercept", comps)


def _per_outcome(matrices, dataset: ClusteredDataset, outcomes) -> dict[int, Sequence[np.ndarray]]:
    """Normalize user input to ``{l: [block_j]}``.

    A flat sequence of ``N`` blocks is reused for every outcome.
    """
    ls = _outcomes(dataset, outcomes)
    if isinstance(matrices, Mapping):
        missing = [l for l in ls if l not in matrices]
        if missing:
            raise ShapeMismatch(f"no matrices supplied for outcome indices {missing}")
        return {l: matrices[l] for l in ls}
    return {l: matrices for l in ls}


def user_weights(dataset: ClusteredDataset, matrices, outcomes: Sequence[int] | None = None,
                 covariance: bool = False) -> WorkingWeights:
    """Validate user-supplied blocks.

    With ``covariance=True`` the blocks are covariance matrices and the
    weights are their inverses.
    """
    per = _per_outcome(matrices, dataset, outcomes)
    W, R = {}, {}
    shared: dict[int, tuple] = {}
    for l, blocks in per.items():
        if id(blocks) in shared:
            W[l], R[l] = shared[id(blocks)]
            continue
        if len(blocks) != dataset.N:
            raise ShapeMismatch(
                f"outcome {l}: got {len(blocks)} blocks for {dataset.N} clusters"
            )
        ws, rs = [], []
        for j, m in enumerate(blocks):
            m = np.asarray(m, dtype=float)
            nj = int(dataset.sizes[j])
            if m.shape != (nj, nj):
                raise ShapeMismatch(
                    f"outcome {l}, cluster {dataset.cluster_ids[j]!r}: shape {m.shape}, "
                    f"expected {(nj, nj)}"
                )
            where = f"outcome {l}, cluster {dataset.cluster_ids[j]!r}"
            if covariance:
                w, r = spd_inverse_pair(m, where)
            else:
                w, r = 0.5 * (m + m.T), spd_sqrt(m, where)
            ws.append(w)
            rs.append(r)
        W[l], R[l] = tuple(ws), tuple(rs)
        shared[id(blocks)] = (W[l], R[l])
    return WorkingWeights(W, R, "user_supplied")


def read_weights_csv(path, dataset: ClusteredDataset, covariance: bool = False,
                     outcomes: Sequence[int] | None = None) -> WorkingWeights:
    """Read a block-descriptor CSV (cluster_id, outcome_id, row, col, value).

    Rows and columns are 0-based within the block; omitted entries are
    zero. An ``outcome_id`` of ``*`` applies the block to every outcome.
    """
    import csv

    ls = _outcomes(dataset, outcomes)
    cl_index = {c: j for j, c in enumerate(dataset.cluster_ids)}
    blocks = {l: [np.zeros((int(nj), int(nj))) for nj in dataset.sizes] for l in ls}
    seen = {l: np.zeros(dataset.N, dtype=bool) for l in ls}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"cluster_id", "outcome_id", "row", "col", "value"}
        if not need <= set(reader.fieldnames or ()):
            raise ShapeMismatch(f"{path}: weights file needs columns {sorted(need)}")
        for lineno, rec in enumerate(reader, start=2):
            cid = rec["cluster_id"]
            if cid not in cl_index:
                raise ShapeMismatch(f"{path} row {lineno}: unknown cluster {cid!r}")
            j = cl_index[cid]
            targets = ls if rec["outcome_id"] == "*" else [dataset.outcome_index(rec["outcome_id"])]
            i, k = int(rec["row"]), int(rec["col"])
            nj = int(dataset.sizes[j])
            if not (0 <= i < nj and 0 <= k < nj):
                raise ShapeMismatch(
                    f"{path} row {lineno}: index ({i}, {k}) outside {nj}x{nj} block"
                )
            for l in targets:
                if l in blocks:
                    blocks[l][j][i, k] = float(rec["value"])
                    seen[l][j] = True
    for l in ls:
        if not seen[l].all():
            miss = [dataset.cluster_ids[j] for j in np.flatnonzero(~seen[l])]
            raise ShapeMismatch(f"{path}: no entries for outcome {l}, clusters {miss}")
    return user_weights(dataset, blocks, outcomes=ls, covariance=covariance)
