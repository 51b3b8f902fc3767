"""Simulation scenarios and the Monte Carlo comparison harness.

Data follow a clustered linear model with a covariate of interest ``x``, one
nuisance covariate ``z`` (plus a fixed intercept), cluster random effects on
``(intercept, x, z)`` drawn from an equicorrelated normal, and i.i.d. errors
that may be equicorrelated across outcomes. The crossed variant adds an
item-level random intercept and maps items to outcomes.
"""

from __future__ import annotations

import dataclasses
import os
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .baselines import baseline_test
from .combine import holm
from .data import ClusteredDataset, HypothesisSpec, LongRecord
from .errors import ClipError, ConfigError, InvalidCorrelation, UnknownMethod
from .flips import generate_flips
from .report import run_clip
from .weights import (
    WorkingWeights,
    identity_weights,
    random_intercept_weights,
    user_weights,
)

KINDS = ("univariate", "multivariate", "crossed")
RE_COLUMNS = ("intercept", "x", "z")
CLIP_METHODS = ("clip_identity", "clip_random_intercept", "clip_true", "clip_user")
BASELINE_METHODS = ("ols", "hc3", "cluster_sandwich")
METHODS = CLIP_METHODS + BASELINE_METHODS
WORKERS_ENV = "CLIPFLIP_WORKERS"


@dataclass(frozen=True)
class ScenarioConfig:
    """Data-generating parameters.

    ``nj`` is a fixed cluster size or an inclusive ``(lo, hi)`` range for
    uniform integer sizes. ``re_sd`` scales the random effects on
    ``re_columns``; ``eps_sd`` is a scalar or one value per outcome.
    """

    kind: str = "univariate"
    N: int = 50
    nj: int | tuple[int, int] = (10, 30)
    M: int = 1
    beta: tuple[float, ...] = (0.0,)
    gamma: float = 2.0
    covariate_corr: float = 0.7
    re_corr: float = 0.5
    re_sd: tuple[float, ...] = (1.0, 1.0, 1.0)
    re_columns: tuple[str, ...] = RE_COLUMNS
    eps_corr: float = 0.0
    eps_sd: float | tuple[float, ...] = 1.0
    item_count: int = 10
    item_sd: float = 5.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        as_tuple = lambda v: tuple(float(x) for x in np.atleast_1d(v))  # noqa: E731
        object.__setattr__(self, "beta", as_tuple(self.beta))
        object.__setattr__(self, "re_sd", as_tuple(self.re_sd))
        object.__setattr__(self, "re_columns", tuple(self.re_columns))
        if not isinstance(self.eps_sd, (int, float)):
            object.__setattr__(self, "eps_sd", as_tuple(self.eps_sd))
        nj = self.nj
        if not isinstance(nj, int):
            nj = tuple(int(v) for v in nj)
            if len(nj) == 1:
                nj = nj[0]
            object.__setattr__(self, "nj", nj)
        lo = nj if isinstance(nj, int) else nj[0]
        hi = nj if isinstance(nj, int) else nj[1]
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid cluster-size rule {self.nj!r}")
        if self.N < 2:
            raise ConfigError(f"need N >= 2 clusters, got {self.N}")
        if self.kind == "univariate" and self.M != 1:
            raise ConfigError("univariate scenarios have M = 1")
        if self.kind == "multivariate" and self.M < 2:
            raise ConfigError("multivariate scenarios need M >= 2")
        if len(self.beta) not in (1, self.n_outcomes):
            raise ConfigError(f"beta needs 1 or {self.n_outcomes} entries, got {len(self.beta)}")
        bad_cols = set(self.re_columns) - set(RE_COLUMNS)
        if bad_cols:
            raise ConfigError(f"unknown random-effect columns {sorted(bad_cols)}")
        if len(self.re_sd) != len(self.re_columns):
            raise ConfigError("re_sd needs one entry per random-effect column")
        if any(s < 0 for s in self.re_sd) or self.item_sd < 0:
            raise ConfigError("standard deviations must be non-negative")
        if any(s <= 0 for s in np.atleast_1d(self.eps_sd)):
            raise ConfigError("error standard deviations must be positive")
        if np.atleast_1d(self.eps_sd).size not in (1, self.n_outcomes):
            raise ConfigError(f"eps_sd needs 1 or {self.n_outcomes} entries")
        if not -1 < self.covariate_corr < 1:
            raise InvalidCorrelation(f"covariate_corr must lie in (-1, 1), got {self.covariate_corr}")
        _check_equicorr(self.re_corr, len(self.re_columns), "re_corr")
        if self.kind == "multivariate":
            _check_equicorr(self.eps_corr, self.M, "eps_corr")

    @property
    def n_outcomes(self) -> int:
        return self.item_count if self.kind == "crossed" else self.M

    def betas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.beta), (self.n_outcomes,)).copy()

    def eps_sds(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.eps_sd, dtype=float), (self.n_outcomes,)).copy()

    def re_cov(self) -> np.ndarray:
        k = len(self.re_columns)
        sd = np.asarray(self.re_sd)
        return equicorrelation(k, self.re_corr) * np.outer(sd, sd)

    def replace(self, **kw) -> ScenarioConfig:
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_equicorr(rho: float, dim: int, what: str) -> None:
    lower = -1.0 / (dim - 1) if dim > 1 else -np.inf
    if not (lower < rho < 1):
        raise InvalidCorrelation(
            f"{what}={rho} does not give a positive-definite {dim}x{dim} equicorrelation "
            f"matrix (need {lower:.4g} < rho < 1)"
        )


def equicorrelation(dim: int, rho: float) -> np.ndarray:
    return (1 - rho) * np.eye(dim) + rho * np.ones((dim, dim))


PRESETS: dict[str, ScenarioConfig] = {
    "u41": ScenarioConfig(name="u41"),
    "u41_power": ScenarioConfig(name="u41_power", beta=(0.5,)),
    "m42": ScenarioConfig(
        name="m42", kind="multivariate", N=100, nj=(20, 50), M=10,
        beta=(0.0,) * 8 + (0.2, 0.2), eps_corr=0.4, eps_sd=1.0,
    ),
    "x43": ScenarioConfig(name="x43", kind="crossed", N=10, nj=20, item_count=10, item_sd=5.0),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name].replace(**overrides) if overrides else PRESETS[name]


def _rng(config: ScenarioConfig, rng) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(np.random.SeedSequence(config.seed))


def _sizes(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    if isinstance(config.nj, int):
        return np.full(config.N, config.nj, dtype=np.int64)
    lo, hi = config.nj
    return rng.integers(lo, hi + 1, size=config.N)


def _covariates(config: ScenarioConfig, rng, n: int) -> tuple[np.ndarray, np.ndarray]:
    g = rng.standard_normal((n, 2))
    c = config.covariate_corr
    return g[:, 0], c * g[:, 0] + np.sqrt(1 - c * c) * g[:, 1]


def _re_design(config: ScenarioConfig, x, z) -> np.ndarray:
    cols = {"intercept": np.ones_like(x), "x": x, "z": z}
    return np.column_stack([cols[c] for c in config.re_columns])


def _psd_factor(G: np.ndarray) -> np.ndarray:
    """``L`` with ``L @ L.T == G`` for a PSD ``G`` (zero sds allowed)."""
    evals, vecs = np.linalg.eigh(G)
    return vecs * np.sqrt(np.clip(evals, 0.0, None))


def _random_part(config: ScenarioConfig, rng, D: np.ndarray, sizes, count: int) -> np.ndarray:
    """``count`` independent draws of cluster random effects applied to ``D``."""
    N, k = len(sizes), D.shape[1]
    L = _psd_factor(config.re_cov())
    idx = np.repeat(np.arange(N), sizes)
    out = np.empty((D.shape[0], count))
    g = rng.standard_normal((count, N, k))
    for m in range(count):
        u = g[m] @ L.T
        out[:, m] = np.einsum("ik,ik->i", D, u[idx])
    return out


def _errors(config: ScenarioConfig, rng, n: int, M: int) -> np.ndarray:
    sd = config.eps_sds()[:M] if M > 1 else config.eps_sds()[:1]
    g = rng.standard_normal((n, M))
    if M > 1 and config.eps_corr != 0:
        g = g @ np.linalg.cholesky(equicorrelation(M, config.eps_corr)).T
    return g * sd


def gen_univariate(config: ScenarioConfig, rng: np.random.Generator | None = None
                   ) -> ClusteredDataset:
    """Single-outcome clustered data; nuisance design is ``[1, z]``."""
    if config.kind != "univariate":
        raise ConfigError(f"gen_univariate needs kind='univariate', got {config.kind!r}")
    return _gen_shared(config, _rng(config, rng), 1)


def gen_multivariate(config: ScenarioConfig, rng: np.random.Generator | None = None
                     ) -> ClusteredDataset:
    """``M`` outcomes on a shared design with independent per-outcome random
    effects and cross-outcome equicorrelated errors."""
    if config.kind != "multivariate":
        raise ConfigError(f"gen_multivariate needs kind='multivariate', got {config.kind!r}")
    return _gen_shared(config, _rng(config, rng), config.M)


def _gen_shared(config: ScenarioConfig, rng, M: int) -> ClusteredDataset:
    sizes = _sizes(config, rng)
    n = int(sizes.sum())
    x, z = _covariates(config, rng, n)
    re = _random_part(config, rng, _re_design(config, x, z), sizes, M)
    eps = _errors(config, rng, n, M)
    y = np.outer(x, config.betas()[:M]) + config.gamma * z[:, None] + re + eps
    labels = ("y",) if M == 1 else tuple(f"y{l + 1}" for l in range(M))
    return ClusteredDataset.from_arrays(y, x, np.column_stack([np.ones(n), z]), sizes,
                                        outcome_labels=labels)


def _crossed_arrays(config: ScenarioConfig, rng):
    """Participant-major arrays of shape ``(N, items, trials)``."""
    if config.kind != "crossed":
        raise ConfigError(f"crossed generation needs kind='crossed', got {config.kind!r}")
    if not isinstance(config.nj, int):
        raise ConfigError("crossed scenarios need a fixed number of trials per item")
    N, I, T = config.N, config.item_count, config.nj
    x, z = _covariates(config, rng, N * I * T)
    x, z = x.reshape(N, I, T), z.reshape(N, I, T)
    k = len(config.re_columns)
    g = rng.standard_normal((N, k))
    u = g @ _psd_factor(config.re_cov()).T
    cols = {"intercept": np.ones_like(x), "x": x, "z": z}
    re = sum(u[:, c, None, None] * cols[name] for c, name in enumerate(config.re_columns))
    item = rng.standard_normal(I) * config.item_sd
    eps = rng.standard_normal((N, I, T)) * config.eps_sds()[0]
    beta = config.betas()
    y = beta[None, :, None] * x + config.gamma * z + re + item[None, :, None] + eps
    return x, z, y


def gen_crossed(config: ScenarioConfig, rng: np.random.Generator | None = None
                ) -> list[LongRecord]:
    """Long records with participants as clusters and an item id per row.

    Random effects are per participant and shared across items; each item
    adds an intercept drawn with sd ``item_sd``. ``z`` is stored as ``(1, z)``.
    """
    x, z, y = _crossed_arrays(config, _rng(config, rng))
    N, I, T = x.shape
    return [
        LongRecord(f"p{j + 1}", "y", float(y[j, m, t]), float(x[j, m, t]),
                   (1.0, float(z[j, m, t])), item_id=f"item{m + 1}")
        for j in range(N) for m in range(I) for t in range(T)
    ]


def gen_crossed_dataset(config: ScenarioConfig, rng: np.random.Generator | None = None
                        ) -> ClusteredDataset:
    """Same draw as ``reshape_crossed(gen_crossed(config))`` without records."""
    x, z, y = _crossed_arrays(config, _rng(config, rng))
    N, I, T = x.shape
    flat = lambda a: a.transpose(1, 0, 2).reshape(I, N * T)  # noqa: E731
    xs, zs, ys = flat(x), flat(z), flat(y)
    ones = np.ones(N * T)
    return ClusteredDataset(
        tuple(f"p{j + 1}" for j in range(N)), tuple(f"item{m + 1}" for m in range(I)),
        np.full(N, T), tuple(ys), tuple(xs),
        tuple(np.column_stack([ones, zs[m]]) for m in range(I)), response_label="y",
    )


def generate(config: ScenarioConfig, rng: np.random.Generator | None = None) -> ClusteredDataset:
    if config.kind == "crossed":
        return gen_crossed_dataset(config, rng)
    if config.kind == "multivariate":
        return gen_multivariate(config, rng)
    return gen_univariate(config, rng)


def true_covariances(config: ScenarioConfig, dataset: ClusteredDataset) -> dict[int, list]:
    """Exact within-cluster marginal covariance of every outcome.

    Item intercepts are common to all clusters of an item, so they shift the
    item's mean and do not enter the within-cluster covariance.
    """
    G = config.re_cov()
    sds = config.eps_sds()
    out: dict[int, list] = {}
    cache: dict = {}
    for l in range(dataset.M):
        key = (id(dataset.x[l]), sds[l])
        if key not in cache:
            blocks = []
            for j in range(dataset.N):
                _, x, Z = dataset.cluster(j, l)
                D = _re_design(config, x, Z[:, 1])
                blocks.append(D @ G @ D.T + sds[l] ** 2 * np.eye(len(x)))
            cache[key] = blocks
        out[l] = cache[key]
    return out


def true_weights(config: ScenarioConfig, dataset: ClusteredDataset) -> WorkingWeights:
    return user_weights(dataset, true_covariances(config, dataset), covariance=True)


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------

UserWeightsFn = Callable[[ClusteredDataset, ScenarioConfig], WorkingWeights]


def alpha_band(alpha: float, reps: int, level: float = 0.95) -> tuple[float, float]:
    """Central binomial band for the rejection rate of an exact level-``alpha`` test."""
    tail = (1 - level) / 2
    lo = stats.binom.ppf(tail, reps, alpha) / reps
    hi = stats.binom.ppf(1 - tail, reps, alpha) / reps
    return float(lo), float(hi)


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    z = stats.norm.ppf(0.5 + level / 2)
    p = k / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return float(max(0.0, center - half)), float(min(1.0, center + half))


@dataclass
class MethodCounts:
    """Rejection counts of one method over replicates."""

    global_rejections: int = 0
    fwer_rejections: int = 0
    outcome_rejections: np.ndarray | None = None
    failures: int = 0

    def add(self, other: MethodCounts) -> None:
        self.global_rejections += other.global_rejections
        self.fwer_rejections += other.fwer_rejections
        self.failures += other.failures
        if self.outcome_rejections is None:
            self.outcome_rejections = np.zeros_like(other.outcome_rejections)
        self.outcome_rejections = self.outcome_rejections + other.outcome_rejections


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    methods: tuple[str, ...]
    reps: int
    alpha: float
    B: int
    seed: int
    counts: dict[str, MethodCounts]
    outcome_labels: tuple[str, ...]
    true_nulls: tuple[int, ...]
    wall_time: float = field(default=0.0, compare=False)

    def rate(self, method: str, metric: str = "global") -> float:
        c = self.counts[method]
        if metric == "global":
            k = c.global_rejections
        elif metric == "fwer":
            k = c.fwer_rejections
        else:
            k = int(c.outcome_rejections[self.outcome_labels.index(metric)])
        return k / self.reps

    def outcome_rates(self, method: str) -> np.ndarray:
        return self.counts[method].outcome_rejections / self.reps

    def se(self, method: str, metric: str = "global") -> float:
        r = self.rate(method, metric)
        return float(np.sqrt(r * (1 - r) / self.reps))

    def band(self) -> tuple[float, float]:
        return alpha_band(self.alpha, self.reps)

    def rows(self, parameter: str = "") -> list[dict]:
        """Tidy rows: one per (method, metric)."""
        out = []
        metrics = ["global"]
        if self.config.n_outcomes > 1:
            if self.true_nulls:
                metrics.append("fwer")
            metrics += list(self.outcome_labels)
        for m in self.methods:
            for metric in metrics:
                c = self.counts[m]
                k = {"global": c.global_rejections, "fwer": c.fwer_rejections}.get(metric)
                if k is None:
                    k = int(c.outcome_rejections[self.outcome_labels.index(metric)])
                lo, hi = wilson_interval(k, self.reps)
                out.append({
                    "scenario": self.config.name or self.config.kind, "method": m,
                    "metric": metric, "N": self.config.N, "parameter": parameter,
                    "rate": k / self.reps, "lo": lo, "hi": hi, "reps": self.reps,
                })
        return out


def _method_weights(method, dataset, config, hypothesis, user_fn):
    if method == "clip_identity":
        return identity_weights(dataset)
    if method == "clip_random_intercept":
        return random_intercept_weights(dataset, hypothesis)
    if method == "clip_true":
        return true_weights(config, dataset)
    if user_fn is None:
        raise ConfigError("clip_user needs a user weights function")
    return user_fn(dataset, config)


def run_replicate(config: ScenarioConfig, methods: Sequence[str], rep: int, B: int = 1000,
                  alpha: float = 0.05, seed: int | None = None,
                  user_weights_fn: UserWeightsFn | None = None) -> dict[str, MethodCounts]:
    """One replicate; its data and flips depend only on ``(seed, rep)``.

    Clip methods reject per outcome on max-T adjusted p-values and globally
    on the combined p-value; baselines use Holm-adjusted p-values and reject
    globally when any adjusted p is at most ``alpha``. Methods hitting a
    numerical error count as non-rejections and are tallied as failures.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    dataset = generate(config, rng)
    hyp = HypothesisSpec.all_outcomes(dataset, 0.0)
    betas = config.betas()
    nulls = np.flatnonzero(betas == 0.0)
    plan = generate_flips(dataset.N, B, seed, "monte_carlo", replicate=rep)
    out = {}
    for method in methods:
        counts = MethodCounts(outcome_rejections=np.zeros(dataset.M, dtype=np.int64))
        try:
            if method in BASELINE_METHODS:
                raw = np.array([baseline_test(method, dataset, l, hyp).p for l in range(dataset.M)])
                adj, rej = holm(raw, alpha)
                global_p = adj.min()
            else:
                w = _method_weights(method, dataset, config, hyp, user_weights_fn)
                report = run_clip(dataset, w, hyp, plan=plan).report
                adj = np.array([o.adjusted_p for o in report.per_outcome])
                rej = adj <= alpha
                global_p = report.global_p
        except ClipError:
            counts.failures = 1
        else:
            counts.global_rejections = int(global_p <= alpha)
            counts.outcome_rejections = rej.astype(np.int64)
            counts.fwer_rejections = int(rej[nulls].any()) if nulls.size else 0
        out[method] = counts
    return out


def _run_chunk(args):
    config, methods, reps, B, alpha, seed, user_fn = args
    total = {m: MethodCounts() for m in methods}
    for rep in reps:
        for m, c in run_replicate(config, methods, rep, B, alpha, seed, user_fn).items():
            total[m].add(c)
    return total


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_monte_carlo(config: ScenarioConfig, methods: Sequence[str], reps: int,
                    alpha: float = 0.05, B: int = 1000, seed: int | None = None,
                    workers: int | None = None,
                    user_weights_fn: UserWeightsFn | None = None) -> MonteCarloResult:
    """Rejection rates of ``methods`` over ``reps`` simulated datasets.

    Replicates are split across ``workers`` processes (default from the
    ``CLIPFLIP_WORKERS`` environment variable); counts are summed, so the
    result does not depend on scheduling.
    """
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UnknownMethod(f"unknown method(s) {unknown}; choose from {METHODS}")
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    if "clip_user" in methods and user_weights_fn is None:
        raise ConfigError("clip_user needs a user weights function")
    seed = config.seed if seed is None else int(seed)
    workers = default_workers() if workers is None else max(1, int(workers))
    methods = tuple(methods)
    t0 = time.perf_counter()
    chunks = [list(range(reps))[i::workers] for i in range(workers)]
    jobs = [(config, methods, c, B, alpha, seed, user_weights_fn) for c in chunks if c]
    if len(jobs) == 1:
        parts = [_run_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    totals = {m: MethodCounts() for m in methods}
    for part in parts:
        for m in methods:
            totals[m].add(part[m])
    M = config.n_outcomes
    labels = (("y",) if M == 1 else tuple(f"y{l + 1}" for l in range(M))) \
        if config.kind != "crossed" else tuple(f"item{m + 1}" for m in range(M))
    nulls = tuple(int(i) for i in np.flatnonzero(config.betas() == 0.0))
    return MonteCarloResult(config, methods, reps, alpha, B, seed, totals, labels, nulls,
                            time.perf_counter() - t0)
