"""End-to-end clip test and the JSON test report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import baseline_test
from .combine import CombinedTest, combined_test, combiner_name, holm
from .data import ClusteredDataset, HypothesisSpec
from .errors import InvalidHypothesis
from .flips import FlipPlan, FlipScores, directional_p, flip_scores, generate_flips
from .scores import ScoreDecomposition, cluster_scores
from .weights import WorkingWeights

SCHEMA_VERSION = "1"


@dataclass
class OutcomeResult:
    outcome_id: str
    raw_p: float
    adjusted_p: float
    S: float
    S_studentized: float | None


@dataclass
class TestReport:
    global_p: float
    per_outcome: list[OutcomeResult]
    psi: str | None
    B: int | None
    seed: int | None
    weights_provenance: str | None
    alternative: str
    method: str = "clip"
    mode: str | None = None
    studentized: bool | None = None
    n: int = 0
    N: int = 0
    dropped_occasions: int = 0
    missing_policy: str = "listwise deletion per occasion"
    schema_version: str = SCHEMA_VERSION
    manifest: dict | None = field(default=None)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, **kw)


@dataclass(frozen=True, eq=False)
class ClipRun:
    """Report plus the intermediate objects behind it."""

    report: TestReport
    decomposition: ScoreDecomposition
    plan: FlipPlan
    flips: FlipScores
    combined: CombinedTest


def run_clip(dataset: ClusteredDataset, weights: WorkingWeights, hypothesis: HypothesisSpec,
             B: int = 1000, seed: int | None = 0, exhaustive: bool = False,
             psi: str = "max_abs", studentize: bool = True, replicate: int = 0,
             plan: FlipPlan | None = None) -> ClipRun:
    """Score, flip, combine.

    One-sided alternatives are only defined for a single tested outcome; the
    multivariate global statistic always combines absolute scores.
    """
    hypothesis.check(dataset)
    psi = combiner_name(psi)
    L = len(hypothesis.outcomes)
    if L > 1 and hypothesis.alternative != "two-sided":
        raise InvalidHypothesis(
            "one-sided alternatives are only available for a single tested outcome"
        )
    dec = cluster_scores(dataset, weights, hypothesis, strict=studentize)
    if plan is None:
        mode = "exhaustive" if exhaustive else "monte_carlo"
        plan = generate_flips(dataset.N, B, seed, mode, replicate)
    fs = flip_scores(dec, plan, studentized=studentize)
    comb = combined_test(fs, psi)
    raw = comb.raw_p
    adjusted = comb.adjusted_p
    global_p = comb.global_p
    if L == 1 and hypothesis.alternative != "two-sided":
        raw = np.array([directional_p(fs.M[:, 0], hypothesis.alternative)])
        adjusted = raw.copy()
        global_p = float(raw[0])
    S_stud = dec.S / dec.sigma_hat if studentize else None
    per = [
        OutcomeResult(dataset.outcome_labels[l], float(raw[k]), float(adjusted[k]),
                      float(dec.S[k]), None if S_stud is None else float(S_stud[k]))
        for k, l in enumerate(hypothesis.outcomes)
    ]
    report = TestReport(
        global_p=float(global_p), per_outcome=per, psi=psi, B=plan.B, seed=plan.seed,
        weights_provenance=weights.provenance, alternative=hypothesis.alternative,
        mode=plan.mode, studentized=studentize, n=dataset.n, N=dataset.N,
        dropped_occasions=dataset.dropped_occasions,
    )
    return ClipRun(report, dec, plan, fs, comb)


def baseline_report(dataset: ClusteredDataset, hypothesis: HypothesisSpec,
                    method: str) -> TestReport:
    """Per-outcome classical tests, Holm-adjusted; global p is the smallest adjusted p."""
    hypothesis.check(dataset)
    fits = [baseline_test(method, dataset, l, hypothesis) for l in hypothesis.outcomes]
    raw = np.array([f.p for f in fits])
    adj, _ = holm(raw)
    per = [
        OutcomeResult(dataset.outcome_labels[l], float(raw[k]), float(adj[k]),
                      float(fits[k].statistic), None)
        for k, l in enumerate(hypothesis.outcomes)
    ]
    return TestReport(
        global_p=float(adj.min()), per_outcome=per, psi=None, B=None, seed=None,
        weights_provenance=None, alternative=hypothesis.alternative, method=method,
        n=dataset.n, N=dataset.N, dropped_occasions=dataset.dropped_occasions,
    )
