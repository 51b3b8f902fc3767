"""Clustered multivariate datasets and long-format ingestion.

A :class:`ClusteredDataset` stores, for every outcome, the stacked response,
covariate of interest and nuisance design over all clusters (rows grouped by
cluster, clusters in first-appearance order). Per-cluster blocks are views
into those arrays.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidHypothesis,
    ItemMissingForParticipant,
    MissingColumn,
    MissingValue,
    NonFiniteValue,
    SingleClusterInput,
    UnbalancedOutcomes,
    ValidationError,
)

ALTERNATIVES = ("two-sided", "greater", "less")
MISSING_POLICIES = ("error", "drop")


@dataclass(frozen=True)
class LongRecord:
    """One observation of one outcome at one occasion."""

    cluster_id: str
    outcome_id: str
    y: float
    x: float
    z: tuple[float, ...] = ()
    item_id: str | None = None

    def __post_init__(self):
        values = (self.y, self.x, *self.z)
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteValue(
                f"non-finite value in record for cluster {self.cluster_id!r}, "
                f"outcome {self.outcome_id!r}"
            )


@dataclass(frozen=True)
class HypothesisSpec:
    """Null values ``beta0`` for the tested outcome indices ``outcomes``."""

    outcomes: tuple[int, ...]
    beta0: tuple[float, ...]
    alternative: str = "two-sided"

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(int(l) for l in self.outcomes))
        object.__setattr__(self, "beta0", tuple(float(b) for b in self.beta0))
        if not self.outcomes:
            raise InvalidHypothesis("the tested outcome set must be non-empty")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise InvalidHypothesis("duplicated outcome index in hypothesis")
        if len(self.beta0) != len(self.outcomes):
            raise InvalidHypothesis(
                f"beta0 has {len(self.beta0)} entries for {len(self.outcomes)} outcomes"
            )
        if not all(math.isfinite(b) for b in self.beta0):
            raise InvalidHypothesis("beta0 must be finite")
        if self.alternative not in ALTERNATIVES:
            raise InvalidHypothesis(
                f"alternative must be one of {ALTERNATIVES}, got {self.alternative!r}"
            )

    @classmethod
    def all_outcomes(cls, dataset: ClusteredDataset, beta0=0.0,
                     alternative: str = "two-sided") -> HypothesisSpec:
        """Test every outcome of ``dataset``; scalar ``beta0`` is broadcast."""
        b = np.broadcast_to(np.asarray(beta0, dtype=float), (dataset.M,))
        return cls(tuple(range(dataset.M)), tuple(b), alternative)

    def null_value(self, l: int) -> float:
        return self.beta0[self.outcomes.index(l)]

    def check(self, dataset: ClusteredDataset) -> None:
        bad = [l for l in self.outcomes if not 0 <= l < dataset.M]
        if bad:
            raise InvalidHypothesis(
                f"outcome indices {bad} outside 0..{dataset.M - 1}"
            )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """Per-outcome stacked arrays, rows grouped by cluster.

    ``y[l]`` and ``x[l]`` have length ``n``; ``Z[l]`` is ``n x q_l``. Rows
    ``offsets[j]:offsets[j + 1]`` belong to cluster ``j``. When the covariate
    and nuisance design are identical across outcomes the same array object
    is reused for every outcome.
    """

    cluster_ids: tuple[str, ...]
    outcome_labels: tuple[str, ...]
    sizes: np.ndarray
    y: tuple[np.ndarray, ...]
    x: tuple[np.ndarray, ...]
    Z: tuple[np.ndarray, ...]
    response_label: str | None = None
    dropped_occasions: int = 0
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=np.int64)
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "cluster_ids", tuple(map(str, self.cluster_ids)))
        object.__setattr__(self, "outcome_labels", tuple(map(str, self.outcome_labels)))
        N, M = len(self.cluster_ids), len(self.outcome_labels)
        if N < 2:
            raise SingleClusterInput(f"need at least 2 clusters, got {N}")
        if len(set(self.cluster_ids)) != N:
            raise ValidationError("cluster ids must be distinct")
        if M < 1 or len(set(self.outcome_labels)) != M:
            raise ValidationError("outcome labels must be non-empty and distinct")
        if sizes.shape != (N,) or np.any(sizes < 1):
            raise ValidationError("every cluster needs at least one occasion")
        n = int(sizes.sum())
        if not (len(self.y) == len(self.x) == len(self.Z) == M):
            raise ValidationError("y, x and Z need one entry per outcome")

        # keep shared design arrays shared after freezing
        cache: dict[int, np.ndarray] = {}

        def freeze(a, ndim, what, l):
            key = id(a)
            if key in cache:
                return cache[key]
            out = _frozen(a)
            if ndim == 2 and out.ndim == 1 and out.size == 0:
                out = _frozen(np.zeros((n, 0)))
            if out.ndim != ndim or out.shape[0] != n:
                raise ValidationError(
                    f"{what} for outcome {self.outcome_labels[l]!r} has shape "
                    f"{out.shape}, expected {n} rows"
                )
            if not np.all(np.isfinite(out)):
                raise NonFiniteValue(
                    f"non-finite {what} for outcome {self.outcome_labels[l]!r}"
                )
            cache[key] = out
            return out

        object.__setattr__(self, "y", tuple(freeze(a, 1, "y", l) for l, a in enumerate(self.y)))
        object.__setattr__(self, "x", tuple(freeze(a, 1, "x", l) for l, a in enumerate(self.x)))
        object.__setattr__(self, "Z", tuple(freeze(a, 2, "Z", l) for l, a in enumerate(self.Z)))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_arrays(cls, y, x, Z, sizes, cluster_ids=None, outcome_labels=None,
                    **kwargs) -> ClusteredDataset:
        """Build from stacked arrays already grouped by cluster.

        ``y`` is ``(n,)`` or ``(n, M)``; ``x`` is ``(n,)`` (shared) or
        ``(n, M)``; ``Z`` is ``(n, q)`` (shared) or a sequence of per-outcome
        matrices.
        """
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        M = y.shape[1]
        x = np.asarray(x, dtype=float)
        xs = (x,) * M if x.ndim == 1 else tuple(x[:, l] for l in range(M))
        if isinstance(Z, np.ndarray) or Z is None:
            Zarr = np.zeros((y.shape[0], 0)) if Z is None else np.asarray(Z, dtype=float)
            if Zarr.ndim == 1:
                Zarr = Zarr[:, None]
            Zs = (Zarr,) * M
        else:
            Zs = tuple(np.asarray(z, dtype=float) for z in Z)
        N = len(sizes)
        if cluster_ids is None:
            cluster_ids = tuple(f"c{j + 1}" for j in range(N))
        if outcome_labels is None:
            outcome_labels = tuple(f"y{l + 1}" for l in range(M))
        return cls(tuple(cluster_ids), tuple(outcome_labels), np.asarray(sizes),
                   tuple(y[:, l] for l in range(M)), xs, Zs, **kwargs)

    @property
    def N(self) -> int:
        return len(self.cluster_ids)

    @property
    def M(self) -> int:
        return len(self.outcome_labels)

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    def q(self, l: int) -> int:
        return self.Z[l].shape[1]

    @property
    def shared_design(self) -> bool:
        return all(x is self.x[0] for x in self.x) and all(z is self.Z[0] for z in self.Z)

    @property
    def cluster_index(self) -> np.ndarray:
        """Cluster index of every stacked row."""
        return np.repeat(np.arange(self.N), self.sizes)

    def block(self, j: int) -> slice:
        return slice(int(self.offsets[j]), int(self.offsets[j + 1]))

    def cluster(self, j: int, l: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(y_jl, x_jl, Z_jl) views for cluster ``j`` and outcome ``l``."""
        s = self.block(j)
        return self.y[l][s], self.x[l][s], self.Z[l][s]

    def outcome_index(self, label: str) -> int:
        try:
            return self.outcome_labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown outcome {label!r}") from None

    def equals(self, other: ClusteredDataset) -> bool:
        """Field-by-field equality (arrays compared exactly)."""
        if not isinstance(other, ClusteredDataset):
            return False
        same = (
            self.cluster_ids == other.cluster_ids
            and self.outcome_labels == other.outcome_labels
            and np.array_equal(self.sizes, other.sizes)
            and self.response_label == other.response_label
        )
        if not same:
            return False
        return all(
            np.array_equal(a[l], b[l])
            for a, b in ((self.y, other.y), (self.x, other.x), (self.Z, other.Z))
            for l in range(self.M)
        )

    __eq__ = equals
    __hash__ = None

    def to_long_records(self) -> list[LongRecord]:
        """Export in cluster-major, then outcome, then occasion order."""
        out = []
        for j, cid in enumerate(self.cluster_ids):
            s = self.block(j)
            for l, lab in enumerate(self.outcome_labels):
                ys, xs, Zs = self.y[l][s], self.x[l][s], self.Z[l][s]
                for i in range(len(ys)):
                    out.append(LongRecord(cid, lab, float(ys[i]), float(xs[i]),
                                          tuple(float(v) for v in Zs[i])))
        return out


def _assemble(order: list[str], outcome_order: list[str],
              rows: dict[str, dict[str, list[LongRecord]]], label_kind: str,
              **kwargs) -> ClusteredDataset:
    """Stack grouped records into a dataset; counts must agree per cluster."""
    if len(order) < 2:
        raise SingleClusterInput(
            f"need at least 2 distinct clusters, got {len(order)}: {order}"
        )
    sizes = []
    for cid in order:
        counts = {o: len(rows[cid].get(o, ())) for o in outcome_order}
        if label_kind == "item":
            missing = [o for o, c in counts.items() if c == 0]
            if missing:
                raise ItemMissingForParticipant(
                    f"participant {cid!r} has no rows for item(s) {missing}"
                )
        if len(set(counts.values())) != 1 or 0 in counts.values():
            raise UnbalancedOutcomes(
                f"cluster {cid!r} has unequal {label_kind} row counts {counts}"
            )
        sizes.append(next(iter(counts.values())))

    ys, xs, Zs = [], [], []
    for o in outcome_order:
        recs = [r for cid in order for r in rows[cid][o]]
        qs = {len(r.z) for r in recs}
        if len(qs) != 1:
            raise MissingColumn(
                f"{label_kind} {o!r} has records with differing nuisance lengths {sorted(qs)}"
            )
        q = qs.pop()
        ys.append(np.array([r.y for r in recs]))
        xs.append(np.array([r.x for r in recs]))
        Zs.append(np.array([r.z for r in recs], dtype=float).reshape(len(recs), q))

    # collapse identical per-outcome designs onto one shared array
    if all(np.array_equal(xs[0], v) for v in xs) and all(
        Zs[0].shape == v.shape and np.array_equal(Zs[0], v) for v in Zs
    ):
        xs = [xs[0]] * len(xs)
        Zs = [Zs[0]] * len(Zs)
    return ClusteredDataset(tuple(order), tuple(outcome_order), np.array(sizes),
                            tuple(ys), tuple(xs), tuple(Zs), **kwargs)


def ingest_long(records: Iterable[LongRecord], **kwargs) -> ClusteredDataset:
    """Group long records into a dataset.

    Clusters and outcomes keep their first-appearance order; occasions of
    different outcomes within a cluster are aligned by their order of
    appearance, so every outcome needs the same row count per cluster.
    """
    order: list[str] = []
    outcome_order: list[str] = []
    rows: dict[str, dict[str, list[LongRecord]]] = {}
    for r in records:
        if r.cluster_id not in rows:
            rows[r.cluster_id] = {}
            order.append(r.cluster_id)
        if r.outcome_id not in outcome_order:
            outcome_order.append(r.outcome_id)
        rows[r.cluster_id].setdefault(r.outcome_id, []).append(r)
    return _assemble(order, outcome_order, rows, "outcome", **kwargs)


def reshape_crossed(records: Iterable[LongRecord], **kwargs) -> ClusteredDataset:
    """Map items to outcomes; participants (``cluster_id``) stay the clusters.

    Trial rows of each (participant, item) pair are kept in input order, so
    one clusterwise sign later flips every item of a participant at once.
    """
    order: list[str] = []
    items: list[str] = []
    responses: set[str] = set()
    rows: dict[str, dict[str, list[LongRecord]]] = {}
    for r in records:
        if r.item_id is None:
            raise MissingColumn(
                f"record for participant {r.cluster_id!r} has no item id"
            )
        responses.add(r.outcome_id)
        if r.cluster_id not in rows:
            rows[r.cluster_id] = {}
            order.append(r.cluster_id)
        if r.item_id not in items:
            items.append(r.item_id)
        rows[r.cluster_id].setdefault(r.item_id, []).append(r)
    if len(responses) > 1:
        raise ValidationError(
            f"crossed reshaping needs a single response, got {sorted(responses)}"
        )
    response = responses.pop() if responses else None
    return _assemble(order, items, rows, "item", response_label=response, **kwargs)


def collapse_items(dataset: ClusteredDataset) -> list[LongRecord]:
    """Inverse of :func:`reshape_crossed`: outcomes become item ids again."""
    resp = dataset.response_label or "y"
    return [
        LongRecord(r.cluster_id, resp, r.y, r.x, r.z, item_id=r.outcome_id)
        for r in dataset.to_long_records()
    ]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schema:
    """Column mapping for CSV input.

    Long format: one row per (occasion, outcome) with ``outcome`` naming the
    outcome column and ``response`` the value column. Wide format: one row
    per occasion with the outcome values in ``outcomes``.
    """

    cluster: str
    x: str
    nuisance: tuple[str, ...] = ()
    outcomes: tuple[str, ...] = ()
    outcome: str | None = None
    response: str = "y"
    item: str | None = None
    occasion: str | None = None
    intercept: bool = True

    def __post_init__(self):
        if bool(self.outcomes) == bool(self.outcome):
            raise ValidationError(
                "give either wide outcome columns or a long-format outcome column"
            )

    def required(self) -> list[str]:
        cols = [self.cluster, self.x, *self.nuisance]
        if self.outcome:
            cols += [self.outcome, self.response]
        cols += list(self.outcomes)
        cols += [c for c in (self.item, self.occasion) if c]
        return cols


def _parse(value: str, col: str, lineno: int) -> float | None:
    v = value.strip() if value is not None else ""
    if v == "" or v.upper() == "NA":
        return None
    try:
        out = float(v)
    except ValueError:
        raise ValidationError(
            f"row {lineno}, column {col!r}: cannot parse {value!r} as a number"
        ) from None
    if not math.isfinite(out):
        raise NonFiniteValue(f"row {lineno}, column {col!r}: non-finite value {value!r}")
    return out


def read_records(path: str | Path, schema: Schema, missing: str = "error"
                 ) -> tuple[list[LongRecord], int]:
    """Read a CSV file into long records.

    Empty or ``NA`` cells are missing; with ``missing="drop"`` the whole
    occasion is removed (listwise deletion), otherwise :class:`MissingValue`
    is raised. Returns the records and the number of dropped occasions.
    """
    if missing not in MISSING_POLICIES:
        raise ValidationError(f"missing policy must be one of {MISSING_POLICIES}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        absent = [c for c in schema.required() if c not in header]
        if absent:
            raise MissingColumn(f"{path}: missing column(s) {absent}; header is {header}")
        raw = list(reader)

    def get(row, col, lineno):
        v = _parse(row[col], col, lineno)
        if v is None and missing == "error":
            raise MissingValue(f"row {lineno}, column {col!r}: missing value")
        return v

    dropped = 0
    if schema.outcomes:
        out = []
        for i, row in enumerate(raw, start=2):
            x = get(row, schema.x, i)
            z = [get(row, c, i) for c in schema.nuisance]
            ys = [get(row, c, i) for c in schema.outcomes]
            if x is None or None in z or None in ys:
                dropped += 1
                continue
            z = ([1.0] if schema.intercept else []) + z
            item = row[schema.item] if schema.item else None
            for col, yv in zip(schema.outcomes, ys):
                out.append(LongRecord(row[schema.cluster], col, yv, x, tuple(z), item))
        return out, dropped

    parsed = []
    for i, row in enumerate(raw, start=2):
        x = get(row, schema.x, i)
        y = get(row, schema.response, i)
        z = [get(row, c, i) for c in schema.nuisance]
        ok = x is not None and y is not None and None not in z
        parsed.append((row, ok, x, y, z))

    if schema.occasion:
        # drop every outcome of an occasion with any missing cell
        bad = {(row[schema.cluster], row[schema.occasion])
               for row, ok, *_ in parsed if not ok}
        dropped = len(bad)
        keep = [p for p in parsed
                if (p[0][schema.cluster], p[0][schema.occasion]) not in bad]
    else:
        dropped = sum(not p[1] for p in parsed)
        keep = [p for p in parsed if p[1]]
    out = []
    for row, _, x, y, z in keep:
        z = ([1.0] if schema.intercept else []) + z
        item = row[schema.item] if schema.item else None
        out.append(LongRecord(row[schema.cluster], row[schema.outcome], y, x, tuple(z), item))
    return out, dropped


def read_csv(path: str | Path, schema: Schema, missing: str = "error") -> ClusteredDataset:
    """Read and ingest a CSV file; items become outcomes when ``schema.item`` is set."""
    records, dropped = read_records(path, schema, missing)
    if schema.item:
        return reshape_crossed(records, dropped_occasions=dropped)
    return ingest_long(records, dropped_occasions=dropped)


def write_long_csv(records: Sequence[LongRecord], path: str | Path,
                   nuisance_names: Sequence[str] | None = None) -> None:
    """Write long records with columns cluster, outcome, y, x, z1.. [, item]."""
    q = len(records[0].z) if records else 0
    names = list(nuisance_names) if nuisance_names else [f"z{k + 1}" for k in range(q)]
    has_item = any(r.item_id is not None for r in records)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "outcome", "y", "x", *names] + (["item"] if has_item else []))
        for r in records:
            row = [r.cluster_id, r.outcome_id, repr(r.y), repr(r.x), *map(repr, r.z)]
            w.writerow(row + ([r.item_id] if has_item else []))
