"""Command-line interface: ``clipflip test | simulate | inspect``.

Exit codes: 0 success, 2 validation error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import HypothesisSpec, Schema, read_csv
from .errors import ClipError, ConfigError, NumericalError, ValidationError
from .report import baseline_report, run_clip
from .sim import METHODS, PRESETS, ScenarioConfig, preset, run_monte_carlo
from .weights import (
    diagonal_weights,
    identity_weights,
    random_intercept_weights,
    read_weights_csv,
)

DIGEST = "sha256"
SCHEMA_VERSION = "1"


def _split(s: str | None) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip()) if s else ()


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in _split(s)]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {s!r}") from None


def file_digest(path) -> str:
    h = hashlib.new(DIGEST)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(argv, config: dict, seed, inputs) -> dict:
    canon = json.dumps(config, sort_keys=True, default=str).encode()
    return {
        "command_line": list(argv),
        "config_digest": hashlib.new(DIGEST, canon).hexdigest(),
        "digest_algorithm": DIGEST,
        "seed": seed,
        "software_version": __version__,
        "input_digests": {str(p): file_digest(p) for p in inputs},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "schema_version": SCHEMA_VERSION,
    }


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _num(v) -> str:
    """Shortest round-trip text for a float (plain repr, never ``np.float64(...)``)."""
    return repr(float(v))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# test / inspect
# ---------------------------------------------------------------------------


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV input file")
    p.add_argument("--cluster-col", required=True)
    p.add_argument("--x-col", required=True, help="covariate of interest")
    p.add_argument("--nuisance-cols", default="", help="comma-separated nuisance columns")
    p.add_argument("--no-intercept", action="store_true",
                   help="do not add an intercept column to the nuisance design")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--outcome-cols", help="wide format: comma-separated outcome columns")
    g.add_argument("--outcome-col", help="long format: column naming the outcome")
    p.add_argument("--response-col", default="y", help="long format: response value column")
    p.add_argument("--item-col", help="crossed design: item column (items become outcomes)")
    p.add_argument("--occasion-col", help="long format: occasion id used to align outcomes")
    p.add_argument("--missing", choices=("error", "drop"), default="error")
    p.add_argument("--test-outcomes", default="", help="subset of outcome labels to test")
    p.add_argument("--beta0", default="0", help="null value(s), scalar or one per tested outcome")
    p.add_argument("--weights", default="identity",
                   help="identity | diagonal=VARCOL | ranint | file=PATH")
    p.add_argument("--weights-are-covariances", action="store_true",
                   help="blocks in a weights file are covariances, not weights")
    p.add_argument("--b", type=int, default=1000, help="number of sign flips")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.add_argument("--combine", choices=("maxT", "sumabs"), default="maxT")
    p.add_argument("--studentize", choices=("on", "off"), default="on")
    p.add_argument("--exhaustive", action="store_true", help="enumerate all 2^N sign flips")


def _schema(args, outcomes=None, response=None) -> Schema:
    return Schema(
        cluster=args.cluster_col, x=args.x_col, nuisance=_split(args.nuisance_cols),
        outcomes=outcomes if outcomes is not None else _split(args.outcome_cols),
        outcome=None if (outcomes is not None or args.outcome_cols) else args.outcome_col,
        response=response or args.response_col, item=args.item_col,
        occasion=args.occasion_col, intercept=not args.no_intercept,
    )


def _prepare(args):
    dataset = read_csv(args.data, _schema(args), args.missing)
    labels = _split(args.test_outcomes) or dataset.outcome_labels
    idx = tuple(dataset.outcome_index(lab) for lab in labels)
    beta0 = _floats(args.beta0)
    if len(beta0) == 1:
        beta0 = beta0 * len(idx)
    hyp = HypothesisSpec(idx, tuple(beta0), args.alternative)
    hyp.check(dataset)

    spec = args.weights
    inputs = [args.data]
    if spec == "identity":
        weights = identity_weights(dataset, idx)
    elif spec == "ranint":
        weights = random_intercept_weights(dataset, hyp)
    elif spec.startswith("diagonal="):
        weights = diagonal_weights(dataset, _variance_column(args, dataset, spec[9:]), idx)
    elif spec.startswith("file="):
        path = spec[5:]
        inputs.append(path)
        weights = read_weights_csv(path, dataset, covariance=args.weights_are_covariances,
                                   outcomes=idx)
    else:
        raise ValidationError(
            f"--weights must be identity, diagonal=COL, ranint or file=PATH; got {spec!r}"
        )
    return dataset, hyp, weights, inputs


def _variance_column(args, dataset, col: str) -> np.ndarray:
    """Per-row variances aligned with the dataset rows (one column per outcome)."""
    if args.outcome_cols:
        outcomes = _split(args.outcome_cols)
        aug = read_csv(args.data, _schema(args, outcomes=outcomes + (col,)), args.missing)
        v = aug.y[-1]
        return v if dataset.M == 1 else np.column_stack([v] * dataset.M)
    aux = read_csv(args.data, _schema(args, response=col), args.missing)
    if not np.array_equal(aux.sizes, dataset.sizes):
        raise ValidationError(f"variance column {col!r} has a different missing-data pattern")
    return np.column_stack(aux.y)


def _clip_run(args):
    dataset, hyp, weights, inputs = _prepare(args)
    run = run_clip(dataset, weights, hyp, B=args.b, seed=args.seed, exhaustive=args.exhaustive,
                   psi=args.combine, studentize=args.studentize == "on")
    return dataset, run, inputs


def _config_of(args) -> dict:
    return {k: v for k, v in vars(args).items()
            if k not in ("func", "out", "out_dir", "dump_zeta", "manifest")}


def _zeta_csv(dataset, run) -> str:
    dec = run.decomposition
    header = ["cluster_id", *(dataset.outcome_labels[l] for l in dec.outcomes)]
    rows = [[cid, *map(_num, dec.zeta[j])] for j, cid in enumerate(dataset.cluster_ids)]
    return _csv_text(header, rows)


def cmd_test(args, argv) -> int:
    dataset, run, inputs = _clip_run(args)
    report = run.report
    report.manifest = manifest(argv, _config_of(args), args.seed, inputs)
    text = report.to_json() + "\n"
    if args.dump_zeta:
        _atomic_write(args.dump_zeta, _zeta_csv(dataset, run))
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_baseline(args, argv) -> int:
    dataset, hyp, _, inputs = _prepare(args)
    report = baseline_report(dataset, hyp, args.method)
    report.manifest = manifest(argv, _config_of(args), None, inputs)
    text = report.to_json() + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_inspect(args, argv) -> int:
    dataset, run, inputs = _clip_run(args)
    dec, plan, fs = run.decomposition, run.plan, run.flips
    labels = [dataset.outcome_labels[l] for l in dec.outcomes]
    files = {
        "zeta.csv": _zeta_csv(dataset, run),
        "signs.csv": _csv_text(list(dataset.cluster_ids), plan.signs.tolist()),
        "M.csv": _csv_text(labels, [[_num(v) for v in row] for row in fs.M]),
    }
    if fs.empirical_row_cov is not None:
        files["row_cov.csv"] = _csv_text(
            ["outcome", *labels],
            [[lab, *map(_num, row)] for lab, row in zip(labels, fs.empirical_row_cov)],
        )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "outcomes": labels,
        "n": dec.n,
        "N": dec.N,
        "S": dec.S.tolist(),
        "sigma_hat": dec.sigma_hat.tolist(),
        "observed_statistics": fs.M[0].tolist(),
        "studentized": fs.studentized,
        "report": run.report.to_dict(),
        "files": sorted(files),
        "manifest": manifest(argv, _config_of(args), args.seed, inputs),
    }
    files["summary.json"] = json.dumps(summary, indent=2) + "\n"

    out = Path(args.out_dir)
    tmp = Path(tempfile.mkdtemp(dir=out.parent if str(out.parent) else ".",
                                prefix=f".{out.name}."))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text, encoding="utf-8")
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def load_config(path) -> dict:
    """Read a TOML scenario file: ``ScenarioConfig`` keys, optionally ``preset``."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read scenario config {path}: {e}") from None
    unknown = set(data) - _FIELDS - {"preset"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def _scenario(args) -> ScenarioConfig:
    data = load_config(args.config) if args.config else {}
    base = data.pop("preset", None) or args.scenario
    if base is None and not data:
        raise ConfigError("give --scenario or --config")
    if base is not None:
        return preset(base, **data)
    return ScenarioConfig(**data)


def cmd_simulate(args, argv) -> int:
    cfg = _scenario(args)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    methods = _split(args.methods) or (("clip_identity", "clip_true", "ols", "hc3",
                                        "cluster_sandwich") if cfg.kind == "univariate"
                                       else ("clip_identity", "hc3"))
    Ns = [int(v) for v in _split(args.N)] or [cfg.N]
    sds = _floats(args.eps_sd) if args.eps_sd else [None]
    rows = []
    for N in Ns:
        for sd in sds:
            c = cfg.replace(N=N) if sd is None else cfg.replace(N=N, eps_sd=sd)
            res = run_monte_carlo(c, methods, args.reps, alpha=args.alpha, B=args.b,
                                  workers=args.workers)
            rows += res.rows("" if sd is None else f"eps_sd={sd:g}")
    header = ["scenario", "method", "metric", "N", "parameter", "rate", "lo", "hi", "reps"]
    text = _csv_text(header, [[_num(r[h]) if isinstance(r[h], float) else r[h]
                               for h in header] for r in rows])
    man = manifest(argv, {"scenario": cfg.to_dict(), **_config_of(args)}, cfg.seed,
                   [args.config] if args.config else [])
    man["scenario"] = cfg.to_dict()
    if args.out:
        _atomic_write(args.out, text)
        _atomic_write(args.manifest or f"{args.out}.manifest.json",
                      json.dumps(man, indent=2, default=str) + "\n")
    else:
        sys.stdout.write(text)
        if args.manifest:
            _atomic_write(args.manifest, json.dumps(man, indent=2, default=str) + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clipflip", description="Clusterwise sign-flip score tests for fixed effects.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run the clip test and print a JSON report")
    _add_data_args(p)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--dump-zeta", help="also write clusterwise score contributions as CSV")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("baseline", help="classical OLS / HC3 / cluster-sandwich tests")
    _add_data_args(p)
    p.add_argument("--method", choices=("ols", "hc3", "cluster_sandwich"), default="hc3")
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("inspect", help="dump zeta, sign and flip-score matrices as CSV")
    _add_data_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("simulate", help="Monte Carlo rejection rates as tidy CSV")
    p.add_argument("--scenario", choices=sorted(PRESETS))
    p.add_argument("--config", help="TOML file with scenario keys (optionally preset = ...)")
    p.add_argument("--N", default="", help="comma-separated cluster counts to sweep")
    p.add_argument("--eps-sd", default="", help="comma-separated error sds to sweep")
    p.add_argument("--methods", default="", help=f"comma-separated subset of {METHODS}")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--b", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default $CLIPFLIP_WORKERS or 1)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.add_argument("--manifest", help="manifest path (default OUT.manifest.json)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, ["clipflip", *argv])
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValidationError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ClipError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
