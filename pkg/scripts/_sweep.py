"""Shared driver for the figure scripts: sweep a scenario, write a tidy CSV."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from clipflip.sim import preset, run_monte_carlo

FIELDS = ["scenario", "method", "metric", "N", "parameter", "rate", "lo", "hi", "reps"]


def parser(description: str, reps: int, out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--reps", type=int, default=reps)
    p.add_argument("--b", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=out)
    return p


def sweep(args, scenario: str, methods, grid) -> list[dict]:
    """``grid`` yields ``(parameter_label, overrides)`` pairs."""
    rows = []
    for label, overrides in grid:
        t0 = time.perf_counter()
        res = run_monte_carlo(preset(scenario, **overrides), methods, args.reps,
                              alpha=args.alpha, B=args.b, seed=args.seed, workers=args.workers)
        rows += res.rows(label)
        print(f"{scenario} {label or overrides}: "
              + ", ".join(f"{m}={res.rate(m):.3f}" for m in methods)
              + f"  ({time.perf_counter() - t0:.1f}s)", file=sys.stderr)
    return rows


def write(rows: list[dict], path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {path}", file=sys.stderr)
