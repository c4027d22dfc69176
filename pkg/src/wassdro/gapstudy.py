"""Optimality gaps of the C0 bound and of decision rules on sum-of-max instances.

Each instance has Z(xi) = sum_n max{A_n' xi - b_n, 0} on the unit box with
N2 ~ U{1, ..., ceil(ln(K + 1))} terms, A ~ U[0, 1], b_n ~ U[0, sum_k A_nk],
samples ~ U[0, 1]^K and radius 1/sqrt(I).  The ground truth is the exact SOCP.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .conic import SolveStatus
from .copositive import solve_copositive
from .oracles import SumMaxRecourse, decision_rule_bound, exact_wce_summax

MAX_K_REDUCED = 4
MAX_I_REDUCED = 20
MAX_TRIALS_REDUCED = 20


def random_summax(rng: np.random.Generator, K: int, I: int) -> tuple[SumMaxRecourse, np.ndarray]:
    n2 = int(rng.integers(1, math.ceil(math.log(K + 1)) + 1))
    A = rng.uniform(0.0, 1.0, (n2, K))
    b = rng.uniform(0.0, A.sum(axis=1))
    samples = rng.uniform(0.0, 1.0, (I, K))
    return SumMaxRecourse.classic(A, b), samples


@dataclass(frozen=True)
class GapRecord:
    K: int
    I: int
    trial: int
    N2: int
    exact: float
    c0: float
    rule: float
    c0_status: str
    rule_status: str
    times: dict = field(compare=False)

    @property
    def solvable(self) -> bool:
        return self.c0_status == "Optimal" and math.isfinite(self.exact)

    def gap(self, value: float) -> float:
        return 100.0 * (value - self.exact) / abs(self.exact)


@dataclass(frozen=True)
class GapCell:
    K: int
    I: int
    trials: int
    solvable_pct: float
    c0_gap: float
    rule_gap: float
    seconds_exact: float = field(compare=False)
    seconds_c0: float = field(compare=False)
    seconds_rule: float = field(compare=False)


def run_instance(K: int, I: int, trial: int, rng: np.random.Generator, degree: str = "quadratic") -> GapRecord:
    r, samples = random_summax(rng, K, I)
    eps = 1.0 / math.sqrt(I)
    t0 = time.perf_counter()
    exact = exact_wce_summax(r, samples, eps)
    t1 = time.perf_counter()
    c0 = solve_copositive(r.to_problem(samples, eps), 0.0)
    t2 = time.perf_counter()
    rule = decision_rule_bound(r, samples, eps, degree=degree)
    t3 = time.perf_counter()
    return GapRecord(K, I, trial, r.N2, float(exact.value), float(c0.value), float(rule.value),
                     str(c0.status), str(rule.status),
                     {"exact": t1 - t0, "c0": t2 - t1, "rule": t3 - t2})


def _cell_rng(seed: int, K: int, I: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, K, I]))


def run_gap_study(K_list: Sequence[int], I_list: Sequence[int], seed: int = 0, trials: int = 10,
                  reduced: bool = True, degree: str = "quadratic") -> tuple[list[GapCell], list[GapRecord]]:
    """Mean gaps (in %) per (K, I) cell over the solvable instances.

    Unsolved instances stay in the record list and lower the solvable share.
    """
    if reduced:
        if max(K_list) > MAX_K_REDUCED or max(I_list) > MAX_I_REDUCED or trials > MAX_TRIALS_REDUCED:
            raise ValueError(f"reduced mode caps K <= {MAX_K_REDUCED}, I <= {MAX_I_REDUCED}, "
                             f"trials <= {MAX_TRIALS_REDUCED}")
    cells, records = [], []
    for K in K_list:
        for I in I_list:
            rng = _cell_rng(seed, K, I)
            recs = [run_instance(K, I, t, rng, degree) for t in range(trials)]
            records.extend(recs)
            good = [r for r in recs if r.solvable]
            rule_good = [r for r in good if r.rule_status == str(SolveStatus.OPTIMAL)]
            cells.append(GapCell(
                K, I, trials, 100.0 * len(good) / trials,
                float(np.mean([r.gap(r.c0) for r in good])) if good else math.nan,
                float(np.mean([r.gap(r.rule) for r in rule_good])) if rule_good else math.nan,
                float(np.mean([r.times["exact"] for r in recs])),
                float(np.mean([r.times["c0"] for r in recs])),
                float(np.mean([r.times["rule"] for r in recs]))))
    return cells, records


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def cells_csv(cells: Sequence[GapCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("K", "I", "trials", "solvable_pct", "c0_gap_pct", "rule_gap_pct"))
    for c in cells:
        w.writerow([_fmt(v) for v in (c.K, c.I, c.trials, c.solvable_pct, c.c0_gap, c.rule_gap)])
    return buf.getvalue()


def records_csv(records: Sequence[GapRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("K", "I", "trial", "N2", "exact", "c0", "rule", "c0_status", "rule_status"))
    for r in records:
        w.writerow([_fmt(v) for v in (r.K, r.I, r.trial, r.N2, r.exact, r.c0, r.rule, r.c0_status,
                                      r.rule_status)])
    return buf.getvalue()


def timings_csv(cells: Sequence[GapCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(("K", "I", "seconds_exact", "seconds_c0", "seconds_rule"))
    for c in cells:
        w.writerow([c.K, c.I, f"{c.seconds_exact:.6f}", f"{c.seconds_c0:.6f}", f"{c.seconds_rule:.6f}"])
    return buf.getvalue()


def write_gap_study(cells, records, outdir) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"cells": outdir / "gaps.csv", "records": outdir / "gap_records.csv",
             "timings": outdir / "gap_timings.csv"}
    paths["cells"].write_text(cells_csv(cells), newline="")
    paths["records"].write_text(records_csv(records), newline="")
    paths["timings"].write_text(timings_csv(cells), newline="")
    return paths
