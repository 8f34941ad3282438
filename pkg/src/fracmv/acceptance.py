"""The acceptance suite: thirteen numbered criteria evaluated at their stated
tolerances.

Each criterion writes its measurements as CSV into the output directory and
contributes one line to ``summary.csv``.  CSVs carry no timings, so two runs
with the same seed are byte-identical whatever the thread count; timings go
to ``timings.txt``.  Criterion 13 compares the CSVs of this run with a
previous run given by ``compare``.
"""

from __future__ import annotations

import csv
import filecmp
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .experiments import (bismut_row, brownian_reduction, factorization_error, fbm_variance,
                          gramian_slope, harnack_suite, inversion_error, loglog_slope,
                          mean_field_oracle, picard_diagnostics)
from .scenario import load_scenario, shipped_scenarios

log = logging.getLogger(__name__)

DEFAULT_SEED = 20261014
HARNACK_SCENARIOS = ("linear_1d_H07", "linear_1d_H03", "kinetic_H07")
BISMUT_SCENARIOS = ("linear_1d_H07", "kinetic_H07")
CHAIN_A = [[0.0, 1.0], [0.0, 0.0]]
CHAIN_B = [[0.0], [1.0]]
KINETIC_A = [[0.0]]
KINETIC_B = [[1.0]]


@dataclass
class CriterionResult:
    number: int
    name: str
    measured: str
    threshold: str
    passed: bool
    runtime: float = 0.0
    timing: str = ""  # shown in the report line, kept out of summary.csv

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        timing = f"; {self.timing}" if self.timing else ""
        return (f"[{verdict}] criterion {self.number:2d} {self.name}: "
                f"{self.measured}{timing} (threshold {self.threshold})")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


# ---------------------------------------------------------------------------
# criteria


def c01(out, seed, threads):
    rows = [inversion_error(H) for H in (0.3, 0.7)]
    for r in rows:
        r["pass"] = r["rel_error"] <= 1e-2 and r["runtime"] < 10.0
    write_csv(out / "c01_inversion.csv", rows, ["H", "nodes", "rel_error"])
    worst = max(r["rel_error"] for r in rows)
    slow = max(r["runtime"] for r in rows)
    return CriterionResult(1, "operator inversion", f"max rel error {worst:.3e}", "1e-2, 10s",
                           all(r["pass"] for r in rows), timing=f"max runtime {slow:.2f}s")


def c02(out, seed, threads):
    rows = [factorization_error(H) for H in (0.3, 0.7)]
    for r in rows:
        r["pass"] = r["max_error"] <= 1e-3
    write_csv(out / "c02_factorization.csv", rows, ["H", "pairs", "max_error", "pass"])
    worst = max(r["max_error"] for r in rows)
    return CriterionResult(2, "kernel factorization", f"max error {worst:.3e}", "1e-3 T^2H",
                           all(r["pass"] for r in rows))


def c03(out, seed, threads):
    curves, rows = [], []
    for H in (0.3, 0.5, 0.7):
        c, s = fbm_variance(H, 10_000, 64, seed, threads)
        s["pass"] = s["misfit_volterra"] <= 0.05 and s["ks_pvalue"] >= 0.05
        curves += c
        rows.append(s)
    write_csv(out / "fbm_variance.csv", curves,
              ["H", "node", "t", "target", "var_volterra", "var_cholesky"])
    write_csv(out / "c03_fbm_law.csv", rows,
              ["H", "misfit_volterra", "misfit_cholesky", "worst_ratio_volterra",
               "worst_ratio_cholesky", "ks_stat", "ks_pvalue", "pass"])
    mis = max(r["misfit_volterra"] for r in rows)
    p = min(r["ks_pvalue"] for r in rows)
    return CriterionResult(3, "fBM law", f"max variance misfit {mis:.3%}, min KS p {p:.3f}",
                           "5%, p >= 0.05", all(r["pass"] for r in rows))


def c04(out, seed, threads):
    scn = load_scenario("linear_1d_H07")
    r = mean_field_oracle(scn.model, scn.initial, 1.0, 256, 10_000, seed, threads)
    r["err_picard"] = abs(r["picard"] - r["exact"])
    r["err_particles"] = abs(r["particles"] - r["exact"])
    r["pass"] = max(r["err_picard"], r["err_particles"]) <= 0.02
    write_csv(out / "c04_mean_field.csv", [r],
              ["exact", "picard", "particles", "err_picard", "err_particles", "iterations",
               "pass"])
    return CriterionResult(4, "mean-field oracle",
                           f"|picard - ode| {r['err_picard']:.2e}, "
                           f"|particles - ode| {r['err_particles']:.2e}", "0.02", r["pass"])


def c05(out, seed, threads):
    rows, ok, worst = [], True, 0.0
    for name in shipped_scenarios():
        scn = load_scenario(name)
        d = picard_diagnostics(scn, seed, threads)
        ratios = [float("nan")] + d["ratios"]
        for i, (dist, rat) in enumerate(zip(d["distances"], ratios)):
            rows.append({"scenario": name, "iteration": i + 1, "distance": dist, "ratio": rat})
        if d["ratios"]:
            worst = max(worst, max(d["ratios"]))
            ok &= all(r < 1.0 for r in d["ratios"])
    write_csv(out / "c05_picard.csv", rows, ["scenario", "iteration", "distance", "ratio"])
    return CriterionResult(5, "Picard contraction", f"max ratio {worst:.3f}", "< 1", ok)


def _harnack(out, seed, threads, cache):
    if "harnack" not in cache:
        res = {name: harnack_suite(load_scenario(name), seed, threads)
               for name in HARNACK_SCENARIOS}
        cols = ["scenario", "kind", "shift", "t0", "entropy", "entropy_gaussian", "bound",
                "bound_weighted", "martingale_mean", "martingale_se", "endpoint_error",
                "passed"]
        write_csv(out / "entropy_cost.csv", [r for v in res.values() for r in v["entropy"]], cols)
        write_csv(out / "blowup.csv", [r for v in res.values() for r in v["blowup"]], cols)
        write_csv(out / "martingale.csv", [v["martingale"] for v in res.values()], cols)
        cache["harnack"] = res
    return cache["harnack"]


def c06(out, seed, threads, cache):
    res = _harnack(out, seed, threads, cache)
    rows, ok = [], True
    for name, v in res.items():
        deg = load_scenario(name).degenerate
        err = max(r["endpoint_error"] for r in v["entropy"] + v["blowup"] + [v["martingale"]])
        thr = 1e-8 if deg else 1e-10
        rows.append({"scenario": name, "degenerate": deg, "max_endpoint_error": err,
                     "threshold": thr, "pass": err <= thr})
        ok &= err <= thr
    write_csv(out / "c06_endpoint.csv", rows,
              ["scenario", "degenerate", "max_endpoint_error", "threshold", "pass"])
    worst = ", ".join(f"{r['scenario']} {r['max_endpoint_error']:.1e}" for r in rows)
    return CriterionResult(6, "coupling endpoint", worst, "1e-10 / 1e-8 (degenerate)", ok)


def c07(out, seed, threads, cache):
    res = _harnack(out, seed, threads, cache)
    parts, ok = [], True
    for name, v in res.items():
        m = v["martingale"]
        dev = abs(m["martingale_mean"] - 1.0)
        ok &= dev <= 3 * m["martingale_se"]
        parts.append(f"{name} |E R - 1| {dev:.4f} vs 3SE {3 * m['martingale_se']:.4f}")
    return CriterionResult(7, "Girsanov martingale", "; ".join(parts), "3 SE", ok)


def c08(out, seed, threads, cache):
    res = _harnack(out, seed, threads, cache)
    rows, ok, parts = [], True, []
    for name, v in res.items():
        e = v["entropy"]
        slope = loglog_slope([r["shift"] for r in e], [r["bound"] for r in e])
        ineq = all(r["entropy"] <= r["bound"] + 0.1 for r in e)
        good = ineq and abs(slope - 2.0) <= 0.3
        rows.append({"scenario": name, "slope": slope, "inequality": ineq, "pass": good})
        ok &= good
        parts.append(f"{name} slope {slope:.3f}")
    write_csv(out / "c08_entropy_cost.csv", rows, ["scenario", "slope", "inequality", "pass"])
    return CriterionResult(8, "entropy cost", "; ".join(parts) + "; Ent <= bound + 0.1 in all",
                           "Ent <= bound + 0.1, slope 2 +- 0.3", ok)


def c09(out, seed, threads, cache):
    res = _harnack(out, seed, threads, cache)
    rows, ok, parts = [], True, []
    for name, v in res.items():
        H = load_scenario(name).model.hurst.H
        b = v["blowup"]
        slope = loglog_slope([r["t0"] for r in b], [r["bound"] for r in b])
        thr = -2 * H + 0.3
        rows.append({"scenario": name, "H": H, "slope": slope, "threshold": thr,
                     "pass": slope <= thr})
        ok &= slope <= thr
        parts.append(f"{name} slope {slope:.3f} (<= {thr:.2f})")
    write_csv(out / "c09_blowup.csv", rows, ["scenario", "H", "slope", "threshold", "pass"])
    return CriterionResult(9, "small-time blow-up", "; ".join(parts), "-2H + 0.3", ok)


def c10(out, seed, threads):
    rows = [bismut_row(load_scenario(name), seed, threads, paths=100_000, steps=256)
            for name in BISMUT_SCENARIOS]
    for r in rows:
        r["within_budget"] = r["runtime"] < 300.0
    write_csv(out / "bismut_fd.csv", rows,
              ["scenario", "t0", "paths", "steps", "phi", "f", "estimate", "std_error",
               "fd_value", "fd_error", "combined_se", "weight_mean", "weight_se", "pass"])
    parts = [f"{r['scenario']} {r['estimate']:.4f}+-{r['std_error']:.4f} vs FD "
             f"{r['fd_value']:.4f}" for r in rows]
    ok = all(r["pass"] and r["within_budget"] for r in rows)
    return CriterionResult(10, "Bismut vs finite difference", "; ".join(parts),
                           "max(3 combined SE, 10%), < 300s", ok, sum(r["runtime"] for r in rows),
                           timing=", ".join(f"{r['scenario']} {r['runtime']:.0f}s" for r in rows))


def c11(out, seed, threads):
    r = brownian_reduction(load_scenario("brownian_zero_drift"), seed, threads)
    r["pass"] = r["max_abs_diff"] <= 1e-10
    write_csv(out / "c11_brownian.csv", [r],
              ["scenario", "t0", "paths", "max_abs_diff", "max_abs_weight", "pass"])
    return CriterionResult(11, "Brownian reduction", f"max |M - phi W/t0| {r['max_abs_diff']:.2e}",
                           "1e-10", r["pass"])


def c12(out, seed, threads):
    ts = np.geomspace(0.05, 1.0, 8)
    chain = gramian_slope(np.array(CHAIN_A), np.array(CHAIN_B), ts)
    pair = gramian_slope(np.array(KINETIC_A), np.array(KINETIC_B), ts)
    rows = []
    for label, g in (("chain_m2", chain), ("kinetic_pair_m1", pair)):
        g["system"] = label
        g["pass"] = abs(g["slope"] - g["expected"]) <= 0.3
        rows.append(g)
    write_csv(out / "c12_gramian.csv", rows, ["system", "kalman_index", "expected", "slope", "pass"])
    return CriterionResult(12, "Gramian law", f"chain slope {chain['slope']:.3f}, "
                           f"kinetic pair slope {pair['slope']:.3f}",
                           "2k+1 +- 0.3 (3 for the chain, 1 for the pair)",
                           all(r["pass"] for r in rows))


def compare_dirs(a: Path, b: Path):
    """Names of CSVs that differ (or are missing) between two run directories."""
    names = sorted({p.name for p in Path(a).glob("*.csv")} | {p.name for p in Path(b).glob("*.csv")})
    bad = [n for n in names
           if not ((Path(a) / n).exists() and (Path(b) / n).exists()
                   and filecmp.cmp(Path(a) / n, Path(b) / n, shallow=False))]
    return names, bad


CRITERIA = {1: c01, 2: c02, 3: c03, 4: c04, 5: c05, 6: c06, 7: c07, 8: c08, 9: c09,
            10: c10, 11: c11, 12: c12}
_NEEDS_CACHE = {6, 7, 8, 9}


def run_acceptance(out_dir, seed: int = DEFAULT_SEED, threads: int = 1, compare=None,
                   only=None, plots: bool = True, echo=print) -> list[CriterionResult]:
    """Run the criteria (all, or those in ``only``) and write CSVs and summaries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = {}
    results = []
    for num, fn in CRITERIA.items():
        if only and num not in only:
            continue
        start = time.perf_counter()
        res = fn(out, seed, threads, cache) if num in _NEEDS_CACHE else fn(out, seed, threads)
        res.runtime = res.runtime or time.perf_counter() - start
        results.append(res)
        echo(res.line())
    write_csv(out / "summary.csv",
              [{"criterion": r.number, "name": r.name, "measured": r.measured,
                "threshold": r.threshold, "pass": r.passed} for r in results],
              ["criterion", "name", "measured", "threshold", "pass"])
    if compare is not None and (not only or 13 in only):
        names, bad = compare_dirs(out, Path(compare))
        res = CriterionResult(13, "determinism",
                              f"{len(names) - len(bad)}/{len(names)} CSVs byte-identical"
                              + (f", differing: {', '.join(bad)}" if bad else ""),
                              "all identical", not bad)
        results.append(res)
        echo(res.line())
    with open(out / "timings.txt", "w") as fh:
        for r in results:
            fh.write(f"criterion {r.number}: {r.runtime:.1f}s\n")
    with open(out / "summary.txt", "w") as fh:
        fh.write("\n".join(r.line() for r in results) + "\n")
    if plots:
        from .plots import emit_plots
        emit_plots(out)
    return results
