"""Command-line interface.

Exit codes: 0 success, 1 a check failed, 2 the scenario or arguments could
not be parsed, 3 the model violates its hypotheses (including a singular
controllability Gramian).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .acceptance import DEFAULT_SEED, run_acceptance, write_csv
from .errors import ConfigError, DegeneracyError, FracMVError, HypothesisViolation
from .experiments import (bismut_row, factorization_error, harnack_suite, inversion_error,
                          loglog_slope, picard_diagnostics, stability_rows)
from .gaussian_noise import NoiseBundle, RngSpec, sub_seed
from .grid import TimeGrid
from .harnack import entropy_cost_check
from .model import DegenerateSpec, gramian_U, validate_hypotheses
from .scenario import load_scenario
from .solver import simulate_ensemble

log = logging.getLogger("fracmv")

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_HYPOTHESIS = 0, 1, 2, 3
OUT_ENV = "FRACMV_OUT"


def _out_dir(args) -> Path:
    d = Path(getattr(args, "out", None) or os.environ.get(OUT_ENV) or "fracmv_out")
    return d


def _out_file(args, default_name: str) -> Path:
    """``--out x.csv`` names the file; any other ``--out`` is a directory."""
    out = getattr(args, "out", None)
    if out and str(out).endswith(".csv"):
        p = Path(out)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p
    d = _out_dir(args)
    d.mkdir(parents=True, exist_ok=True)
    return d / default_name


def _seed(args, scn=None) -> int:
    if args.seed is not None:
        return args.seed
    return scn.run.seed if scn is not None else DEFAULT_SEED


def _check_scenario(scn) -> None:
    """Hypothesis and Gramian checks; raise before any simulation starts."""
    model = scn.model
    inner = model.inner if isinstance(model, DegenerateSpec) else model
    validate_hypotheses(inner, T=scn.run.T)
    if isinstance(model, DegenerateSpec):
        gramian_U(min(scn.run.t0 + (scn.run.T,)), model.A, model.B_mat)


# ---------------------------------------------------------------------------
# subcommands


def cmd_frac_selftest(args) -> int:
    rows = []
    for H in args.H:
        inv = inversion_error(H, args.nodes)
        fac = factorization_error(H)
        rows.append({"H": H, "inversion_error": inv["rel_error"],
                     "factorization_error": fac["max_error"],
                     "pass": inv["rel_error"] <= 1e-2 and fac["max_error"] <= 1e-3})
        print(f"H={H}: inversion {inv['rel_error']:.3e} ({inv['runtime']:.2f}s), "
              f"factorization {fac['max_error']:.3e}")
    write_csv(_out_file(args, "frac_selftest.csv"), rows,
              ["H", "inversion_error", "factorization_error", "pass"])
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL


def cmd_fbm_sample(args) -> int:
    grid = TimeGrid(args.T, args.steps)
    noise = NoiseBundle.generate(RngSpec(sub_seed(_seed(args), "fbm-sample")), args.paths, grid,
                                 1, args.H, args.Htilde, args.threads)
    rows = [{"path_id": p, "node_index": k, "t": float(grid.times[k]),
             "B_H": float(noise.B_H[p, k, 0]), "B_Htilde": float(noise.B_Htilde[p, k, 0])}
            for p in range(args.paths) for k in range(grid.node_count)]
    path = _out_file(args, "fbm_sample.csv")
    write_csv(path, rows, ["path_id", "node_index", "t", "B_H", "B_Htilde"])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn = load_scenario(args.scenario)
    _check_scenario(scn)
    grid = TimeGrid(scn.run.T, args.steps or scn.run.steps)
    n = args.paths or scn.run.paths
    sol = simulate_ensemble(scn.model, scn.initial, grid, n, _seed(args, scn), "simulate",
                            args.threads)
    d = sol.X.shape[2]
    cols = ["path_id", "node", "t"] + [f"x{i + 1}" for i in range(d)]
    rows = []
    for p in range(n):
        for k in range(grid.node_count):
            r = {"path_id": p, "node": k, "t": float(grid.times[k])}
            r.update({f"x{i + 1}": float(sol.X[p, k, i]) for i in range(d)})
            rows.append(r)
    path = _out_file(args, "simulate.csv")
    write_csv(path, rows, cols)
    print(f"wrote {path}: {n} paths, {sol.iterations} Picard iterations, "
          f"ratios {', '.join(f'{r:.3f}' for r in sol.ratios)}")
    return EXIT_OK


def cmd_stability(args) -> int:
    scn = load_scenario(args.scenario)
    _check_scenario(scn)
    rows = stability_rows(scn, _seed(args, scn), args.threads)
    write_csv(_out_file(args, "stability.csv"), rows, ["shift", "node", "t", "w0", "wt", "ratio"])
    C = max(r["ratio"] for r in rows)
    print(f"max W_p ratio {C:.4f}")
    return EXIT_OK if np.isfinite(C) and C <= args.max_ratio else EXIT_FAIL


def cmd_harnack(args) -> int:
    scn = load_scenario(args.scenario)
    _check_scenario(scn)
    grid = scn.run.grid
    n = args.paths or scn.run.paths
    d = np.ones(scn.model.dim) / np.sqrt(scn.model.dim)
    from .harnack import HarnackEnsembles, run_coupling

    seed = _seed(args, scn)
    nu = scn.initial.shifted(args.shift * d)
    ens = HarnackEnsembles(simulate_ensemble(scn.model, scn.initial, grid, n, seed, "mu", args.threads),
                           simulate_ensemble(scn.model, nu, grid, n, seed, "nu0", args.threads))
    rep = entropy_cost_check(scn.model, scn.initial, nu, args.t0, n, grid, seed, args.threads,
                             ensembles=ens, validate=False)
    _, rec, _ = run_coupling(scn.model, ens.mu, ens.nu, ens.mu.x0 + args.shift * d, args.t0)
    write_csv(_out_file(args, "harnack_paths.csv"),
              [{"path_id": i, "log_R": float(rec.log_R[i]), "quad_norm": float(rec.quad_norm[i])}
               for i in range(n)], ["path_id", "log_R", "quad_norm"])
    print(f"t0 = {rep.t0}\nshift = {rep.shift}\nW_p = {rep.w_p:.6g}\n"
          f"entropy (k-NN) = {rep.entropy:.6g}\n"
          f"entropy (Gaussian fit) = {rep.extras['entropy_gaussian']:.6g}\n"
          f"bound = {rep.bound:.6g}\nE[R] = {rep.martingale_mean:.6f} +- {rep.martingale_se:.6f}\n"
          f"endpoint error = {rep.endpoint_error:.3e}\n"
          f"verdict = {'pass' if rep.passed else 'fail'}")
    return EXIT_OK if rep.passed else EXIT_FAIL


def _bismut_common(args, degenerate: bool) -> int:
    scn = load_scenario(args.scenario)
    if scn.degenerate != degenerate:
        raise ConfigError("degenerate-bismut needs a degenerate scenario, bismut a "
                          "non-degenerate one")
    _check_scenario(scn)
    if args.phi:
        scn.options.setdefault("bismut", {})["phi"] = args.phi
    if args.f:
        scn.options.setdefault("bismut", {})["f"] = args.f
    r = bismut_row(scn, _seed(args, scn), args.threads, paths=args.paths, steps=args.steps,
                   t0=args.t0, fd_check=args.fd_check)
    write_csv(_out_file(args, "bismut.csv"), [r],
              ["estimate", "std_error", "fd_value", "fd_error", "pass"])
    msg = f"estimate {r['estimate']:.6g} +- {r['std_error']:.3g}"
    if args.fd_check:
        msg += f"; finite difference {r['fd_value']:.6g} +- {r['fd_error']:.3g}"
    print(msg + f"; E[M] = {r['weight_mean']:.4g} +- {r['weight_se']:.3g}")
    return EXIT_OK if r["pass"] in (True, None) else EXIT_FAIL


def cmd_bismut(args) -> int:
    return _bismut_common(args, False)


def cmd_degenerate_bismut(args) -> int:
    return _bismut_common(args, True)


def run_scenario(source, out_dir=None, seed=None, threads: int = 1) -> int:
    """Execute a scenario's experiments; returns the exit code."""
    try:
        scn = load_scenario(source)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        _check_scenario(scn)
    except (HypothesisViolation, DegeneracyError) as exc:
        print(f"hypothesis check failed: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    out = Path(out_dir or scn.out_dir or os.environ.get(OUT_ENV) or "fracmv_out") / scn.name
    out.mkdir(parents=True, exist_ok=True)
    seed = scn.run.seed if seed is None else seed
    checks = []  # (check, measured, threshold, verdict)

    if "selftests" in scn.checks:
        H = scn.model.hurst.H
        if H != 0.5:
            inv, fac = inversion_error(H), factorization_error(H)
            checks.append(("inversion", inv["rel_error"], 1e-2, inv["rel_error"] <= 1e-2))
            checks.append(("factorization", fac["max_error"], 1e-3, fac["max_error"] <= 1e-3))
        pic = picard_diagnostics(scn, seed, threads)
        worst = max(pic["ratios"]) if pic["ratios"] else 0.0
        checks.append(("picard_ratio", worst, 1.0, worst < 1.0))
    if "stability" in scn.checks:
        rows = stability_rows(scn, seed, threads)
        write_csv(out / "stability.csv", rows, ["shift", "node", "t", "w0", "wt", "ratio"])
        C = max(r["ratio"] for r in rows)
        limit = float(scn.option("stability", "max_ratio", 10.0))
        checks.append(("stability_ratio", C, limit, bool(np.isfinite(C) and C <= limit)))
    if "harnack" in scn.checks:
        res = harnack_suite(scn, seed, threads)
        cols = ["scenario", "kind", "shift", "t0", "entropy", "entropy_gaussian", "bound",
                "martingale_mean", "martingale_se", "endpoint_error", "passed"]
        write_csv(out / "entropy_cost.csv", res["entropy"] + res["blowup"] + [res["martingale"]],
                  cols)
        tol = scn.option("harnack", "tolerance", 0.1)
        gap = max(r["entropy"] - r["bound"] for r in res["entropy"] + res["blowup"])
        checks.append(("entropy_minus_bound", gap, tol, gap <= tol))
        slope = loglog_slope([r["shift"] for r in res["entropy"]], [r["bound"] for r in res["entropy"]])
        checks.append(("bound_shift_slope", slope, "2 +- 0.3", abs(slope - 2) <= 0.3))
        if res["blowup"]:
            H = scn.model.hurst.H
            bs = loglog_slope([r["t0"] for r in res["blowup"]], [r["bound"] for r in res["blowup"]])
            checks.append(("bound_t0_slope", bs, -2 * H + 0.3, bs <= -2 * H + 0.3))
        m = res["martingale"]
        dev = abs(m["martingale_mean"] - 1)
        checks.append(("martingale", dev, 3 * m["martingale_se"], dev <= 3 * m["martingale_se"]))
        ep = max(r["endpoint_error"] for r in res["entropy"] + res["blowup"])
        thr = 1e-8 if scn.degenerate else 1e-10
        checks.append(("endpoint", ep, thr, ep <= thr))
    if "bismut" in scn.checks:
        r = bismut_row(scn, seed, threads)
        write_csv(out / "bismut.csv", [r], ["estimate", "std_error", "fd_value", "fd_error", "pass"])
        checks.append(("bismut_vs_fd", abs(r["estimate"] - r["fd_value"]),
                       max(3 * r["combined_se"], 0.1 * abs(r["fd_value"])), bool(r["pass"])))
        checks.append(("weight_mean", abs(r["weight_mean"]), 3 * r["weight_se"],
                       abs(r["weight_mean"]) <= 3 * r["weight_se"]))

    rows = [{"check": c, "measured": m, "threshold": t, "pass": v} for c, m, t, v in checks]
    write_csv(out / "summary.csv", rows, ["check", "measured", "threshold", "pass"])
    for r in rows:
        print(f"[{'PASS' if r['pass'] else 'FAIL'}] {scn.name} {r['check']}: "
              f"{r['measured']:.6g} (threshold {r['threshold']})")
    if scn.emit_plots:
        from .plots import emit_plots
        emit_plots(out)
    return EXIT_OK if all(v for *_, v in checks) else EXIT_FAIL


def cmd_run(args) -> int:
    return run_scenario(args.scenario, args.out, args.seed, args.threads)


def cmd_accept(args) -> int:
    only = set(args.only) if args.only else None
    res = run_acceptance(_out_dir(args), _seed(args), args.threads, compare=args.compare,
                         only=only, plots=not args.no_plots)
    return EXIT_OK if all(r.passed for r in res) else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _common(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker threads for noise generation")
    p.add_argument("--out", default=default,
                   help=f"output directory (or .csv file); defaults to ${OUT_ENV}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracmv", description="Fractional McKean-Vlasov experiments.",
                                 epilog=__doc__.split("\n\n", 1)[1])
    _common(ap, suppress=False)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        _common(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    p = add("frac-selftest", cmd_frac_selftest, "fractional-operator self-tests")
    p.add_argument("--H", type=float, nargs="+", default=[0.3, 0.7])
    p.add_argument("--nodes", type=int, default=2048)

    p = add("fbm-sample", cmd_fbm_sample, "sample fBM paths to CSV")
    p.add_argument("--H", type=float, default=0.7)
    p.add_argument("--Htilde", type=float, default=0.8)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=64)
    p.add_argument("--paths", type=int, default=10)

    p = add("simulate", cmd_simulate, "solve a scenario's equation and write the paths")
    p.add_argument("--scenario", required=True)
    p.add_argument("--paths", type=int)
    p.add_argument("--steps", type=int)

    p = add("stability", cmd_stability, "Wasserstein stability ratios over shifted laws")
    p.add_argument("--scenario", required=True)
    p.add_argument("--max-ratio", type=float, default=10.0)

    p = add("harnack", cmd_harnack, "entropy-cost check for one shift and target time")
    p.add_argument("--scenario", required=True)
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--paths", type=int)
    p.add_argument("--shift", type=float, default=0.5)

    for name, fn in (("bismut", cmd_bismut), ("degenerate-bismut", cmd_degenerate_bismut)):
        p = add(name, fn, "Bismut estimate of a Lions derivative")
        p.add_argument("--scenario", required=True)
        p.add_argument("--t0", type=float)
        p.add_argument("--paths", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--phi", help="named direction: const, identity, first, last, zero")
        p.add_argument("--f", help="named functional: x, last, sum, tanh, sin, one")
        p.add_argument("--fd-check", action="store_true", help="compare with finite differences")

    p = add("run", cmd_run, "run every experiment a scenario enables")
    p.add_argument("--scenario", required=True)

    p = add("accept", cmd_accept, "run the acceptance suite")
    p.add_argument("--compare", help="directory of a previous run for the determinism check")
    p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    p.add_argument("--no-plots", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (HypothesisViolation, DegeneracyError) as exc:
        print(f"hypothesis check failed: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except FracMVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
