"""Experiment drivers shared by scenario runs and the acceptance suite.

Every driver returns plain rows (lists of dicts) so that callers can write
CSVs in a fixed column order and derive pass/fail verdicts from them.
"""

from __future__ import annotations

import logging
import time

import numpy as np
from scipy.special import roots_jacobi
from scipy.stats import ks_2samp

from .bismut import bismut_check, bismut_weight, named_phi, tangent_process, upsilon_weight
from .frac_calc import GridFunction, apply_K_H, apply_K_H_inverse, volterra_kernel
from .gaussian_noise import (DRIVER_W, RngSpec, brownian_increments, covariance_R,
                             sample_fbm_cholesky, sample_fbm_volterra, sub_seed)
from .grid import TimeGrid
from .harnack import HarnackEnsembles, entropy_cost_check
from .model import gramian_U, kalman_index
from .solver import simulate_ensemble, solve_particles, stability_sweep

log = logging.getLogger(__name__)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# fractional operators


def inversion_error(H: float, nodes: int = 2048, T: float = 1.0) -> dict:
    """Relative error of ``K_H^{-1} K_H f`` on interior nodes for ``sin(2 pi t / T)``."""
    start = time.perf_counter()
    grid = TimeGrid(T, nodes - 1)
    f = GridFunction.from_callable(grid, lambda t: np.sin(2 * np.pi * t / T))
    back = apply_K_H_inverse(apply_K_H(f, H), H)
    inner = slice(1, -1)
    err = np.linalg.norm(back.values[inner] - f.values[inner]) / np.linalg.norm(f.values[inner])
    return {"H": H, "nodes": nodes, "rel_error": float(err),
            "runtime": time.perf_counter() - start}


def factorization_error(H: float, n_sample: int = 32, T: float = 1.0, quad: int = 400) -> dict:
    """``max |int K(t,r) K(s,r) dr - R_H(t,s)| / T^{2H}`` on an ``n x n`` node sample.

    The integral over ``[0, min(t,s)]`` uses Gauss-Jacobi rules matched to
    the endpoint singularities ``r^{-|2H-1|}`` and ``(m - r)^{H-1/2}``
    (``(t - r)^{2H-1}`` on the diagonal).
    """
    t = T * np.arange(1, n_sample + 1) / n_sample
    alpha = -abs(2 * H - 1)
    worst = 0.0
    for diag, beta in ((False, H - 0.5), (True, 2 * H - 1)):
        x, w = roots_jacobi(quad, beta, alpha)  # weight (1-x)^beta (1+x)^alpha
        for i, ti in enumerate(t):
            cols = [i] if diag else range(i)
            for j in cols:
                s = t[j]
                r = 0.5 * s * (x + 1.0)
                kt = volterra_kernel(ti, r, H) if ti > s else volterra_kernel(s, r, H)
                ks = volterra_kernel(s, r, H)
                f = kt * ks / (r**alpha * (s - r) ** beta)
                val = (0.5 * s) ** (1 + alpha + beta) * np.dot(w, f)
                worst = max(worst, abs(val - covariance_R(ti, s, H)))
    return {"H": H, "pairs": n_sample * n_sample, "max_error": worst / T ** (2 * H)}


# ---------------------------------------------------------------------------
# fBM law


def fbm_variance(H: float, n_paths: int, nodes: int, seed: int, threads: int = 1,
                 T: float = 1.0):
    """Variance curves of the Volterra and Cholesky samplers plus a KS test at ``T``.

    Returns ``(rows, summary)``; ``summary`` holds the normwise relative
    misfit ``||Var - t^{2H}|| / ||t^{2H}||`` over nodes ``t > 0`` for both
    samplers, the worst pointwise ratio, and the KS p-value.
    """
    grid = TimeGrid(T, nodes - 1)
    rng = RngSpec(sub_seed(seed, f"fbm:{H}"))
    dW = brownian_increments(rng, n_paths, grid, 1, DRIVER_W, threads)[:, :, 0]
    vol = sample_fbm_volterra(dW, H, grid, vector=False)
    chol = sample_fbm_cholesky(grid, H, rng, n_paths, threads)
    t = grid.times[1:]
    target = t ** (2 * H)
    vv = vol[:, 1:].var(axis=0, ddof=1)
    vc = chol[:, 1:].var(axis=0, ddof=1)
    rows = [{"H": H, "node": k + 1, "t": float(t[k]), "target": float(target[k]),
             "var_volterra": float(vv[k]), "var_cholesky": float(vc[k])}
            for k in range(t.size)]
    fit = lambda v: float(np.linalg.norm(v - target) / np.linalg.norm(target))
    ks = ks_2samp(vol[:, -1], chol[:, -1])
    summary = {"H": H, "misfit_volterra": fit(vv), "misfit_cholesky": fit(vc),
               "worst_ratio_volterra": float(np.max(np.abs(vv / target - 1))),
               "worst_ratio_cholesky": float(np.max(np.abs(vc / target - 1))),
               "ks_stat": float(ks.statistic), "ks_pvalue": float(ks.pvalue)}
    return rows, summary


# ---------------------------------------------------------------------------
# solver


def mean_field_oracle(model, law, T: float, steps: int, n_paths: int, seed: int,
                      threads: int = 1) -> dict:
    """Picard and particle means at ``T`` against the linear mean ODE."""
    grid = TimeGrid(T, steps)
    sol = simulate_ensemble(model, law, grid, n_paths, seed, "oracle", threads)
    part = solve_particles(model, sol.x0, grid, noise=sol.noise)
    a = float(model.A0[0, 0] + model.A1[0, 0])
    c = float(model.c[0])
    m0 = float(law.mean[0])
    exact = m0 * np.exp(a * T) + c / a * (np.exp(a * T) - 1.0)
    return {"exact": exact, "picard": float(sol.X[:, -1, 0].mean()),
            "particles": float(part.X[:, -1, 0].mean()), "iterations": sol.iterations}


def picard_diagnostics(scn, seed: int, threads: int = 1) -> dict:
    grid = scn.run.grid
    sol = simulate_ensemble(scn.model, scn.initial, grid, scn.run.paths, seed, "picard", threads)
    return {"distances": list(sol.distances), "ratios": sol.ratios,
            "iterations": sol.iterations}


def stability_rows(scn, seed: int, threads: int = 1):
    shifts = scn.option("stability", "shifts", [0.1, 0.3, 1.0])
    rows = stability_sweep(scn.model, scn.initial, shifts, scn.run.grid, scn.run.paths,
                           seed, threads)
    return [{"shift": r.shift, "node": r.node, "t": r.t, "w0": r.w0, "wt": r.wt,
             "ratio": r.ratio} for r in rows]


# ---------------------------------------------------------------------------
# Harnack / entropy cost


def _direction(dim: int) -> np.ndarray:
    return np.ones(dim) / np.sqrt(dim)


def harnack_suite(scn, seed: int, threads: int = 1, tolerance: float | None = None) -> dict:
    """Entropy-cost comparisons, the small-time sweep and the martingale check.

    One ``mu``-ensemble is shared by every comparison; each shift gets its
    own ``nu``-ensemble.
    """
    grid, n = scn.run.grid, scn.run.paths
    model = scn.model
    T = grid.T
    tol = scn.option("harnack", "tolerance", 0.1) if tolerance is None else tolerance
    shifts = [float(s) for s in scn.option("harnack", "shifts", [0.25, 0.5, 1.0])]
    blow = float(scn.option("harnack", "blowup_shift", 1.0))
    mart = float(scn.option("harnack", "martingale_shift", 0.25))
    d = _direction(model.dim)
    sol_mu = simulate_ensemble(model, scn.initial, grid, n, seed, "mu", threads)
    nu_cache = {}

    def ensembles(shift):
        if shift not in nu_cache:
            i = len(nu_cache)
            nu_cache[shift] = simulate_ensemble(model, scn.initial.shifted(shift * d), grid, n,
                                                seed, f"nu{i}", threads)
        return HarnackEnsembles(sol_mu, nu_cache[shift])

    def check(shift, t0):
        return entropy_cost_check(model, scn.initial, scn.initial.shifted(shift * d), t0, n,
                                  grid, seed, threads, tolerance=tol,
                                  ensembles=ensembles(shift), validate=False)

    def row(rep, kind):
        return {"scenario": scn.name, "kind": kind, "shift": rep.shift, "t0": rep.t0,
                "entropy": rep.entropy, "entropy_gaussian": rep.extras["entropy_gaussian"],
                "bound": rep.bound, "bound_weighted": rep.bound_weighted,
                "martingale_mean": rep.martingale_mean, "martingale_se": rep.martingale_se,
                "endpoint_error": rep.endpoint_error, "passed": rep.passed}

    entropy = [row(check(s, T), "shift") for s in shifts]
    t0s = [t for t in scn.run.t0 if t < T]
    blowup = [row(check(blow, t0), "blowup") for t0 in t0s]
    martingale = row(check(mart, T), "martingale")
    return {"entropy": entropy, "blowup": blowup, "martingale": martingale}


# ---------------------------------------------------------------------------
# Bismut


def bismut_row(scn, seed: int, threads: int = 1, paths: int | None = None,
               steps: int | None = None, t0: float | None = None, fd_check: bool = True) -> dict:
    paths = paths or int(scn.option("bismut", "paths", scn.run.paths))
    steps = steps or int(scn.option("bismut", "steps", scn.run.steps))
    T = scn.run.T
    t0 = T if t0 is None else t0
    grid = TimeGrid(T, steps)
    rep = bismut_check(scn.model, scn.initial, scn.option("bismut", "phi", "const"),
                       scn.option("bismut", "f", "x"), t0, paths, grid, seed, threads,
                       fd_check=fd_check, rel_tol=float(scn.option("bismut", "rel_tol", 0.1)))
    return {"scenario": scn.name, "t0": t0, "paths": paths, "steps": steps,
            "phi": scn.option("bismut", "phi", "const"), "f": scn.option("bismut", "f", "x"),
            "estimate": rep.estimate, "std_error": rep.std_error,
            "fd_value": rep.fd_value, "fd_error": rep.fd_error,
            "combined_se": rep.combined_se, "weight_mean": rep.weight_mean,
            "weight_se": rep.weight_se, "pass": rep.passed, "runtime": rep.runtime}


def brownian_reduction(scn, seed: int, threads: int = 1, t0: float | None = None) -> dict:
    """``max |M - phi(X_0) W_t0 / t0|`` over paths for an ``H = 1/2`` scenario."""
    grid = scn.run.grid
    t0 = grid.T if t0 is None else t0
    phi = named_phi(scn.option("bismut", "phi", "const"))
    sol = simulate_ensemble(scn.model, scn.initial, grid, scn.run.paths, seed, "brownian",
                            threads)
    tan = tangent_process(scn.model, sol, phi)
    ups = upsilon_weight(scn.model, tan, sol, t0)
    k0 = grid.node_index(t0)
    w = bismut_weight(ups, scn.model.sigma_inv(0.0), scn.model.hurst.H, sol.noise.dW, t0, grid)
    W = sol.noise.dW[:, :k0].sum(axis=1)
    classical = np.sum(tan.phi_vals * W, axis=1) / grid.times[k0]
    return {"scenario": scn.name, "t0": t0, "paths": scn.run.paths,
            "max_abs_diff": float(np.max(np.abs(w.M - classical))),
            "max_abs_weight": float(np.max(np.abs(classical)))}


# ---------------------------------------------------------------------------
# Gramian


def gramian_slope(A, B, ts) -> dict:
    """Power-law slope of ``min eig U_t`` against ``t``, with the expected ``2k + 1``."""
    ev = np.array([gramian_U(t, A, B)[1] for t in ts])
    k = kalman_index(A, B)
    return {"slope": loglog_slope(ts, ev), "expected": 2 * k + 1, "kalman_index": k,
            "min_eigs": ev.tolist()}
