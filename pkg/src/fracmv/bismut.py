"""Tangent processes, Bismut weights and Monte Carlo Lions derivatives.

The derivative of ``mu -> P_t f(mu)`` in the direction ``phi`` is written as
``E[f(X_t) M]`` with a stochastic-integral weight ``M`` built from the
tangent process ``G = nabla_phi X`` and the measure-noise tangent
``Lambda``.  A common-random-number finite difference serves as oracle.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DivergenceError, ParameterError
from .gaussian_noise import NoiseBundle, RngSpec, sub_seed
from .grid import TimeGrid
from .harnack import _as_sigma_inv, kernel_transform, mean_with_se, steering_terms
from .measures import _neville_at_zero
from .model import DegenerateSpec, gramian_U, validate_hypotheses
from .solver import (SolveOutput, _split, _step_propagators, initial_points,
                     solve_picard)

log = logging.getLogger(__name__)

FD_EPS = (0.02, 0.01, 0.005)


# ---------------------------------------------------------------------------
# named directions and functionals


def _phi_const(x):
    return np.ones_like(x)


def _phi_last(x):
    out = np.zeros_like(x)
    out[:, -1] = 1.0
    return out


def _phi_first(x):
    out = np.zeros_like(x)
    out[:, 0] = 1.0
    return out


PHI_FAMILIES = {
    "const": _phi_const,          # phi(x) = (1, ..., 1)
    "identity": lambda x: np.array(x, dtype=float),
    "first": _phi_first,          # unit vector along the first coordinate
    "last": _phi_last,            # unit vector along the last coordinate
    "zero": np.zeros_like,
}

F_FAMILIES = {
    "x": lambda x: x[:, 0],
    "last": lambda x: x[:, -1],
    "sum": lambda x: x.sum(axis=1),
    "tanh": lambda x: np.tanh(x[:, -1]),
    "sin": lambda x: np.sin(x[:, -1]),
    "one": lambda x: np.ones(x.shape[0]),
}


def named_phi(name: str):
    try:
        return PHI_FAMILIES[name]
    except KeyError:
        raise ParameterError(f"unknown direction {name!r}; choose from {sorted(PHI_FAMILIES)}")


def named_f(name: str):
    try:
        return F_FAMILIES[name]
    except KeyError:
        raise ParameterError(f"unknown functional {name!r}; choose from {sorted(F_FAMILIES)}")


# ---------------------------------------------------------------------------
# tangent process


@dataclass
class TangentBundle:
    """``G = nabla_phi X`` ``(N, nodes, d)``, ``Lambda`` ``(N, nodes, l)`` and
    ``phi(X_0)``."""

    grid: TimeGrid
    G: np.ndarray
    Lambda: np.ndarray
    phi_vals: np.ndarray


def _phi_values(phi, x0):
    v = np.asarray(phi(x0), dtype=float).reshape(x0.shape)
    if not np.all(np.isfinite(v)):
        raise ContractError("phi returned non-finite values")
    return v


def tangent_process(model, solve_out: SolveOutput, phi, check_every: int = 16) -> TangentBundle:
    """Euler scheme for the linearized equation along ``solve_out``.

    Expectations against ``G`` are averages over the ensemble at each step.
    For a degenerate system the first block follows ``dG1 = (A G1 + B G2)dt``
    through the same step propagators as the solver.
    """
    deg, inner = _split(model)
    grid = solve_out.grid
    X = solve_out.X
    n, nodes, d = X.shape
    l = inner.noise_dim
    t = grid.times
    dt = grid.dt
    phi_vals = _phi_values(phi, solve_out.x0)
    G = np.empty((nodes, n, d)).transpose(1, 0, 2)
    Lam = np.zeros((nodes, n, l)).transpose(1, 0, 2)
    G[:, 0] = phi_vals
    dBT = np.diff(solve_out.noise.B_Htilde, axis=1)
    if deg is not None:
        E, F = _step_propagators(deg, dt)
        m = deg.m
    flow = solve_out.law_flow
    for k in range(grid.n_steps):
        xk, gk = X[:, k], G[:, k]
        law = flow.at(k)
        gb = np.asarray(inner.grad_b(t[k], xk, law))
        drift = np.einsum("nij,nj->ni", gb, gk) + inner.lions_b_expect(t[k], xk, law, gk)
        S = np.asarray(inner.lions_sigma_tilde_expect(t[k], law, gk))
        dlam = dBT[:, k] @ S.T
        Lam[:, k + 1] = Lam[:, k] + dlam
        dv = drift * dt + dlam
        if deg is None:
            G[:, k + 1] = gk + dv
        else:
            G[:, k + 1, :m] = gk[:, :m] @ E.T + gk[:, m:] @ F.T
            G[:, k + 1, m:] = gk[:, m:] + dv
        if (k + 1) % check_every == 0 or k + 1 == grid.n_steps:
            if not np.all(np.isfinite(G[:, k + 1])):
                raise DivergenceError(f"tangent process diverged at node {k + 1}", node=k + 1)
    return TangentBundle(grid, G, Lam, phi_vals)


def lambda_process(model, tangent: TangentBundle, solve_out: SolveOutput,
                   B_tilde: np.ndarray) -> np.ndarray:
    """``Lambda_s`` along a given ``B~`` path (or batch of paths).

    ``B_tilde`` has nodes on axis ``-2``; the coefficient
    ``E<D^L sigma~(mu_r)(X_r), G_r>`` is the ensemble average of the tangent.
    """
    _, inner = _split(model)
    grid = tangent.grid
    if solve_out.grid != grid:
        raise ContractError("tangent and solution live on different grids")
    B_tilde = np.asarray(B_tilde, dtype=float)
    if B_tilde.shape[-2] != grid.node_count:
        raise ContractError("B~ path and tangent have different node counts")
    dB = np.diff(B_tilde, axis=-2)
    inc = np.empty(dB.shape[:-1] + (inner.noise_dim,))
    for k in range(grid.n_steps):
        S = np.asarray(inner.lions_sigma_tilde_expect(
            grid.times[k], solve_out.law_flow.at(k), tangent.G[:, k]))
        inc[..., k, :] = dB[..., k, :] @ S.T
    out = np.zeros(inc.shape[:-2] + (grid.node_count, inner.noise_dim))
    np.cumsum(inc, axis=-2, out=out[..., 1:, :])
    return out


# ---------------------------------------------------------------------------
# weights


@dataclass
class BismutWeight:
    """Per-path weight ``upsilon`` ``(N, k0+1, l)``, its ``K_H^{-1}``
    transform and the stochastic integral ``M``."""

    upsilon: np.ndarray
    kernel_vals: np.ndarray
    M: np.ndarray


def _drift_linearization(inner, sol: SolveOutput, tangent: TangentBundle, V: np.ndarray):
    """``grad_b_r V_r + E<D^L b_r, G_r>`` at nodes ``0..k0`` (``V`` is ``(N, k0+1, d)``)."""
    t = sol.grid.times
    out = np.empty(V.shape[:2] + (inner.noise_dim,))
    for k in range(V.shape[1]):
        xk, law = sol.X[:, k], sol.law_flow.at(k)
        gb = np.asarray(inner.grad_b(t[k], xk, law))
        out[:, k] = (np.einsum("nij,nj->ni", gb, V[:, k])
                     + inner.lions_b_expect(t[k], xk, law, tangent.G[:, k]))
    return out


def upsilon_weight(model, tangent: TangentBundle, solve_out: SolveOutput, t0: float) -> np.ndarray:
    """``Upsilon_{r,t0}`` at nodes ``r = 0..k0`` for every path ``(N, k0+1, d)``."""
    deg, inner = _split(model)
    if deg is not None:
        raise ContractError("degenerate systems use degenerate_weights")
    grid = solve_out.grid
    k0 = grid.node_index(t0)
    t0 = grid.times[k0]
    r = grid.times[: k0 + 1][None, :, None]
    phi = tangent.phi_vals[:, None, :]
    lam = tangent.Lambda[:, : k0 + 1]
    lam_t0 = lam[:, k0:k0 + 1]
    v = ((t0 - r) / t0) * phi - (r / t0) * lam_t0 + lam
    return (phi + lam_t0) / t0 + _drift_linearization(inner, solve_out, tangent, v)


def degenerate_weights(deg: DegenerateSpec, tangent: TangentBundle, solve_out: SolveOutput,
                       phi, t0: float, quad_nodes: int = 64) -> dict:
    """``Xi``, ``Xi'``, ``hbar`` and ``Theta`` at nodes ``0..k0``.

    ``Xi`` is the steering term of the degenerate coupling per unit of
    initial displacement, with ``phi`` in place of the displacement and
    ``Lambda`` in place of the measure-noise gap.  ``phi`` is accepted for
    symmetry with the other weights; its values are those stored in
    ``tangent``.
    """
    if not isinstance(deg, DegenerateSpec):
        raise ContractError("degenerate_weights needs a DegenerateSpec")
    grid = solve_out.grid
    k0 = grid.node_index(t0)
    m = deg.m
    p = tangent.phi_vals
    lam = tangent.Lambda
    st = steering_terms(deg, grid, grid.times[k0], p[:, :m], p[:, m:], lam, quad_nodes)
    xi, xip = st["g"], st["gp"]
    hbar = np.concatenate([st["first"], p[:, None, m:] + xi + lam[:, : k0 + 1]], axis=2)
    theta = _drift_linearization(deg.inner, solve_out, tangent, hbar) - xip
    return {"Xi": xi, "Xi_prime": xip, "hbar": hbar, "Theta": theta, "U": st["U"]}


def bismut_weight(upsilon, sigma_inv, H: float, dW: np.ndarray, t0: float,
                  grid: TimeGrid) -> BismutWeight:
    """``M = sum_s <K_H^{-1}(int_0^. sigma^{-1} upsilon)(s), dW_s>`` over cells left of ``t0``.

    Parameters
    ----------
    upsilon : ndarray (N, >= k0 + 1, l)
    sigma_inv : matrix, (nodes, l, l) array or GridFunction
    H : float
    dW : ndarray (N, n_steps, l)
        Brownian increments behind ``B^H``.
    t0 : float
        Grid node.
    """
    ups = np.asarray(upsilon, dtype=float)
    if ups.ndim == 2:
        ups = ups[:, :, None]
    dW = np.asarray(dW, dtype=float)
    if dW.ndim == 2:
        dW = dW[:, :, None]
    k0 = grid.node_index(t0)
    if ups.shape[1] < k0 + 1 or dW.shape[1] < k0:
        raise ContractError("weight or increments shorter than t0")
    l = ups.shape[2]
    si = _as_sigma_inv(sigma_inv, grid, k0, l)
    rate = np.einsum("kij,nkj->nki", si, ups[:, : k0 + 1])
    kv = kernel_transform(rate, H, grid, k0)
    M = np.einsum("nkl,nkl->n", kv[:, :k0], dW[:, :k0])
    if not np.all(np.isfinite(M)):
        raise ContractError("Bismut weight is not finite")
    return BismutWeight(ups[:, : k0 + 1], kv, M)


def _sigma_inv_nodes(inner, grid: TimeGrid, k0: int):
    if inner.sigma_is_constant:
        return np.asarray(inner.sigma_inv(0.0), dtype=float)
    return np.stack([np.asarray(inner.sigma_inv(t), dtype=float)
                     for t in grid.times[: k0 + 1]])


def weight_for(model, sol: SolveOutput, phi, t0: float) -> BismutWeight:
    """Tangent pass followed by the weight assembly for either setting."""
    deg, inner = _split(model)
    tangent = tangent_process(model, sol, phi)
    if deg is None:
        ups = upsilon_weight(model, tangent, sol, t0)
    else:
        ups = degenerate_weights(deg, tangent, sol, phi, t0)["Theta"]
    k0 = sol.grid.node_index(t0)
    return bismut_weight(ups, _sigma_inv_nodes(inner, sol.grid, k0), inner.hurst.H,
                         sol.noise.dW, t0, sol.grid)


# ---------------------------------------------------------------------------
# estimators


def truncate_noise(noise: NoiseBundle, k: int) -> NoiseBundle:
    """The bundle restricted to the first ``k`` cells (the fBM paths are causal)."""
    return NoiseBundle(noise.grid.truncate(k), noise.dW[:, :k], noise.dW_tilde[:, :k],
                       noise.B_H[:, : k + 1], noise.B_Htilde[:, : k + 1], noise.H, noise.H_tilde)


def _ensemble_to(model, mu, grid: TimeGrid, t0: float, n_paths: int, seed: int, tag: str,
                 threads: int, tol: float):
    _, inner = _split(model)
    k0 = grid.node_index(t0)
    x0 = initial_points(mu, n_paths, seed, tag + ":init", threads)
    noise = NoiseBundle.generate(RngSpec(sub_seed(seed, tag)), n_paths, grid, inner.noise_dim,
                                 inner.hurst.H, inner.hurst.H_tilde, threads)
    noise = truncate_noise(noise, k0)
    return solve_picard(model, x0, noise.grid, noise, tol=tol)


def fd_lions_derivative(model, sol: SolveOutput, phi, f, eps_list=FD_EPS, tol: float = 1e-8):
    """Finite-difference oracle with common random numbers.

    Re-solves from ``x0 + eps phi(x0)`` with the noise of ``sol`` for every
    ``eps``, forms per-path quotients at the final node and extrapolates them
    to ``eps = 0`` (Neville).  Returns the estimate and its standard error.
    """
    eps = np.sort(np.asarray(eps_list, dtype=float))
    if eps.size < 2 or np.any(eps <= 0) or np.unique(eps).size != eps.size:
        raise ParameterError("eps_list needs at least two distinct positive values")
    shift = _phi_values(phi, sol.x0)
    base = np.asarray(f(sol.X[:, -1]), dtype=float)
    q = []
    for e in eps:
        pert = solve_picard(model, sol.x0 + e * shift, sol.grid, sol.noise, tol=tol)
        q.append((np.asarray(f(pert.X[:, -1]), dtype=float) - base) / e)
    q = np.array(q)
    # Neville extrapolation is linear in the quotients: apply it per path
    coef = np.array([_neville_at_zero(eps, np.eye(eps.size)[i]) for i in range(eps.size)])
    return mean_with_se(coef @ q)


@dataclass
class BismutReport:
    """Estimator output, FD oracle and the comparison verdict."""

    t0: float
    estimate: float
    std_error: float
    weight_mean: float
    weight_se: float
    fd_value: float | None = None
    fd_error: float | None = None
    rel_tol: float = 0.1
    runtime: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.std_error, self.fd_error or 0.0))

    @property
    def passed(self) -> bool | None:
        if self.fd_value is None:
            return None
        tol = max(3.0 * self.combined_se, self.rel_tol * abs(self.fd_value))
        return abs(self.estimate - self.fd_value) <= tol


def _check_model(model, grid):
    deg, inner = _split(model)
    validate_hypotheses(inner, T=grid.T)
    if deg is not None:
        # raises DegeneracyError with the Kalman rank when U is singular
        gramian_U(grid.T, deg.A, deg.B_mat)


def bismut_check(model, mu, phi, f, t0: float, n_paths: int, grid: TimeGrid, seed: int = 0,
                 threads: int = 1, fd_check: bool = True, eps_list=FD_EPS, tol: float = 1e-8,
                 validate: bool = True, rel_tol: float = 0.1) -> BismutReport:
    """Bismut estimate of ``D^L_phi P_t0 f(mu)`` with optional FD comparison."""
    if isinstance(phi, str):
        phi = named_phi(phi)
    if isinstance(f, str):
        f = named_f(f)
    if validate:
        _check_model(model, grid)
    start = time.perf_counter()
    sol = _ensemble_to(model, mu, grid, t0, n_paths, seed, "bismut", threads, tol)
    w = weight_for(model, sol, phi, t0)
    fx = np.asarray(f(sol.X[:, -1]), dtype=float)
    est, se = mean_with_se(fx * w.M)
    em, ems = mean_with_se(w.M)
    rep = BismutReport(float(t0), est, se, em, ems, rel_tol=rel_tol)
    if fd_check:
        rep.fd_value, rep.fd_error = fd_lions_derivative(model, sol, phi, f, eps_list, tol)
    rep.runtime = time.perf_counter() - start
    log.info("bismut t0=%g: %.5g +- %.2g (fd %s)", t0, est, se, rep.fd_value)
    return rep


def estimate_lions_derivative(model, mu, phi, f, t0: float, n_paths: int,
                              grid: TimeGrid | None = None, seed: int = 0, threads: int = 1):
    """Monte Carlo ``E[f(X_t0) M]`` and its standard error (non-degenerate)."""
    if isinstance(model, DegenerateSpec):
        raise ContractError("use estimate_lions_derivative_degenerate")
    grid = grid or TimeGrid(t0, 256)
    rep = bismut_check(model, mu, phi, f, t0, n_paths, grid, seed, threads, fd_check=False)
    return rep.estimate, rep.std_error


def estimate_lions_derivative_degenerate(deg: DegenerateSpec, mu, phi, f, t0: float,
                                         n_paths: int, grid: TimeGrid | None = None,
                                         seed: int = 0, threads: int = 1):
    """Monte Carlo ``E[f(X_t0) M(Theta)]`` and its standard error."""
    if not isinstance(deg, DegenerateSpec):
        raise ContractError("estimate_lions_derivative_degenerate needs a DegenerateSpec")
    grid = grid or TimeGrid(t0, 256)
    rep = bismut_check(deg, mu, phi, f, t0, n_paths, grid, seed, threads, fd_check=False)
    return rep.estimate, rep.std_error
