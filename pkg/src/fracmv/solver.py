"""Euler schemes, Picard iteration on the law flow, and particle systems.

Laws are carried as sample clouds: a :class:`LawFlow` stores one cloud of
``N`` points per grid node and the law at node ``k`` is the uniform
empirical measure of ``samples[:, k]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DivergenceError, NonConvergenceError, ParameterError
from .gaussian_noise import DRIVER_INIT, NoiseBundle, RngSpec, standard_normals, sub_seed
from .grid import TimeGrid
from .measures import EmpiricalMeasure
from .model import DegenerateSpec, InitialLaw, expm_series

log = logging.getLogger(__name__)


@dataclass
class LawFlow:
    """Sample clouds ``(N, node_count, d)`` representing ``t -> mu_t``."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        if self.samples.ndim != 3 or self.samples.shape[1] != self.grid.node_count:
            raise ContractError("law flow needs samples of shape (N, node_count, d)")

    @classmethod
    def constant(cls, grid: TimeGrid, x0: np.ndarray) -> "LawFlow":
        x0 = np.asarray(x0, dtype=float)
        return cls(grid, np.broadcast_to(x0[:, None, :], (x0.shape[0], grid.node_count,
                                                           x0.shape[1])))

    def at(self, k: int) -> np.ndarray:
        return self.samples[:, k]

    def law(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.samples[:, k])

    def means(self) -> np.ndarray:
        return self.samples.mean(axis=0)


@dataclass
class SolveOutput:
    """Solution paths, their law flow and the measure-dependent noise term."""

    X: np.ndarray
    law_flow: LawFlow
    rho: np.ndarray
    noise: NoiseBundle
    x0: np.ndarray
    distances: list = field(default_factory=list)
    iterations: int = 0

    @property
    def grid(self) -> TimeGrid:
        return self.law_flow.grid

    @property
    def ratios(self) -> list:
        d = self.distances
        return [d[i + 1] / d[i] if d[i] > 0 else 0.0 for i in range(len(d) - 1)]


def _as_points(initial) -> np.ndarray:
    if isinstance(initial, EmpiricalMeasure):
        if not initial.is_uniform:
            raise ContractError("initial clouds must be uniform empirical measures")
        return initial.points
    x = np.asarray(initial, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _split(model):
    if isinstance(model, DegenerateSpec):
        return model, model.inner
    return None, model


def _step_propagators(deg: DegenerateSpec, dt: float):
    """``e^{dt A}`` and ``int_0^dt e^{uA} du B`` (Gauss-Legendre, 16 nodes)."""
    E = expm_series(deg.A, [dt])[0]
    x, w = np.polynomial.legendre.leggauss(16)
    u = 0.5 * dt * (x + 1.0)
    F = np.einsum("k,kij->ij", 0.5 * dt * w, expm_series(deg.A, u)) @ deg.B_mat
    return E, F


def _euler(model, x0, noise: NoiseBundle, law_at, check_every: int = 16):
    """Shared Euler loop; ``law_at(k, X_k)`` supplies the law cloud at node k."""
    deg, inner = _split(model)
    grid = noise.grid
    n, d = x0.shape
    if n != noise.n_paths:
        raise ContractError(f"{n} initial points but {noise.n_paths} noise paths")
    if d != inner.dim:
        raise ContractError(f"initial points have dimension {d}, model needs {inner.dim}")
    l = inner.noise_dim
    dt = grid.dt
    t = grid.times
    # node-major storage keeps each step's cloud contiguous; callers get
    # (N, nodes, d) views
    Xn = np.empty((grid.node_count, n, d))
    rhon = np.zeros((grid.node_count, n, l))
    X, rho = Xn.transpose(1, 0, 2), rhon.transpose(1, 0, 2)
    X[:, 0] = x0
    dBH = np.diff(noise.B_H, axis=1)
    dBT = np.diff(noise.B_Htilde, axis=1)
    if deg is not None:
        E, F = _step_propagators(deg, dt)
        m = deg.m
    for k in range(grid.n_steps):
        xk = X[:, k]
        law = law_at(k, xk)
        b = inner.drift(t[k], xk, law)
        sig = inner.sigma(t[k])
        st = inner.sigma_tilde(t[k], law)
        drho = dBT[:, k] @ st.T
        rho[:, k + 1] = rho[:, k] + drho
        dv = b * dt + dBH[:, k] @ sig.T + drho
        if deg is None:
            X[:, k + 1] = xk + dv
        else:
            X[:, k + 1, :m] = xk[:, :m] @ E.T + xk[:, m:] @ F.T
            X[:, k + 1, m:] = xk[:, m:] + dv
        if (k + 1) % check_every == 0 or k + 1 == grid.n_steps:
            if not np.all(np.isfinite(X[:, k + 1])):
                raise DivergenceError(f"non-finite state at node {k + 1}", node=k + 1)
    return X, rho


def solve_frozen(model, law_flow: LawFlow, noise: NoiseBundle, x0) -> np.ndarray:
    """Euler paths of the SDE with the law frozen to ``law_flow``."""
    if law_flow.grid != noise.grid:
        raise ContractError("law flow and noise live on different grids")
    X, _ = _euler(model, _as_points(x0), noise, lambda k, xk: law_flow.at(k))
    return X


def rho_process(model, law_flow: LawFlow, B_tilde: np.ndarray) -> np.ndarray:
    """Left-point sums ``sum_{r<s} sigma~(r, mu_r) (B~_{r+dt} - B~_r)``."""
    _, inner = _split(model)
    grid = law_flow.grid
    B_tilde = np.asarray(B_tilde, dtype=float)
    if B_tilde.shape[-2] != grid.node_count:
        raise ContractError("B~ path and law flow have different node counts")
    dB = np.diff(B_tilde, axis=-2)
    inc = np.empty_like(dB)
    for k in range(grid.n_steps):
        st = inner.sigma_tilde(grid.times[k], law_flow.at(k))
        inc[..., k, :] = dB[..., k, :] @ st.T
    out = np.zeros(B_tilde.shape)
    np.cumsum(inc, axis=-2, out=out[..., 1:, :])
    return out


def _quantiles(flow: LawFlow) -> np.ndarray:
    return np.sort(flow.samples[:, :, 0], axis=0)


def flow_distance(a: LawFlow, b: LawFlow, p: float = 2.0, lam0: float = 0.0,
                  sorted_a=None, sorted_b=None) -> float:
    """``sup_t exp(-lam0 t) W_p(a_t, b_t)``.

    Exact in one dimension (``sorted_a``/``sorted_b`` may pass the sorted
    clouds when already known); in higher dimension the synchronous coupling
    of the paired clouds is used, which bounds ``W_p`` from above.
    """
    t = a.grid.times
    d = a.samples.shape[2]
    if d == 1:
        sa = _quantiles(a) if sorted_a is None else sorted_a
        sb = _quantiles(b) if sorted_b is None else sorted_b
        w = np.mean(np.abs(sa - sb) ** p, axis=0) ** (1.0 / p)
    else:
        # synchronous coupling at every node, (E|X - Y|^p)^{1/p}
        gap = np.linalg.norm(a.samples - b.samples, axis=2)
        w = np.mean(gap**p, axis=0) ** (1.0 / p)
    return float(np.max(np.exp(-lam0 * t) * w))


def default_lambda0(model, grid: TimeGrid) -> float:
    _, inner = _split(model)
    return 2.0 * inner.kappa_at(grid.T) ** inner.p * grid.T


def solve_picard(model, initial, grid: TimeGrid, noise: NoiseBundle, tol: float = 1e-8,
                 max_iter: int = 50, lam0: float | None = None) -> SolveOutput:
    """Fixed point of ``mu -> Law(X^mu)`` on sample clouds with common noise.

    The first iterate freezes the law at the initial cloud.  Iteration stops
    when the weighted sup-distance between successive flows drops below
    ``tol``; ``iterations`` counts the Picard maps applied before that.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    x0 = _as_points(initial)
    if noise.grid != grid:
        raise ContractError("noise bundle lives on a different grid")
    lam = default_lambda0(model, grid) if lam0 is None else float(lam0)
    _, inner = _split(model)
    flow = LawFlow.constant(grid, x0)
    one_d = x0.shape[1] == 1
    q_old = _quantiles(flow) if one_d else None
    dists = []
    for it in range(1, max_iter + 1):
        X, rho = _euler(model, x0, noise, lambda k, xk: flow.at(k))
        new = LawFlow(grid, X)
        q_new = _quantiles(new) if one_d else None
        dist = flow_distance(new, flow, inner.p, lam, q_new, q_old)
        dists.append(dist)
        flow, q_old = new, q_new
        log.debug("picard iteration %d: distance %.3e", it, dist)
        if dist < tol:
            # the last map changed nothing: the fixed point was reached one
            # iteration earlier (measure-free models stop after one map)
            return SolveOutput(X, flow, rho, noise, x0, dists, max(it - 1, 1))
    ratio = dists[-1] / dists[-2] if len(dists) > 1 and dists[-2] > 0 else None
    raise NonConvergenceError(
        f"Picard iteration did not reach tol={tol} in {max_iter} steps "
        f"(last distance {dists[-1]:.3e})", last_ratio=ratio)


def solve_particles(model, initial, grid: TimeGrid, rng: RngSpec | None = None,
                    noise: NoiseBundle | None = None, threads: int = 1) -> SolveOutput:
    """Interacting particle system: the law at each step is the current cloud."""
    x0 = _as_points(initial)
    _, inner = _split(model)
    if x0.shape[0] < 2:
        raise ParameterError("a particle system needs at least two particles")
    if noise is None:
        if rng is None:
            raise ContractError("solve_particles needs an rng or a noise bundle")
        noise = NoiseBundle.generate(rng, x0.shape[0], grid, inner.noise_dim,
                                     inner.hurst.H, inner.hurst.H_tilde, threads)
    X, rho = _euler(model, x0, noise, lambda k, xk: xk)
    return SolveOutput(X, LawFlow(grid, X), rho, noise, x0, [], 0)


def pt_functional(f, output: SolveOutput, t: float) -> float:
    """Monte Carlo value of ``P_t f`` at a grid node."""
    k = output.grid.node_index(t)
    return float(np.mean(f(output.X[:, k])))


def initial_points(law, n_paths: int, seed: int, tag: str, threads: int = 1) -> np.ndarray:
    """Initial cloud for an ensemble: samples of an :class:`InitialLaw` or
    the given points."""
    if isinstance(law, InitialLaw):
        rng = RngSpec(sub_seed(seed, tag))
        z = standard_normals(rng, n_paths, (law.dim,), DRIVER_INIT, threads)
        return law.from_normals(z)
    x = _as_points(law)
    if x.shape[0] != n_paths:
        raise ContractError(f"{x.shape[0]} initial points for {n_paths} paths")
    return x


def simulate_ensemble(model, law, grid: TimeGrid, n_paths: int, seed: int, tag: str,
                      threads: int = 1, tol: float = 1e-8, max_iter: int = 50,
                      lam0: float | None = None) -> SolveOutput:
    """Draw initial points and noise for stream ``tag`` and solve by Picard."""
    _, inner = _split(model)
    x0 = initial_points(law, n_paths, seed, tag + ":init", threads)
    noise = NoiseBundle.generate(RngSpec(sub_seed(seed, tag)), n_paths, grid,
                                 inner.noise_dim, inner.hurst.H, inner.hurst.H_tilde,
                                 threads)
    return solve_picard(model, x0, grid, noise, tol=tol, max_iter=max_iter, lam0=lam0)


@dataclass
class StabilityRow:
    shift: float
    node: int
    t: float
    w0: float
    wt: float

    @property
    def ratio(self) -> float:
        return self.wt / self.w0 if self.w0 > 0 else float("nan")


def stability_sweep(model, law: InitialLaw, shifts, grid: TimeGrid, n_paths: int, seed: int,
                    threads: int = 1, n_nodes: int = 9, base: SolveOutput | None = None):
    """``W_p(P_t* mu, P_t* nu) / W_p(mu, nu)`` for translates ``nu`` of ``mu``.

    Each ``nu`` is ``mu`` moved by ``shift`` along the diagonal and simulated
    with its own noise.  Distances are exact empirical ``W_p`` at ``n_nodes``
    equally spaced nodes; in ``d > 1`` the first 2048 points of each cloud
    are used (the size limit of the exact assignment).
    """
    from .measures import MAX_ASSIGNMENT, wasserstein_p

    _, inner = _split(model)
    if base is None:
        base = simulate_ensemble(model, law, grid, n_paths, seed, "stab:mu", threads)
    nodes = np.unique(np.linspace(0, grid.n_steps, n_nodes).round().astype(int))
    d = model.dim
    cap = n_paths if d == 1 else min(n_paths, MAX_ASSIGNMENT)
    direction = np.ones(d) / np.sqrt(d)
    rows = []
    for i, sh in enumerate(shifts):
        nu = simulate_ensemble(model, law.shifted(sh * direction), grid, n_paths, seed,
                               f"stab:nu{i}", threads)
        for k in nodes:
            w = wasserstein_p(EmpiricalMeasure(base.X[:cap, k]), EmpiricalMeasure(nu.X[:cap, k]),
                              inner.p)
            if k == 0:
                w0 = w
            rows.append(StabilityRow(float(sh), int(k), float(grid.times[k]), w0, w))
    return rows
