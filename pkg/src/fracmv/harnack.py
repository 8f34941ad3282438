"""Backward couplings, Girsanov weights and the entropy-cost check.

Given an ensemble ``X^mu`` and the law flows of ``mu`` and ``nu``, a coupling
process ``Y`` starts from the paired ``nu``-points and meets ``X^mu`` at the
target time ``t0``.  The drift discrepancy ``zeta`` is turned into a change of
the Brownian driver through ``K_H^{-1}``; the resulting log-density and its
quadratic functional bound the relative entropy of the time-``t0`` laws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import CapacityError, ContractError
from .frac_calc import K_H_inverse_rate_matrix, GridFunction
from .grid import TimeGrid
from .measures import MAX_ASSIGNMENT, EmpiricalMeasure, relative_entropy_knn
from .model import DegenerateSpec, InitialLaw, expm_series, gramian_U, validate_hypotheses
from .solver import LawFlow, SolveOutput, initial_points, rho_process, simulate_ensemble

GL_CELL_NODES = 8
PATH_CHUNK = 4096


@dataclass
class CouplingInputs:
    """Everything the coupling needs, with paths paired by index."""

    model: object
    x0_mu: np.ndarray
    x0_nu: np.ndarray
    flow_mu: LawFlow
    flow_nu: LawFlow
    rho_mu: np.ndarray
    rho_nu: np.ndarray
    t0: float
    X_mu: np.ndarray

    def __post_init__(self):
        if self.flow_mu.grid != self.flow_nu.grid:
            raise ContractError("law flows live on different grids")
        if not self.t0 > 0:
            raise ContractError("t0 must be positive")
        n = self.X_mu.shape[0]
        for name in ("x0_mu", "x0_nu", "rho_mu", "rho_nu"):
            if getattr(self, name).shape[0] != n:
                raise ContractError(f"{name} has the wrong number of paths")

    @property
    def grid(self) -> TimeGrid:
        return self.flow_mu.grid

    @property
    def k0(self) -> int:
        return self.grid.node_index(self.t0)


@dataclass
class WeightRecord:
    """Per-path Girsanov quantities on ``[0, t0]``."""

    zeta: np.ndarray
    kernel_vals: np.ndarray
    stoch: np.ndarray
    quad_norm: np.ndarray

    @property
    def log_R(self) -> np.ndarray:
        return self.stoch - 0.5 * self.quad_norm


# ---------------------------------------------------------------------------
# couplings


def _drift_gap(model, inp: CouplingInputs, Y: np.ndarray, k0: int) -> np.ndarray:
    inner = model.inner if isinstance(model, DegenerateSpec) else model
    t = inp.grid.times
    out = np.empty(Y.shape[:2] + (inner.noise_dim,))
    for k in range(k0 + 1):
        out[:, k] = (inner.drift(t[k], Y[:, k], inp.flow_nu.at(k))
                     - inner.drift(t[k], inp.X_mu[:, k], inp.flow_mu.at(k)))
    return out


def coupling_nondegenerate(inp: CouplingInputs):
    """Closed-form coupling meeting ``X^mu`` at ``t0``.

    Returns
    -------
    Y : ndarray (N, k0 + 1, d)
    zeta : ndarray (N, k0 + 1, d)
    """
    k0 = inp.k0
    t0 = k0 * inp.grid.dt
    t = inp.grid.times[: k0 + 1][None, :, None]
    Z = inp.x0_mu - inp.x0_nu
    drho_t0 = inp.rho_mu[:, k0] - inp.rho_nu[:, k0]
    rho_gap = inp.rho_nu[:, : k0 + 1] - inp.rho_mu[:, : k0 + 1]
    Y = (inp.X_mu[:, : k0 + 1] + ((t - t0) / t0) * Z[:, None] + (t / t0) * drho_t0[:, None]
         + rho_gap)
    zeta = _drift_gap(inp.model, inp, Y, k0) - ((Z + drho_t0) / t0)[:, None]
    return Y, zeta


@dataclass
class DegenerateCoupling:
    Y: np.ndarray
    zeta: np.ndarray
    g: np.ndarray
    g_prime: np.ndarray
    U: np.ndarray


def _cell_quadrature(grid: TimeGrid, k0: int):
    x, w = np.polynomial.legendre.leggauss(GL_CELL_NODES)
    tau = 0.5 * (x + 1.0)
    s = grid.times[:k0, None] + grid.dt * tau[None, :]
    return tau, 0.5 * grid.dt * w, s


def steering_terms(deg: DegenerateSpec, grid: TimeGrid, t0: float, Z1, Z2, gap,
                   quad_nodes: int = 64):
    """Shared construction behind the degenerate coupling and the weight Xi.

    With ``gap`` the node values of ``r -> gap_r`` (``gap_0 = 0``), this
    builds, for every path,

    ``q(s) = Z2 + g(s) + gap_s`` where
    ``g(s) = -(s/t0)(Z2 + gap_t0) - s(t0-s)/t0^2 B* e^{-sA*} U^{-1}(Z1 + V)``,
    ``V = int_0^t0 e^{-rA} B [((t0-r)/t0) Z2 - (r/t0) gap_t0 + gap_r] dr``,

    and the first-block offset ``e^{tA}(Z1 + int_0^t e^{-sA} B q(s) ds)``,
    which vanishes at ``t0``.  ``gap`` is interpolated linearly between
    nodes; integrals use Gauss-Legendre on every cell.

    Returns
    -------
    dict with node arrays ``g``, ``gp`` (analytic derivative of ``g``),
    ``first`` (first-block offset) and the Gramian ``U``.
    """
    k0 = grid.node_index(t0)
    t0 = k0 * grid.dt
    m, l = deg.m, deg.l
    A, B = deg.A, deg.B_mat
    U, _ = gramian_U(t0, A, B, quad_nodes)
    Uinv = np.linalg.inv(U)
    tau, wq, s = _cell_quadrature(grid, k0)
    EB = expm_series(-A, s.ravel()).reshape(k0, GL_CELL_NODES, m, m) @ B  # e^{-sA}B
    tn = grid.times[: k0 + 1]
    EBn = expm_series(-A, tn) @ B
    eA = expm_series(A, tn)
    AEB = A @ EBn  # A e^{-tA} B, so that B* A* e^{-tA*} c = (AEB)^T c

    n = Z1.shape[0]
    g = np.empty((n, k0 + 1, l))
    gp = np.empty((n, k0 + 1, l))
    first = np.empty((n, k0 + 1, m))
    for lo in range(0, n, PATH_CHUNK):
        hi = min(n, lo + PATH_CHUNK)
        z1, z2, gp_ = Z1[lo:hi], Z2[lo:hi], gap[lo:hi, : k0 + 1]
        gt0 = gp_[:, k0]
        gq = (gp_[:, :-1, None, :] * (1.0 - tau)[None, None, :, None]
              + gp_[:, 1:, None, :] * tau[None, None, :, None])  # gap at GL points
        sq = s[None, :, :, None]
        integrand_V = ((t0 - sq) / t0) * z2[:, None, None, :] - (sq / t0) * gt0[:, None, None, :] + gq
        V = np.einsum("q,cqml,ncql->nm", wq, EB, integrand_V)
        c = (z1 + V) @ Uinv.T
        poly = s * (t0 - s) / t0**2
        g_q = (-(sq / t0) * (z2 + gt0)[:, None, None, :]
               - poly[None, :, :, None] * np.einsum("cqml,nm->ncql", EB, c))
        q = z2[:, None, None, :] + g_q + gq
        inc = np.einsum("q,cqml,ncql->ncm", wq, EB, q)
        I = np.concatenate([np.zeros((hi - lo, 1, m)), np.cumsum(inc, axis=1)], axis=1)
        first[lo:hi] = np.einsum("kij,nkj->nki", eA, z1[:, None, :] + I)
        tt = tn[None, :, None]
        BtEc = np.einsum("kml,nm->nkl", EBn, c)  # B* e^{-tA*} c
        g[lo:hi] = -(tt / t0) * (z2 + gt0)[:, None, :] - (tn * (t0 - tn) / t0**2)[None, :, None] * BtEc
        dpoly = ((t0 - 2.0 * tn) / t0**2)[None, :, None]
        # d/dt [B* e^{-tA*}] c = -B* A* e^{-tA*} c
        BAEc = np.einsum("kml,nm->nkl", AEB, c)
        gp[lo:hi] = (-(z2 + gt0)[:, None, :] / t0 - dpoly * BtEc
                     + (tn * (t0 - tn) / t0**2)[None, :, None] * BAEc)
    return {"g": g, "gp": gp, "first": first, "U": U}


def coupling_degenerate(inp: CouplingInputs, deg: DegenerateSpec | None = None,
                        quad_nodes: int = 64) -> DegenerateCoupling:
    """Coupling for the stochastic Hamiltonian system, steered by ``g``.

    ``Y - X^mu`` is ``(e^{tA}(Z1 + int_0^t e^{-sA}B(Z2 + g + gap)ds), Z2 + g + gap)``
    with ``Z = X0^nu - X0^mu`` and ``gap = rho^nu - rho^mu``.  The drift
    discrepancy is ``b(Y, nu) - b(X^mu, mu) - g'``.
    """
    deg = inp.model if deg is None else deg
    if not isinstance(deg, DegenerateSpec):
        raise ContractError("coupling_degenerate needs a DegenerateSpec")
    k0 = inp.k0
    m = deg.m
    Z = inp.x0_nu - inp.x0_mu
    gap = inp.rho_nu - inp.rho_mu
    st = steering_terms(deg, inp.grid, inp.t0, Z[:, :m], Z[:, m:], gap, quad_nodes)
    Y = np.array(inp.X_mu[:, : k0 + 1])
    Y[:, :, :m] += st["first"]
    Y[:, :, m:] += Z[:, None, m:] + st["g"] + gap[:, : k0 + 1]
    zeta = _drift_gap(deg, inp, Y, k0) - st["gp"]
    return DegenerateCoupling(Y, zeta, st["g"], st["gp"], st["U"])


# ---------------------------------------------------------------------------
# Girsanov


def kernel_transform(rate: np.ndarray, H: float, grid: TimeGrid, k0: int) -> np.ndarray:
    """``K_H^{-1}(int_0^. rate)`` at nodes ``0..k0`` for paths ``(N, >=k0, l)``.

    The integral is a left-point sum, so its forward differences are the
    node values ``rate[:, j]`` for ``j < k0``; the last node repeats
    ``rate[:, k0 - 1]``.
    """
    if k0 < 2:
        raise ContractError("t0 must be at least two grid steps")
    u = np.empty((rate.shape[0], k0 + 1, rate.shape[2]))
    u[:, :k0] = rate[:, :k0]
    u[:, k0] = rate[:, k0 - 1]
    M = K_H_inverse_rate_matrix(grid.truncate(k0), H)
    return np.matmul(M, u)


def _as_sigma_inv(sigma_inv, grid: TimeGrid, k0: int, l: int) -> np.ndarray:
    if isinstance(sigma_inv, GridFunction):
        return sigma_inv.values[: k0 + 1]
    s = np.asarray(sigma_inv, dtype=float)
    if s.ndim == 0:
        s = s * np.eye(l)
    if s.ndim == 2:
        s = np.broadcast_to(s, (k0 + 1, l, l))
    return s[: k0 + 1]


def girsanov_weight(zeta, sigma_inv, H: float, dW: np.ndarray, t0: float,
                    grid: TimeGrid) -> WeightRecord:
    """Girsanov log-density for the shift ``int_0^. sigma^{-1} zeta``.

    Parameters
    ----------
    zeta : ndarray (N, >= k0 + 1, l)
    sigma_inv : matrix, (nodes, l, l) array or GridFunction
    H : float
    dW : ndarray (N, n_steps, l)
        Brownian increments behind ``B^H``.
    t0 : float
        Grid node.
    """
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim == 2:
        zeta = zeta[:, :, None]
    if dW.ndim == 2:
        dW = dW[:, :, None]
    k0 = grid.node_index(t0)
    l = zeta.shape[2]
    si = _as_sigma_inv(sigma_inv, grid, k0, l)
    rate = np.einsum("kij,nkj->nki", si, zeta[:, : k0 + 1])
    kv = kernel_transform(rate, H, grid, k0)
    stoch = np.einsum("nkl,nkl->n", kv[:, :k0], dW[:, :k0])
    sq = np.sum(kv**2, axis=2)
    quad = grid.dt * (sq.sum(axis=1) - 0.5 * (sq[:, 0] + sq[:, -1]))
    return WeightRecord(zeta[:, : k0 + 1], kv, stoch, quad)


def gaussian_kl(p_samples: np.ndarray, q_samples: np.ndarray) -> float:
    """``Ent(P | Q)`` between Gaussians fitted to the two sample clouds.

    Exact for the Gaussian laws of the linear families; used as a second
    estimate next to the nearest-neighbour one.
    """
    p = np.asarray(p_samples, dtype=float).reshape(len(p_samples), -1)
    q = np.asarray(q_samples, dtype=float).reshape(len(q_samples), -1)
    d = p.shape[1]
    mp, mq = p.mean(0), q.mean(0)
    Sp, Sq = np.atleast_2d(np.cov(p.T)), np.atleast_2d(np.cov(q.T))
    iq = np.linalg.inv(Sq)
    dm = mp - mq
    _, ldq = np.linalg.slogdet(Sq)
    _, ldp = np.linalg.slogdet(Sp)
    return float(0.5 * (np.trace(iq @ Sp) - d + dm @ iq @ dm + ldq - ldp))


def mean_with_se(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


# ---------------------------------------------------------------------------
# entropy-cost experiment


@dataclass
class EntropyReport:
    t0: float
    shift: float
    w_p: float
    entropy: float
    bound: float
    bound_weighted: float
    martingale_mean: float
    martingale_se: float
    endpoint_error: float
    tolerance: float = 0.1
    extras: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.entropy / self.bound if self.bound > 0 else float("nan")

    @property
    def passed(self) -> bool:
        return self.entropy <= self.bound + self.tolerance


def pair_initial_points(x0_mu: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Reorder ``nu``-points ``y`` into an optimal coupling with ``x0_mu``.

    Sorting in one dimension, exact assignment (at most 2048 points) above.
    """
    n, d = x0_mu.shape
    if y.shape != x0_mu.shape:
        raise ContractError("pairing needs equally many points of equal dimension")
    if d == 1:
        out = np.empty_like(y)
        out[np.argsort(x0_mu[:, 0], kind="stable")] = np.sort(y[:, 0])[:, None]
        return out
    if n > MAX_ASSIGNMENT:
        raise CapacityError("optimal pairing in d > 1 is limited to 2048 points")
    r, c = linear_sum_assignment(cdist(x0_mu, y) ** 2)
    out = np.empty_like(y)
    out[r] = y[c]
    return out


@dataclass
class HarnackEnsembles:
    """Solved ensembles reused across shifts and target times."""

    mu: SolveOutput
    nu: SolveOutput


def run_coupling(model, sol_mu: SolveOutput, sol_nu: SolveOutput, x0_nu: np.ndarray,
                 t0: float):
    """Coupling plus Girsanov weight along the ``mu``-ensemble."""
    rho_nu = rho_process(model, sol_nu.law_flow, sol_mu.noise.B_Htilde)
    inp = CouplingInputs(model, sol_mu.x0, x0_nu, sol_mu.law_flow, sol_nu.law_flow,
                         sol_mu.rho, rho_nu, t0, sol_mu.X)
    inner = model.inner if isinstance(model, DegenerateSpec) else model
    if isinstance(model, DegenerateSpec):
        c = coupling_degenerate(inp)
        Y, zeta = c.Y, c.zeta
    else:
        Y, zeta = coupling_nondegenerate(inp)
    k0 = inp.k0
    sig_inv = GridFunction(sol_mu.grid, np.stack([inner.sigma_inv(t) for t in sol_mu.grid.times]))
    rec = girsanov_weight(zeta, sig_inv, inner.hurst.H, sol_mu.noise.dW, t0, sol_mu.grid)
    endpoint = float(np.max(np.abs(Y[:, k0] - sol_mu.X[:, k0])))
    return Y, rec, endpoint


def entropy_cost_check(model, mu: InitialLaw, nu, t0: float, n_paths: int, grid: TimeGrid,
                       seed: int = 0, threads: int = 1, k: int = 5, tolerance: float = 0.1,
                       ensembles: HarnackEnsembles | None = None,
                       validate: bool = True) -> EntropyReport:
    """Compare the k-NN entropy of the time-``t0`` laws with ``E[quad_norm]/2``.

    ``nu`` is an :class:`InitialLaw`; when it is a translate of ``mu`` the
    initial pairing is the translation (optimal for every ``p``), otherwise
    a ``nu`` sample is paired by :func:`pair_initial_points`.  ``Ent(P*nu | P*mu)`` is estimated
    from an independent ``nu``-ensemble against the ``mu``-ensemble.
    """
    inner = model.inner if isinstance(model, DegenerateSpec) else model
    if validate:
        validate_hypotheses(inner, T=grid.T)
    if ensembles is None:
        ensembles = HarnackEnsembles(
            simulate_ensemble(model, mu, grid, n_paths, seed, "mu", threads),
            simulate_ensemble(model, nu, grid, n_paths, seed, "nu", threads))
    sol_mu, sol_nu = ensembles.mu, ensembles.nu
    shift = np.subtract(nu.mean, mu.mean)
    if isinstance(nu, InitialLaw) and nu.std == mu.std:
        x0_nu = sol_mu.x0 + shift
        w = float(np.linalg.norm(shift))
    else:
        y = initial_points(nu, n_paths, seed, "pair:init", threads)
        x0_nu = pair_initial_points(sol_mu.x0, y)
        w = float(np.mean(np.sum((x0_nu - sol_mu.x0) ** 2, axis=1)) ** 0.5)
    _, rec, endpoint = run_coupling(model, sol_mu, sol_nu, x0_nu, t0)
    k0 = grid.node_index(t0)
    ent = relative_entropy_knn(EmpiricalMeasure(sol_nu.X[:, k0]),
                               EmpiricalMeasure(sol_mu.X[:, k0]), k)
    extras = {"entropy_gaussian": gaussian_kl(sol_nu.X[:, k0], sol_mu.X[:, k0])}
    R = np.exp(rec.log_R)
    mR, seR = mean_with_se(R)
    bound = 0.5 * float(np.mean(rec.quad_norm))
    bound_w = 0.5 * float(np.mean(R * rec.quad_norm))
    return EntropyReport(float(t0), float(np.linalg.norm(shift)), w, ent, bound, bound_w,
                         mR, seR, endpoint, tolerance, extras)
