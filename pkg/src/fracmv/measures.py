"""Empirical measures: Wasserstein distances, k-NN relative entropy and
finite-difference Lions derivatives."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import CapacityError, ContractError, DomainError

MAX_ASSIGNMENT = 2048


class ConvergenceWarning(UserWarning):
    """Finite-difference quotients did not settle monotonically."""


class DegenerateSampleWarning(UserWarning):
    """Samples contain ties that break the nearest-neighbour estimator."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}`` in ``R^d``."""

    points: np.ndarray
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0:
            raise DomainError("an empirical measure needs at least one point")
        if not np.all(np.isfinite(x)):
            raise DomainError("points must be finite")
        if self.weights is None:
            w = np.full(x.shape[0], 1.0 / x.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (x.shape[0],) or np.any(w < 0):
                raise ContractError("weights must be non-negative, one per point")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ContractError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def push_forward(self, f: Callable[[np.ndarray], np.ndarray]) -> "EmpiricalMeasure":
        return EmpiricalMeasure(np.asarray(f(self.points)).reshape(self.points.shape),
                                self.weights)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["weight"] + [f"x{i + 1}" for i in range(self.dim)])
            for wi, xi in zip(self.weights, self.points):
                w.writerow([repr(float(wi))] + [repr(float(v)) for v in xi])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        w = data[:, 0]
        return cls(data[:, 1:], w / w.sum())


# ---------------------------------------------------------------------------
# Wasserstein


def _wasserstein_1d(x, wx, y, wy, p):
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, wx, y, wy = x[ix], wx[ix], y[iy], wy[iy]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    u = np.union1d(cx, cy)
    du = np.diff(np.concatenate([[0.0], u]))
    # quantile functions are right-continuous step functions; evaluate at
    # the left end of each elementary interval
    qx = x[np.minimum(np.searchsorted(cx, u, side="left"), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, u, side="left"), y.size - 1)]
    return float(np.sum(du * np.abs(qx - qy) ** p) ** (1.0 / p))


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0) -> float:
    """Exact ``W_p`` between two empirical measures.

    One-dimensional measures use the quantile coupling (any weights).  In
    higher dimension both measures must be uniform with the same number of
    points, at most 2048, and the optimal assignment is solved exactly.

    Examples
    --------
    >>> a = EmpiricalMeasure(np.array([0.0, 1.0]))
    >>> b = EmpiricalMeasure(np.array([0.5, 1.5]))
    >>> wasserstein_p(a, b, 2)
    0.5
    """
    if p < 1:
        raise DomainError("p must be at least 1")
    if mu.dim != nu.dim:
        raise ContractError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        return _wasserstein_1d(mu.points[:, 0], mu.weights, nu.points[:, 0], nu.weights, p)
    if mu.size != nu.size or not (mu.is_uniform and nu.is_uniform):
        raise ContractError("d > 1 needs equal-size uniform measures")
    if mu.size > MAX_ASSIGNMENT:
        raise CapacityError(f"assignment limited to {MAX_ASSIGNMENT} points, got {mu.size}")
    cost = cdist(mu.points, nu.points) ** p
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean() ** (1.0 / p))


def coupling_distance(x: np.ndarray, y: np.ndarray, p: float = 2.0) -> float:
    """``(E|X - Y|^p)^{1/p}`` for paired samples: an upper bound on ``W_p``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.abs(x - y) if x.ndim == 1 else np.linalg.norm(x - y, axis=-1)
    return float(np.mean(d**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# relative entropy


def _dedupe(x: np.ndarray, k: int, label: str) -> np.ndarray:
    d, _ = cKDTree(x).query(x, k=k + 1)
    if np.any(d[:, -1] == 0):
        warnings.warn(f"{label} samples have more than {k} duplicates; jitter applied",
                      DegenerateSampleWarning, stacklevel=3)
        scale = 1e-9 * max(1.0, float(np.ptp(x)))
        jit = np.random.default_rng(0).standard_normal(x.shape)
        x = x + scale * jit
    return x


def relative_entropy_knn(p_samples: EmpiricalMeasure, q_samples: EmpiricalMeasure,
                         k: int = 5) -> float:
    """k-nearest-neighbour estimate of ``Ent(P | Q)``.

    Uses the estimator of Wang, Kulkarni and Verdu:
    ``(d/n) sum log(nu_k / rho_k) + log(m / (n - 1))`` with ``rho_k`` the
    distance to the k-th neighbour inside the P-sample and ``nu_k`` the
    distance to the k-th neighbour in the Q-sample.  The value can be
    slightly negative when the laws are close.  A Q point that coincides
    exactly with the query point is treated as the same sample and skipped.
    """
    if k < 1:
        raise DomainError("k must be positive")
    if p_samples.dim != q_samples.dim:
        raise ContractError("dimension mismatch")
    n, m = p_samples.size, q_samples.size
    if n < 50 or m < 50:
        raise DomainError("relative_entropy_knn needs at least 50 samples per law")
    x = _dedupe(p_samples.points, k, "P")
    y = _dedupe(q_samples.points, k, "Q")
    rho = cKDTree(x).query(x, k=k + 1)[0][:, -1]
    # an exact coincidence with a Q point means the sample is shared (a
    # probability-zero event for independent draws); skip it like the self
    # point in rho
    nq = cKDTree(y).query(x, k=k + 1)[0]
    nu = np.where(nq[:, 0] == 0.0, nq[:, k], nq[:, k - 1])
    nu = np.maximum(nu, np.finfo(float).tiny)
    d = x.shape[1]
    return float(d * np.mean(np.log(nu / rho)) + np.log(m / (n - 1)))


# ---------------------------------------------------------------------------
# finite-difference Lions derivative


def _neville_at_zero(eps: np.ndarray, q: np.ndarray) -> float:
    p = q.astype(float).copy()
    n = eps.size
    for level in range(1, n):
        for i in range(n - level):
            j = i + level
            p[i] = (eps[j] * p[i] - eps[i] * p[i + 1]) / (eps[j] - eps[i])
    return float(p[0])


def fd_quotients(functional, xi_samples: np.ndarray, phi, eps_list) -> np.ndarray:
    """Difference quotients ``(f(L_{xi + eps phi(xi)}) - f(L_xi)) / eps``."""
    xi = np.asarray(xi_samples, dtype=float)
    base_m = EmpiricalMeasure(xi)
    shift = np.asarray(phi(base_m.points), dtype=float).reshape(base_m.points.shape)
    base = functional(base_m)
    return np.array([
        (functional(EmpiricalMeasure(base_m.points + e * shift)) - base) / e
        for e in eps_list
    ])


def lions_derivative_fd(functional, xi_samples, phi, eps_list=(0.04, 0.02, 0.01),
                        rtol: float = 1e-3) -> float:
    """Directional Lions derivative by push-forward of the same samples.

    The quotients at the given ``eps`` are extrapolated to ``eps = 0`` through
    the interpolating polynomial (Richardson/Neville).  A warning is issued
    when the quotient sequence is not monotone in ``eps`` beyond ``rtol``.
    """
    eps = np.asarray(eps_list, dtype=float)
    if eps.size < 2 or np.any(eps <= 0) or np.unique(eps).size != eps.size:
        raise DomainError("eps_list needs at least two distinct positive values")
    q = fd_quotients(functional, xi_samples, phi, eps)
    order = np.argsort(eps)
    dq = np.diff(q[order])
    scale = rtol * max(1.0, float(np.max(np.abs(q))))
    if np.any(dq > scale) and np.any(dq < -scale):
        warnings.warn("difference quotients are not monotone in eps",
                      ConvergenceWarning, stacklevel=2)
    return _neville_at_zero(eps[order], q[order])
