"""Coefficient families, hypothesis probes and the controllability Gramian.

A law enters the coefficients as a sample array ``(N, d)`` standing for the
uniform empirical measure of its rows.  Coefficients return, for a batch of
``N`` states, arrays whose leading axis is the path axis.

Shapes (``d`` the state dimension, ``l`` the noise dimension; ``l = d``
unless the model is the second block of a degenerate system):

* ``drift``                 ``(N, l)``
* ``sigma``, ``sigma_inv``  ``(l, l)``
* ``sigma_tilde``           ``(l, l)``
* ``grad_b``                ``(N, l, d)``
* ``lions_b``               ``(N, M, l, d)``  derivative in the law at ``y``
* ``lions_b_expect``        ``(N, l)``        ``E<D^L b(x, .)(mu)(X), G>``
* ``lions_sigma_tilde``     ``(M, l, l, d)``
* ``lions_sigma_tilde_expect``  ``(l, l)``    ``E<D^L sigma~(mu)(X), G>``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, DegeneracyError, HypothesisViolation, ParameterError
from .grid import HurstPair


def cloud_mean(x) -> np.ndarray:
    """Column means of an ``(N, d)`` cloud as a BLAS matrix-vector product
    (much faster than ``mean(axis=0)`` for tall arrays)."""
    x = np.asarray(x, dtype=float)
    return _uniform_weights(x.shape[0]) @ x


@lru_cache(maxsize=8)
def _uniform_weights(n: int) -> np.ndarray:
    w = np.full(n, 1.0 / n)
    w.setflags(write=False)
    return w


def _mat(a, shape, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != shape:
        raise ContractError(f"{name} must have shape {shape}, got {a.shape}")
    return a


class ModelSpec:
    """Interface of a coefficient triple ``(b, sigma, sigma~)``.

    Subclasses implement ``drift``, ``sigma``, ``sigma_tilde``, ``grad_b``,
    ``lions_b`` and ``lions_sigma_tilde``.  The expectation helpers have
    generic ``O(N M)`` defaults; closed-form families override them.
    """

    dim: int
    noise_dim: int
    hurst: HurstPair
    kappa: float
    kappa_tilde: float
    p: float = 2.0
    holder: tuple = (1.0, 1.0, 1.0, 1.0)

    def kappa_at(self, t: float) -> float:
        return self.kappa

    # -- coefficients ------------------------------------------------------
    def drift(self, t, x, law):
        raise NotImplementedError

    def sigma(self, t):
        raise NotImplementedError

    def sigma_inv(self, t):
        return np.linalg.inv(self.sigma(t))

    def sigma_tilde(self, t, law):
        raise NotImplementedError

    def grad_b(self, t, x, law):
        raise NotImplementedError

    def lions_b(self, t, x, law, y):
        raise NotImplementedError

    def lions_sigma_tilde(self, t, law, y):
        raise NotImplementedError

    # -- expectations against a tangent field G (law samples X) ----------
    def lions_b_expect(self, t, x, law, G):
        d = np.asarray(self.lions_b(t, x, law, law))
        return np.einsum("nmld,md->nl", d, G) / law.shape[0]

    def lions_sigma_tilde_expect(self, t, law, G):
        d = np.asarray(self.lions_sigma_tilde(t, law, law))
        return np.einsum("mijd,md->ij", d, G) / law.shape[0]

    # -- structure flags ---------------------------------------------------
    def depends_on_law(self) -> bool:
        return True

    @property
    def sigma_is_constant(self) -> bool:
        return False


@dataclass
class LinearMeanFieldModel(ModelSpec):
    """``b = A0 x + A1 mean(mu) + c``, ``sigma~ = S0 + S1 diag(tanh(m))``.

    ``m`` is the mean of the last ``noise_dim`` coordinates of the law, so
    the same family serves as the velocity block of a degenerate system
    (``A0``, ``A1`` of shape ``(l, d)``).  ``sigma`` is constant.
    """

    A0: np.ndarray
    A1: np.ndarray
    c: np.ndarray
    sigma_mat: np.ndarray
    S0: np.ndarray
    S1: np.ndarray
    hurst: HurstPair
    kappa: float | None = None
    kappa_tilde: float | None = None
    p: float = 2.0
    holder: tuple = (1.0, 1.0, 1.0, 1.0)
    dim: int = field(init=False)
    noise_dim: int = field(init=False)

    def __post_init__(self):
        A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        l, d = A0.shape
        self.A0 = A0
        self.A1 = _mat(self.A1, (l, d), "A1")
        self.c = np.asarray(self.c, dtype=float).reshape(l)
        self.sigma_mat = _mat(self.sigma_mat, (l, l), "sigma")
        self.S0 = _mat(self.S0, (l, l), "S0")
        self.S1 = _mat(self.S1, (l, l), "S1")
        self.dim, self.noise_dim = d, l
        if abs(np.linalg.det(self.sigma_mat)) < 1e-300:
            raise ParameterError("sigma must be invertible")
        self._sigma_inv = np.linalg.inv(self.sigma_mat)
        op = lambda m: float(np.linalg.norm(m, 2))
        if self.kappa is None:
            self.kappa = max(op(self.A0), op(self.A1), op(self.S1), 1e-12)
        if self.kappa_tilde is None:
            self.kappa_tilde = op(self._sigma_inv)

    @classmethod
    def scalar(cls, a, abar, c, sigma, s0, s1, H, H_tilde, **kw):
        return cls([[a]], [[abar]], [c], [[sigma]], [[s0]], [[s1]],
                   HurstPair(H, H_tilde, allow_brownian=(H == 0.5)), **kw)

    def _m(self, law):
        return cloud_mean(law)

    def drift(self, t, x, law):
        return x @ self.A0.T + self.A1 @ self._m(law) + self.c

    def drift_from_mean(self, t, x, mean):
        return x @ self.A0.T + self.A1 @ mean + self.c

    def sigma(self, t):
        return self.sigma_mat

    def sigma_inv(self, t):
        return self._sigma_inv

    @property
    def sigma_is_constant(self) -> bool:
        return True

    def sigma_tilde_from_mean(self, t, mean):
        v = np.tanh(mean[-self.noise_dim:])
        return self.S0 + self.S1 * v[None, :]

    def sigma_tilde(self, t, law):
        return self.sigma_tilde_from_mean(t, self._m(law))

    def grad_b(self, t, x, law):
        return np.broadcast_to(self.A0, (np.shape(x)[0],) + self.A0.shape)

    def lions_b(self, t, x, law, y):
        n, m = np.shape(x)[0], np.shape(y)[0]
        return np.broadcast_to(self.A1, (n, m) + self.A1.shape)

    def _dsig(self, mean):
        # d sigma~_ij / d mean_k, nonzero only for k = the j-th noise coordinate
        l, d = self.noise_dim, self.dim
        out = np.zeros((l, l, d))
        sech2 = 1.0 - np.tanh(mean[-l:]) ** 2
        for j in range(l):
            out[:, j, d - l + j] = self.S1[:, j] * sech2[j]
        return out

    def lions_sigma_tilde(self, t, law, y):
        return np.broadcast_to(self._dsig(self._m(law)), (np.shape(y)[0], self.noise_dim,
                                                          self.noise_dim, self.dim))

    def lions_b_expect(self, t, x, law, G):
        v = self.A1 @ cloud_mean(G)
        return np.broadcast_to(v, (np.shape(x)[0], self.noise_dim))

    def lions_sigma_tilde_expect(self, t, law, G):
        return self._dsig(self._m(law)) @ cloud_mean(G)

    def lions_sigma_tilde_expect_from_mean(self, t, mean, mean_G):
        return self._dsig(mean) @ mean_G

    def depends_on_law(self) -> bool:
        return bool(np.any(self.A1 != 0) or np.any(self.S1 != 0))


# ---------------------------------------------------------------------------
# degenerate (stochastic Hamiltonian) structure


@dataclass
class DegenerateSpec:
    """``dX1 = (A X1 + B X2) dt``, ``dX2 = b dt + sigma dB^H + sigma~ dB~``.

    ``inner`` is a model on ``R^{m+l}`` whose drift and noises have ``l``
    components (the second block).
    """

    m: int
    l: int
    A: np.ndarray
    B_mat: np.ndarray
    inner: ModelSpec

    def __post_init__(self):
        self.A = _mat(self.A, (self.m, self.m), "A")
        self.B_mat = np.asarray(self.B_mat, dtype=float).reshape(self.m, self.l)
        if self.inner.dim != self.m + self.l or self.inner.noise_dim != self.l:
            raise ContractError("inner model must act on R^{m+l} with l noise components")

    @property
    def dim(self) -> int:
        return self.m + self.l

    @property
    def hurst(self) -> HurstPair:
        return self.inner.hurst


# ---------------------------------------------------------------------------
# hypothesis probes


@dataclass
class HypothesisReport:
    ratios: dict
    kappa: float
    kappa_tilde: float
    n_probes: int

    @property
    def worst(self) -> float:
        return max(self.ratios.values()) if self.ratios else 0.0

    def lines(self):
        return [f"{k}: {v:.4g}" for k, v in sorted(self.ratios.items())]


def validate_hypotheses(spec: ModelSpec, sample_budget: int = 64, T: float = 1.0,
                        seed: int = 0, cloud: int = 32, slack: float = 0.01) -> HypothesisReport:
    """Probe Lipschitz and boundedness constants on random inputs.

    Reports, for each hypothesis, the worst observed ratio of the measured
    quantity to its declared bound.  Raises :class:`HypothesisViolation`
    when a ratio exceeds ``1 + slack``.
    """
    from .measures import EmpiricalMeasure, wasserstein_p

    rng = np.random.default_rng(seed)
    d = spec.dim
    op = lambda m: float(np.linalg.norm(m, 2))
    worst = {k: 0.0 for k in ("grad_b", "lions_b", "b_law_lipschitz",
                               "sigma_tilde_lipschitz", "lions_sigma_tilde",
                               "sigma_inv_bound", "sigma_inv_holder")}
    for _ in range(sample_budget):
        t, s = np.sort(rng.uniform(0.0, T, size=2))
        kap = spec.kappa_at(T)
        x = rng.normal(size=(1, d)) * 2.0
        mu = rng.normal(size=(cloud, d)) + rng.normal(size=d)
        nu = rng.normal(size=(cloud, d)) * rng.uniform(0.5, 2.0) + rng.normal(size=d)
        w = wasserstein_p(EmpiricalMeasure(mu), EmpiricalMeasure(nu), spec.p)
        worst["grad_b"] = max(worst["grad_b"], op(spec.grad_b(t, x, mu)[0]) / kap)
        lb = np.asarray(spec.lions_b(t, x, mu, mu[:4]))
        worst["lions_b"] = max(worst["lions_b"], max(op(m) for m in lb[0]) / kap)
        if w > 1e-12:
            db = np.linalg.norm(spec.drift(t, x, mu) - spec.drift(t, x, nu))
            worst["b_law_lipschitz"] = max(worst["b_law_lipschitz"], db / (kap * w))
            ds = op(spec.sigma_tilde(t, mu) - spec.sigma_tilde(t, nu))
            worst["sigma_tilde_lipschitz"] = max(worst["sigma_tilde_lipschitz"], ds / (kap * w))
        ls = np.asarray(spec.lions_sigma_tilde(t, mu, mu[:4]))
        ls_norm = max(float(np.linalg.norm(ls[i].reshape(-1, d), 2)) for i in range(ls.shape[0]))
        worst["lions_sigma_tilde"] = max(worst["lions_sigma_tilde"], ls_norm / kap)
        si_t, si_s = spec.sigma_inv(t), spec.sigma_inv(s)
        worst["sigma_inv_bound"] = max(worst["sigma_inv_bound"],
                                       op(si_t) / spec.kappa_tilde)
        if t > s:
            delta = spec.holder[3]
            worst["sigma_inv_holder"] = max(
                worst["sigma_inv_holder"],
                op(si_t - si_s) / ((t - s) ** delta * spec.kappa_tilde))
    rep = HypothesisReport(worst, float(spec.kappa_at(T)), float(spec.kappa_tilde), sample_budget)
    bad = {k: v for k, v in worst.items() if v > 1.0 + slack}
    if bad:
        raise HypothesisViolation(
            "declared constants violated: " + ", ".join(f"{k}={v:.4g}" for k, v in bad.items()))
    return rep


# ---------------------------------------------------------------------------
# Kalman rank and Gramian


def kalman_matrix(A, B_mat) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B_mat, dtype=float).reshape(A.shape[0], -1)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def kalman_rank(A, B_mat) -> int:
    """Rank of ``[B, AB, ..., A^{m-1} B]`` (SVD, tolerance ``1e-10 * |K|``)."""
    s = np.linalg.svd(kalman_matrix(A, B_mat), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-10 * s[0]))


def kalman_index(A, B_mat) -> int | None:
    """Smallest ``k`` with ``rank [B, ..., A^k B] = m``; ``None`` if never."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m = A.shape[0]
    K = kalman_matrix(A, B_mat)
    l = K.shape[1] // m
    for k in range(m):
        sub = K[:, : (k + 1) * l]
        s = np.linalg.svd(sub, compute_uv=False)
        if s[0] > 0 and np.sum(s > 1e-10 * s[0]) == m:
            return k
    return None


def expm_series(A, s) -> np.ndarray:
    """``exp(s_i A)`` for an array of scalars, shape ``(len(s), m, m)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if not np.any(A):
        return np.broadcast_to(np.eye(A.shape[0]), (s.size,) + A.shape).copy()
    return np.stack([expm(si * A) for si in s])


def gramian_U(t: float, A, B_mat, quad_nodes: int = 64):
    """Controllability Gramian with the parabolic weight ``s(t-s)/t^2``.

    ``U_t = int_0^t s(t-s)/t^2 e^{-sA} B B* e^{-sA*} ds`` by Gauss-Legendre
    quadrature.

    Returns
    -------
    U : ndarray (m, m)
    min_eig : float

    Raises
    ------
    DegeneracyError
        If the smallest eigenvalue does not exceed ``1e-12``.
    """
    if not t > 0:
        raise ParameterError("gramian_U needs t > 0")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B_mat, dtype=float).reshape(A.shape[0], -1)
    x, w = np.polynomial.legendre.leggauss(quad_nodes)
    s = 0.5 * t * (x + 1.0)
    w = 0.5 * t * w * s * (t - s) / t**2
    E = expm_series(-A, s) @ B
    U = np.einsum("k,kij,klj->il", w, E, E)
    U = 0.5 * (U + U.T)
    lam = float(np.linalg.eigvalsh(U)[0])
    if lam <= 1e-12:
        raise DegeneracyError(
            f"Gramian is singular at t={t} (min eigenvalue {lam:.3e}); "
            f"Kalman rank {kalman_rank(A, B)} < m = {A.shape[0]}")
    return U, lam


# ---------------------------------------------------------------------------
# initial laws


@dataclass(frozen=True)
class InitialLaw:
    """Gaussian initial law ``N(mean, diag(std^2))``; ``std = 0`` gives a Dirac."""

    mean: tuple
    std: tuple

    def __post_init__(self):
        m = tuple(float(v) for v in np.atleast_1d(self.mean))
        s = tuple(float(v) for v in np.atleast_1d(self.std))
        if len(s) == 1 and len(m) > 1:
            s = s * len(m)
        if len(s) != len(m) or any(v < 0 for v in s):
            raise ParameterError("initial law needs one non-negative std per coordinate")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def shifted(self, v) -> "InitialLaw":
        v = np.broadcast_to(np.asarray(v, dtype=float), (self.dim,))
        return InitialLaw(tuple(np.add(self.mean, v)), self.std)

    def from_normals(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals ``(N, d)`` to samples."""
        return np.asarray(self.mean) + z * np.asarray(self.std)
