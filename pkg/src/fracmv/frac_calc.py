"""Discrete fractional calculus on uniform grids.

Every operator is represented as a dense lower-triangular matrix acting on
node values, built by product integration: the regular part of the
integrand is interpolated piecewise linearly and the singular power factor
is integrated exactly on every cell.  The matrices are cached per
``(grid, order)`` so that Monte Carlo code can apply them to whole batches
of paths with a single matrix product.

Conventions
-----------
Node values live on axis 0 of :class:`GridFunction` values.  Batch helpers
(``*_matrix``) return ``M`` with ``out[i] = sum_j M[i, j] f[j]``; for an
array of paths with nodes on the last axis use ``paths @ M.T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma

from .errors import ContractError, DomainError, ParameterError
from .grid import TimeGrid
from .special import hyp2f1


@dataclass(frozen=True)
class GridFunction:
    """Node values of a (vector- or matrix-valued) function on a grid."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.grid.node_count:
            raise ContractError(
                f"expected {self.grid.node_count} node values, got {v.shape[0]}"
            )
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: TimeGrid, f) -> "GridFunction":
        return cls(grid, np.asarray(f(grid.times), dtype=float))


def _as_alpha(alpha) -> float:
    return float(getattr(alpha, "alpha", alpha))


# ---------------------------------------------------------------------------
# cell moments


def _moment(p: float, k: np.ndarray) -> np.ndarray:
    """int_{k-1}^{k} v^p dv for k >= 1 (p > -1 when k = 1)."""
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        # k = 1 with p <= -1 is never used by callers
        return (k ** (p + 1) - (k - 1) ** (p + 1)) / (p + 1)


def _linear_weights(p: float, k: np.ndarray):
    """Weights of the left/right node of a cell at distance index ``k``.

    With ``y = y_{j-1} + h*tau`` and ``x - y = h*v``, ``v = k - tau``, these
    are int v^p (1 - tau) dv and int v^p tau dv over ``v in [k-1, k]``.
    """
    k = np.asarray(k, dtype=float)
    m_p = _moment(p, k)
    m_p1 = _moment(p + 1, k)
    with np.errstate(invalid="ignore"):
        return m_p1 - (k - 1) * m_p, k * m_p - m_p1


def _freeze(m: np.ndarray) -> np.ndarray:
    m.setflags(write=False)
    return m


# ---------------------------------------------------------------------------
# Riemann-Liouville integral


@lru_cache(maxsize=64)
def _rl_integral_cached(n: int, dt: float, alpha: float) -> np.ndarray:
    m = np.zeros((n + 1, n + 1))
    k = np.arange(1, n + 1)
    wl, wr = _linear_weights(alpha - 1.0, k)
    scale = dt**alpha / gamma(alpha)
    for i in range(1, n + 1):
        kk = i - np.arange(1, i + 1) + 1  # distance index of cells 1..i
        m[i, 0:i] += wl[kk - 1]
        m[i, 1 : i + 1] += wr[kk - 1]
    return _freeze(m * scale)


def rl_integral_matrix(grid: TimeGrid, alpha) -> np.ndarray:
    """Product-integration matrix of the left Riemann-Liouville integral."""
    a = _as_alpha(alpha)
    if not a > 0:
        raise ParameterError(f"integration order must be positive, got {a}")
    return _rl_integral_cached(grid.n_steps, grid.dt, a)


@lru_cache(maxsize=64)
def _weighted_rl_cached(n: int, dt: float, alpha: float, gam: float) -> np.ndarray:
    m = np.zeros((n + 1, n + 1))
    y = np.arange(n + 1) * dt
    wl, wr = _linear_weights(alpha - 1.0, np.arange(1, n + 1))
    hp = dt**alpha
    ypow = np.zeros(n + 1)
    ypow[1:] = y[1:] ** gam
    # single cell: both singularities, exact Beta moments
    b1 = beta_fn(gam + 1, alpha)
    b2 = beta_fn(gam + 2, alpha)
    m[1, 0] = dt ** (gam + alpha) * (b1 - b2)
    m[1, 1] = dt ** (gam + alpha) * b2
    c0 = dt ** (gam + 1) * (1.0 / (gam + 1) - 1.0 / (gam + 2))
    c1 = dt ** (gam + 1) / (gam + 2)
    for i in range(2, n + 1):
        x = y[i]
        # first cell: smooth (x-y)^{alpha-1} f interpolated against exact y^gam
        m[i, 0] += c0 * x ** (alpha - 1)
        m[i, 1] += c1 * (x - dt) ** (alpha - 1)
        # remaining cells 2..i: y^gam f interpolated against exact kernel
        cells = np.arange(2, i + 1)
        kk = i - cells + 1
        m[i, cells - 1] += hp * wl[kk - 1] * ypow[cells - 1]
        m[i, cells] += hp * wr[kk - 1] * ypow[cells]
    if abs(gam + alpha) < 1e-14:
        m[0, 0] = b1
    return m / gamma(alpha)


def weighted_rl_matrix(grid: TimeGrid, alpha, gam: float) -> np.ndarray:
    """Matrix of ``x -> (1/Gamma(alpha)) int_0^x y^gam (x-y)^{alpha-1} f(y) dy``.

    ``gam > -1`` and ``alpha > 0``.  Row 0 holds the ``x -> 0`` limit, which
    is nonzero only when ``gam + alpha = 0``.
    """
    a = _as_alpha(alpha)
    if not a > 0:
        raise ParameterError(f"integration order must be positive, got {a}")
    if not gam > -1:
        raise ParameterError(f"power weight must exceed -1, got {gam}")
    if gam + a < -1e-14:
        raise ParameterError("gam + alpha must be non-negative")
    return _freeze(_weighted_rl_cached(grid.n_steps, grid.dt, a, float(gam)))


def rl_integral_left(f: GridFunction, alpha) -> GridFunction:
    """Left Riemann-Liouville integral of order ``alpha`` at every node.

    Parameters
    ----------
    f : GridFunction
    alpha : float or FracOrder
        Positive order.

    Examples
    --------
    >>> g = TimeGrid(1.0, 256)
    >>> out = rl_integral_left(GridFunction(g, np.ones(257)), 0.5)
    >>> round(float(out.values[-1]), 4)
    1.1284
    """
    m = rl_integral_matrix(f.grid, alpha)
    return GridFunction(f.grid, np.tensordot(m, f.values, axes=1))


# ---------------------------------------------------------------------------
# Weyl derivative


def _extrapolate_first_row(m: np.ndarray) -> None:
    m[0] = 2.0 * m[1] - m[2]


@lru_cache(maxsize=64)
def _weyl_cached(n: int, dt: float, alpha: float) -> np.ndarray:
    if n < 2:
        raise DomainError("the Weyl derivative needs at least two cells")
    m = np.zeros((n + 1, n + 1))
    wl, wr = _linear_weights(-alpha - 1.0, np.arange(1, n + 1))
    tot = _moment(-alpha - 1.0, np.arange(2, n + 1))  # wl + wr for k >= 2
    hp = dt ** (-alpha)
    last = hp / (1.0 - alpha)
    for i in range(1, n + 1):
        x = i * dt
        row = m[i]
        # alpha * int (f(x) - f(y)) (x-y)^{-alpha-1} dy
        row[i] += alpha * last
        row[i - 1] -= alpha * last
        if i >= 2:
            cells = np.arange(1, i)  # cells with distance index >= 2
            kk = i - cells + 1
            row[i] += alpha * hp * tot[kk - 2].sum()
            row[cells - 1] -= alpha * hp * wl[kk - 1]
            row[cells] -= alpha * hp * wr[kk - 1]
        row[i] += x ** (-alpha)
    _extrapolate_first_row(m)
    return m / gamma(1.0 - alpha)


def weyl_derivative_matrix(grid: TimeGrid, alpha) -> np.ndarray:
    a = _as_alpha(alpha)
    if not 0 < a < 1:
        raise ParameterError(f"derivative order must lie in (0, 1), got {a}")
    return _freeze(_weyl_cached(grid.n_steps, grid.dt, a))


def rl_derivative_left(f: GridFunction, alpha) -> GridFunction:
    """Left fractional derivative of order ``alpha`` in Weyl form.

    The value at ``x = 0`` is extrapolated linearly from the next two nodes.
    """
    m = weyl_derivative_matrix(f.grid, alpha)
    return GridFunction(f.grid, np.tensordot(m, f.values, axes=1))


# ---------------------------------------------------------------------------
# Volterra kernel


def kernel_normalizer(H: float) -> float:
    """Variance constant ``V_H`` of the hypergeometric kernel.

    ``int_0^t K(t,r)^2 dr = V_H t^{2H}`` for the un-normalized kernel
    ``(t-s)^{H-1/2} F(.)/Gamma(H+1/2)``; dividing by ``sqrt(V_H)`` gives a
    kernel whose covariance is exactly ``R_H``.
    """
    if H == 0.5:
        return 1.0
    return gamma(2 - 2 * H) * np.cos(np.pi * H) / (np.pi * H * (1 - 2 * H))


def _check_H(H: float) -> None:
    if not 0.0 < H < 1.0:
        raise ParameterError(f"Hurst index must lie in (0, 1), got {H}")


def volterra_kernel(t, s, H: float):
    """Square-integrable kernel with ``int K(t,r) K(s,r) dr = R_H(t, s)``.

    Vectorized over ``t`` and ``s``; requires ``0 < s < t``.
    """
    _check_H(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("volterra_kernel needs 0 < s < t")
    if H == 0.5:
        return np.ones(np.broadcast(t, s).shape)[()]
    tb, sb = np.broadcast_arrays(t, s)
    f = hyp2f1(H - 0.5, 0.5 - H, H + 0.5, (1.0 - tb / sb).ravel()).reshape(tb.shape)
    val = (tb - sb) ** (H - 0.5) * f / gamma(H + 0.5)
    return val[()] / np.sqrt(kernel_normalizer(H))


# ---------------------------------------------------------------------------
# K_H and its inverse


@lru_cache(maxsize=32)
def _K_cached(n: int, dt: float, H: float) -> np.ndarray:
    grid = TimeGrid(n * dt, n)
    s = grid.times
    if H == 0.5:
        return rl_integral_matrix(grid, 1.0).copy()
    if H > 0.5:
        a = H - 0.5
        inner = weighted_rl_matrix(grid, a, -a) * (s**a)[:, None]
        m = rl_integral_matrix(grid, 1.0) @ inner
    else:
        b = 0.5 - H
        inner = weighted_rl_matrix(grid, b, -b) * (s**b)[:, None]
        m = rl_integral_matrix(grid, 2 * H) @ inner
    return m / np.sqrt(kernel_normalizer(H))


def K_H_matrix(grid: TimeGrid, H: float) -> np.ndarray:
    """Matrix of ``(K_H f)(t) = int_0^t K_H(t,s) f(s) ds`` on node values."""
    _check_H(H)
    return _freeze(_K_cached(grid.n_steps, grid.dt, float(H)))


@lru_cache(maxsize=32)
def _Kinv_cached(n: int, dt: float, H: float) -> np.ndarray:
    grid = TimeGrid(n * dt, n)
    s = grid.times
    if H == 0.5:
        return np.eye(n + 1)
    if H < 0.5:
        b = 0.5 - H
        m = weighted_rl_matrix(grid, b, b).copy()
        m[1:] *= (s[1:] ** (-b))[:, None]
        _extrapolate_first_row(m)
        return m * np.sqrt(kernel_normalizer(H))
    # H > 1/2: s^a D^a [r^{-a} u] with the exact part of the power split off,
    #   s^a D^a[r^{-a} u](s) = C s^{-a} u(s) + a s^a / G(1-a) * J(s),
    #   J(s) = int_0^s r^{-a} (u(s) - u(r)) (s - r)^{-a-1} dr.
    a = H - 0.5
    if n < 2:
        raise DomainError("the inverse operator needs at least two cells")
    m = np.zeros((n + 1, n + 1))
    C = gamma(1 - a) / gamma(1 - 2 * a)
    wl, wr = _linear_weights(-a - 1.0, np.arange(1, n + 1))
    hp = dt ** (-a)
    rpow = np.zeros(n + 1)
    rpow[1:] = s[1:] ** (-a)
    fc0 = dt ** (1 - a) * (1.0 / (1 - a) - 1.0 / (2 - a))
    fc1 = dt ** (1 - a) / (2 - a)
    for i in range(1, n + 1):
        w = np.zeros(i)  # J = sum_j w_j (u_i - u_j), j < i
        if i == 1:
            w[0] = dt ** (-2 * a) * beta_fn(1 - a, 1 - a)
        else:
            si = s[i]
            w[i - 1] += rpow[i - 1] * hp / (1 - a)
            w[0] += fc0 * si ** (-a - 1)
            w[1] += fc1 * (si - dt) ** (-a - 1)
            if i >= 3:
                cells = np.arange(2, i)
                kk = i - cells + 1
                w[cells - 1] += hp * wl[kk - 1] * rpow[cells - 1]
                w[cells] += hp * wr[kk - 1] * rpow[cells]
        c = a * s[i] ** a / gamma(1 - a)
        m[i, :i] -= c * w
        m[i, i] += c * w.sum() + C * s[i] ** (-a)
    _extrapolate_first_row(m)
    return m * np.sqrt(kernel_normalizer(H))


def K_H_inverse_rate_matrix(grid: TimeGrid, H: float) -> np.ndarray:
    """Matrix mapping node values of ``u = h'`` to ``K_H^{-1} h`` at nodes.

    For ``H > 1/2`` this is ``s^{H-1/2} D^{H-1/2}[r^{1/2-H} u]``; for
    ``H < 1/2`` it is ``s^{H-1/2} I^{1/2-H}[r^{1/2-H} u]``; at ``H = 1/2``
    the identity.  Row 0 is extrapolated from rows 1 and 2.
    """
    _check_H(H)
    return _freeze(_Kinv_cached(grid.n_steps, grid.dt, float(H)))


def forward_rate(values: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    """Forward differences assigned to left nodes; backward at the last node."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    d = np.empty_like(v)
    d[:-1] = (v[1:] - v[:-1]) / dt
    d[-1] = d[-2]
    return np.moveaxis(d, 0, axis)


def apply_K_H(f: GridFunction, H: float) -> GridFunction:
    """``t -> int_0^t K_H(t,s) f(s) ds`` at every node."""
    m = K_H_matrix(f.grid, H)
    return GridFunction(f.grid, np.tensordot(m, f.values, axes=1))


def apply_K_H_inverse(h: GridFunction, H: float, atol: float = 1e-10) -> GridFunction:
    """Inverse Volterra operator applied to an absolutely continuous ``h``.

    ``h'`` is taken by forward differences on cells.  Raises
    :class:`ContractError` when ``h(0)`` is not zero.
    """
    _check_H(H)
    v = h.values
    scale = max(1.0, float(np.max(np.abs(v)))) if v.size else 1.0
    if np.any(np.abs(v[0]) > atol * scale):
        raise ContractError("apply_K_H_inverse requires h(0) = 0")
    u = forward_rate(v, h.grid.dt)
    m = K_H_inverse_rate_matrix(h.grid, H)
    return GridFunction(h.grid, np.tensordot(m, u, axes=1))
