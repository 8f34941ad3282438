"""Fractional Brownian motion paths and Wiener integrals.

Random numbers are drawn per path from a counter-based Philox stream keyed by
``(sub-seed, path id)``, so a path's increments do not depend on how the batch
is split across worker threads.  Normals come from the inverse normal CDF of
the uniform stream.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

from .errors import CapacityError, ContractError, NumericError, ParameterError
from .frac_calc import GridFunction, volterra_kernel
from .grid import TimeGrid

_TINY = 2.0**-53

# driver slots inside a path's counter space
DRIVER_W = 0          # W behind B^H
DRIVER_W_TILDE = 1    # W~ behind B~^H~
DRIVER_INIT = 2       # initial-condition draws
DRIVER_AUX = 3        # anything else (Cholesky oracle, ...)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus first path id of a reproducible block of streams."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise ParameterError("stream_id must be non-negative")


def sub_seed(seed: int, tag: str) -> int:
    """Independent 64-bit seed for a named purpose (``"mu"``, ``"nu"``, ...)."""
    words = [int(seed) & 0xFFFFFFFF, int(seed) >> 32] + [ord(c) for c in tag]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def _path_normals(seed: int, path: int, driver: int, count: int) -> np.ndarray:
    bg = np.random.Philox(key=int(seed) + (int(path) << 64), counter=[0, 0, 0, driver])
    u = np.random.Generator(bg).random(count)
    np.clip(u, _TINY, 1.0 - _TINY, out=u)
    return ndtri(u)


def standard_normals(rng: RngSpec, n_paths: int, shape: tuple, driver: int,
                     threads: int = 1) -> np.ndarray:
    """Array ``(n_paths, *shape)`` of N(0,1) draws, one stream per path.

    Output is bit-identical for every value of ``threads``.
    """
    shape = tuple(int(s) for s in shape)
    count = int(np.prod(shape)) if shape else 1
    out = np.empty((n_paths, count))

    def fill(lo, hi):
        for p in range(lo, hi):
            out[p] = _path_normals(rng.seed, rng.stream_id + p, driver, count)

    threads = max(1, int(threads))
    if threads == 1 or n_paths < 2 * threads:
        fill(0, n_paths)
    else:
        edges = np.linspace(0, n_paths, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(lambda k: fill(edges[k], edges[k + 1]), range(threads)))
    return out.reshape((n_paths,) + shape)


def brownian_increments(rng: RngSpec, n_paths: int, grid: TimeGrid, dim: int,
                        driver: int, threads: int = 1) -> np.ndarray:
    """Increments ``(n_paths, n_steps, dim)`` with variance ``grid.dt``."""
    z = standard_normals(rng, n_paths, (grid.n_steps, dim), driver, threads)
    z *= np.sqrt(grid.dt)
    return z


# ---------------------------------------------------------------------------
# covariance and exact sampling


def covariance_R(t, s, H: float):
    """fBM covariance ``(t^{2H} + s^{2H} - |t-s|^{2H}) / 2``."""
    if not 0 < H < 1:
        raise ParameterError(f"Hurst index must lie in (0, 1), got {H}")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ParameterError("covariance_R needs non-negative times")
    e = 2 * H
    return (0.5 * (t**e + s**e - np.abs(t - s) ** e))[()]


def sample_fbm_cholesky(grid: TimeGrid, H: float, rng: RngSpec, n_paths: int = 1,
                        threads: int = 1) -> np.ndarray:
    """Exact fBM samples ``(n_paths, node_count)`` by Cholesky factorization."""
    if grid.node_count > 4096:
        raise CapacityError("dense Cholesky sampling is limited to 4096 nodes")
    t = grid.times[1:]
    cov = covariance_R(t[:, None], t[None, :], H)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        w = np.linalg.eigvalsh(cov)
        raise NumericError(
            f"covariance not positive definite (min eigenvalue {w.min():.3e})"
        ) from exc
    z = standard_normals(rng, n_paths, (grid.n_steps,), DRIVER_AUX, threads)
    out = np.zeros((n_paths, grid.node_count))
    out[:, 1:] = z @ L.T
    return out


# ---------------------------------------------------------------------------
# Volterra construction


@lru_cache(maxsize=16)
def volterra_matrix(grid: TimeGrid, H: float) -> np.ndarray:
    """``V[i, j] = K_H(t_i, midpoint of cell j)`` for cells left of ``t_i``."""
    if not 0 < H < 1:
        raise ParameterError(f"Hurst index must lie in (0, 1), got {H}")
    t = grid.times
    mid = t[:-1] + 0.5 * grid.dt
    v = np.zeros((grid.node_count, grid.n_steps))
    ii, jj = np.tril_indices(grid.n_steps)
    v[ii + 1, jj] = volterra_kernel(t[ii + 1], mid[jj], H)
    v.setflags(write=False)
    return v


def sample_fbm_volterra(dW: np.ndarray, H: float, grid: TimeGrid,
                        vector: bool | None = None) -> np.ndarray:
    """fBM path(s) from Brownian increments.

    Parameters
    ----------
    dW : ndarray
        Increments, either ``(..., n_steps, d)`` (vector paths) or
        ``(..., n_steps)`` (scalar paths).
    H : float
    grid : TimeGrid
    vector : bool, optional
        Force the layout; by default ``dW`` is read as vector-valued when
        its second-to-last axis has one entry per cell.

    Returns
    -------
    ndarray
        ``(..., node_count, d)`` or ``(..., node_count)``; value 0 at node 0.
    """
    dW = np.asarray(dW, dtype=float)
    if vector is None:
        vector = dW.ndim >= 2 and dW.shape[-2] == grid.n_steps
    axis = -2 if vector else -1
    if dW.shape[axis] != grid.n_steps:
        raise ContractError("one increment per cell required")
    if H == 0.5:
        return _cumsum0(dW, axis=axis)
    v = volterra_matrix(grid, H)
    if not vector:
        return dW @ v.T
    # node-major result, returned as a (..., nodes, d) view so that the
    # cloud at one node is contiguous
    return np.moveaxis(np.tensordot(v, dW, axes=([1], [dW.ndim - 2])), 0, -2)


def _cumsum0(x: np.ndarray, axis: int) -> np.ndarray:
    c = np.cumsum(x, axis=axis)
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 0)
    return np.pad(c, pad)


# ---------------------------------------------------------------------------
# Wiener integrals of deterministic integrands


def wiener_integral(sigma, fbm: np.ndarray, grid: TimeGrid | None = None) -> np.ndarray:
    """Left-point sums ``t -> sum_{cells s<t} sigma(s) (B_{s+dt} - B_s)``.

    ``sigma`` is a :class:`GridFunction` (or array) with node values of shape
    ``()`` or ``(m, d)``; ``fbm`` has nodes on axis ``-1`` (scalar paths) or
    ``-2`` (vector paths).
    """
    if isinstance(sigma, GridFunction):
        if grid is not None and sigma.grid != grid:
            raise ContractError("integrand and path live on different grids")
        sig = sigma.values
    else:
        sig = np.asarray(sigma, dtype=float)
    fbm = np.asarray(fbm, dtype=float)
    n_nodes = sig.shape[0]
    if sig.ndim == 1:
        if fbm.shape[-1] != n_nodes:
            raise ContractError("integrand and path have different node counts")
        inc = np.diff(fbm, axis=-1) * sig[:-1]
        return _cumsum0(inc, axis=-1)
    if fbm.ndim < 2 or fbm.shape[-2] != n_nodes:
        raise ContractError("integrand and path have different node counts")
    inc = np.einsum("jmd,...jd->...jm", sig[:-1], np.diff(fbm, axis=-2))
    return _cumsum0(inc, axis=-2)


# ---------------------------------------------------------------------------
# bundles


@dataclass
class NoiseBundle:
    """Driving noise of an ensemble.

    ``dW``/``dW_tilde`` are Brownian increments ``(n_paths, n_steps, d)``;
    ``B_H``/``B_Htilde`` the resulting fBM paths ``(n_paths, node_count, d)``.
    """

    grid: TimeGrid
    dW: np.ndarray
    dW_tilde: np.ndarray
    B_H: np.ndarray
    B_Htilde: np.ndarray
    H: float
    H_tilde: float

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @classmethod
    def generate(cls, rng: RngSpec, n_paths: int, grid: TimeGrid, dim: int,
                 H: float, H_tilde: float, threads: int = 1) -> "NoiseBundle":
        dW = brownian_increments(rng, n_paths, grid, dim, DRIVER_W, threads)
        dWt = brownian_increments(rng, n_paths, grid, dim, DRIVER_W_TILDE, threads)
        return cls(grid, dW, dWt, sample_fbm_volterra(dW, H, grid),
                   sample_fbm_volterra(dWt, H_tilde, grid), H, H_tilde)
