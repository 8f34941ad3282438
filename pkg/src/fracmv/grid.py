"""Uniform time grids and Hurst parameter pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, ParameterError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T]`` into ``n_steps`` cells."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError(f"horizon T must be positive, got {self.T}")
        if self.n_steps < 1:
            raise DomainError(f"grid needs at least one cell, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def node_count(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.node_count) * self.dt

    def node_index(self, t: float, atol: float = 1e-9) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(k * self.dt - t) > atol * max(1.0, self.T):
            raise ContractError(f"t={t} is not a node of {self}")
        return k

    def truncate(self, k: int) -> "TimeGrid":
        """Grid on ``[0, t_k]`` with the same step."""
        if not 1 <= k <= self.n_steps:
            raise ContractError(f"cannot truncate at node {k}")
        return TimeGrid(k * self.dt, k)


@dataclass(frozen=True)
class HurstPair:
    """Hurst indices of the two drivers.

    ``H`` drives the invertible noise and may be rough or smooth; ``H_tilde``
    drives the measure-dependent noise and must exceed 1/2.  ``H = 1/2`` is
    accepted only with ``allow_brownian=True`` (reduction checks).
    """

    H: float
    H_tilde: float
    allow_brownian: bool = False

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise ParameterError(f"H must lie in (0, 1), got {self.H}")
        if self.H == 0.5 and not self.allow_brownian:
            raise ParameterError("H = 1/2 is only admitted with allow_brownian=True")
        if not 0.5 < self.H_tilde < 1.0:
            raise ParameterError(f"H_tilde must lie in (1/2, 1), got {self.H_tilde}")

    @property
    def regime(self) -> str:
        if self.H > 0.5:
            return "smooth"
        if self.H < 0.5:
            return "rough"
        return "brownian"
