"""Gauss hypergeometric function on the real half-line ``z < 1``.

Only the branch needed by the Volterra kernel is implemented: real
parameters, real ``z < 1``.  The power series is used for ``|z| <= 1/2``;
otherwise the Pfaff transformation maps ``z`` into ``(0, 1)`` and, when the
image still exceeds 1/2, the ``1 - w`` connection formula finishes the job.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gamma

from .errors import DomainError, NumericError

_RTOL = 1e-12
_MAX_TERMS = 2000


def _series(a, b, c, z):
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for n in range(_MAX_TERMS):
        term = term * ((a + n) * (b + n) / ((c + n) * (n + 1.0))) * z
        total = total + term
        if np.all(np.abs(term) <= _RTOL * np.abs(total)):
            return total
    raise NumericError("hypergeometric series did not converge")


def _unit_interval(a, b, c, w, one_minus_w=None):
    """F(a, b, c, w) for w in [0, 1).

    ``one_minus_w`` may be supplied when ``1 - w`` is known more accurately
    than the subtraction would give it.
    """
    if one_minus_w is None:
        one_minus_w = 1.0 - w
    out = np.empty_like(w)
    near = w > 0.5
    if np.any(~near):
        out[~near] = _series(a, b, c, w[~near])
    if np.any(near):
        s = c - a - b
        if abs(s - round(s)) < 1e-12:
            raise NumericError("connection formula needs non-integer c - a - b")
        v = one_minus_w[near]
        g = gamma(c)
        t1 = g * gamma(s) / (gamma(c - a) * gamma(c - b)) * _series(a, b, 1.0 - s, v)
        t2 = g * gamma(-s) / (gamma(a) * gamma(b)) * v**s * _series(c - a, c - b, 1.0 + s, v)
        out[near] = t1 + t2
    return out


def _pfaff(a, b, c, z):
    # z < 0: map to w = z/(z-1) in (0, 1); 1 - w = 1/(1 - z) exactly
    onez = 1.0 - z
    return onez ** (-a) * _unit_interval(a, c - b, c, z / (z - 1.0), 1.0 / onez)


def hyp2f1(a: float, b: float, c: float, z) -> np.ndarray:
    """Evaluate ``2F1(a, b; c; z)`` elementwise for real ``z < 1``.

    Parameters
    ----------
    a, b, c : float
        Real parameters; ``c`` must not be a non-positive integer.
    z : array_like
        Real arguments strictly below 1.

    Returns
    -------
    ndarray
        Same shape as ``z``.
    """
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z >= 1.0) or not np.all(np.isfinite(z)):
        raise DomainError("hyp2f1 is only implemented for finite z < 1")
    if c <= 0 and c == round(c):
        raise DomainError("c must not be a non-positive integer")
    if a == 0.0 or b == 0.0:
        out = np.ones_like(z)
        return out[0] if scalar else out
    out = np.empty_like(z)
    small = np.abs(z) <= 0.5
    if np.any(small):
        out[small] = _series(a, b, c, z[small])
    big = ~small
    if np.any(big):
        zb = z[big]
        if np.any(zb > 0):
            # direct route on (1/2, 1)
            pos = zb > 0
            tmp = np.empty_like(zb)
            tmp[pos] = _unit_interval(a, b, c, zb[pos])
            tmp[~pos] = _pfaff(a, b, c, zb[~pos])
            out[big] = tmp
        else:
            out[big] = _pfaff(a, b, c, zb)
    return out[0] if scalar else out
