r"""Matrix-exponential kernels for sub-intensity matrices.

``exp(T y)`` is evaluated by uniformization: with ``phi = max_k(-t_kk)`` and
``Q = I + T / phi`` (a sub-stochastic matrix),

.. math:: e^{T y} = \sum_{n \ge 0} Q^n \frac{(\phi y)^n}{n!} e^{-\phi y},

truncated at the smallest order ``M`` whose Poisson tail ``P(N_{phi y} > M)`` is below the
tolerance. Large ``phi y`` is first halved ``m`` times so the Poisson mean is below one,
and the result is squared back ``m`` times.

Integrals ``\int_0^y e^{T(y-u)} t \pi^T e^{Tu} du`` come from the upper-right block of the
exponential of the augmented matrix ``[[T, t pi^T], [0, T]]``.

All functions are batched over ``y``: the powers of ``Q`` are shared, only the Poisson
weights and the number of squarings differ per observation.
"""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from phreg.errors import DimensionError, NumericDomainError

DEFAULT_TOL = 1e-12
MAX_ORDER = 400
TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class UniformizationPlan:
    rate: float
    Q: np.ndarray
    order: int
    depth: int


def as_square(T):
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {T.shape}")
    if T.shape[0] == 0:
        raise DimensionError("matrix dimension must be at least 1")
    if not np.all(np.isfinite(T)):
        raise NumericDomainError("matrix has non-finite entries")
    return T


def check_subintensity(T, atol=1e-10):
    T = as_square(T)
    off = T - np.diag(np.diag(T))
    if np.any(np.diag(T) >= 0):
        raise NumericDomainError("sub-intensity matrix needs a strictly negative diagonal")
    if np.any(off < -atol):
        raise NumericDomainError("sub-intensity matrix has negative off-diagonal entries")
    if np.any(T.sum(axis=1) > atol):
        raise NumericDomainError("sub-intensity matrix has positive row sums")
    return T


def truncation_order(mean, tol):
    """Smallest M with P(Poisson(mean) > M) <= tol (log-space tail)."""
    if mean <= 0:
        return 0
    log_tol = np.log(tol)
    for order in range(MAX_ORDER + 1):
        if poisson.logsf(order, mean) <= log_tol:
            return order
    return MAX_ORDER


def squaring_depth(x):
    """Number of halvings bringing the Poisson mean x strictly below one."""
    x = np.asarray(x, dtype=float)
    depth = np.zeros(x.shape, dtype=int)
    big = x >= 1.0
    depth[big] = np.floor(np.log2(x[big])).astype(int) + 1
    return depth


def plan(T, y, tol=DEFAULT_TOL):
    T = as_square(T)
    rate = float(np.max(-np.diag(T)))
    Q = np.eye(T.shape[0]) + T / rate
    depth = int(squaring_depth(rate * y))
    order = truncation_order(math.ldexp(rate * y, -depth), max(math.ldexp(tol, -depth), TINY))
    return UniformizationPlan(rate=rate, Q=Q, order=order, depth=depth)


@lru_cache(maxsize=32)
def _power_table(key, p, order):
    """Q^0..Q^order for the matrix whose bytes are ``key``; shared by repeated likelihood calls on one T."""
    A = np.frombuffer(key).reshape(p, p)
    Q = np.eye(p) + A / float(np.max(-np.diag(A)))
    powers = np.empty((order + 1, p, p))
    powers[0] = np.eye(p)
    for n in range(1, order + 1):
        powers[n] = powers[n - 1] @ Q
    powers.setflags(write=False)
    return powers


def _uniformized(A, ys, tol):
    p = A.shape[0]
    ys = np.asarray(ys, dtype=float).ravel()
    out = np.broadcast_to(np.eye(p), (ys.size, p, p)).copy()
    rate = float(np.max(-np.diag(A)))
    if rate <= 0.0 or ys.size == 0:
        return out

    x = rate * ys
    live = x > 0.0
    if not np.any(live):
        return out
    x = x[live]
    depth = squaring_depth(x)
    scaled = np.ldexp(x, -depth)
    # each squaring at most doubles the truncation error
    order = truncation_order(float(scaled.max()), max(math.ldexp(tol, -int(depth.max())), TINY))

    powers = _power_table(A.tobytes(), p, order)
    k = np.arange(order + 1)
    # Poisson(scaled) probabilities, in log space
    weights = np.exp(k[None, :] * np.log(scaled)[:, None] - scaled[:, None] - gammaln(k + 1)[None, :])
    res = np.einsum("in,njk->ijk", weights, powers)

    for level in range(1, int(depth.max()) + 1):
        sel = depth >= level
        res[sel] = res[sel] @ res[sel]

    out[live] = res
    return out


def _check_times(ys):
    ys = np.asarray(ys, dtype=float)
    if not np.all(np.isfinite(ys)):
        raise NumericDomainError("time argument must be finite")
    if np.any(ys < 0):
        raise NumericDomainError("time argument must be nonnegative")
    return ys


def expm_batch(T, ys, tol=DEFAULT_TOL):
    """exp(T y) for every y in ``ys``; returns an array of shape (len(ys), p, p)."""
    T = check_subintensity(T)
    ys = _check_times(ys)
    return _uniformized(T, ys.ravel(), tol)


def matrix_exponential(T, y, tol=DEFAULT_TOL):
    return expm_batch(T, [y], tol)[0]


def _augmented(T, exit, pi):
    T = check_subintensity(T)
    p = T.shape[0]
    exit = np.asarray(exit, dtype=float).ravel()
    pi = np.asarray(pi, dtype=float).ravel()
    if exit.size != p or pi.size != p:
        raise DimensionError(f"T is {p}x{p} but exit has {exit.size} and pi has {pi.size} entries")
    if np.any(np.abs(exit + T.sum(axis=1)) > 1e-10):
        raise NumericDomainError("exit vector must equal -T e")
    if np.any(pi < 0) or pi.sum() > 1 + 1e-10:
        raise NumericDomainError("initial vector must be nonnegative with total mass <= 1")
    A = np.zeros((2 * p, 2 * p))
    A[:p, :p] = T
    A[:p, p:] = np.outer(exit, pi)
    A[p:, p:] = T
    return A, p


def van_loan_batch(T, exit, pi, ys, tol=DEFAULT_TOL):
    """(exp(T y), int_0^y e^{T(y-u)} t pi^T e^{Tu} du) stacked over ``ys``."""
    A, p = _augmented(T, exit, pi)
    ys = _check_times(ys)
    blocks = _uniformized(A, ys.ravel(), tol)
    return blocks[:, :p, :p], blocks[:, :p, p:]


def van_loan_integral(T, exit, pi, y, tol=DEFAULT_TOL):
    expTy, integral = van_loan_batch(T, exit, pi, [y], tol)
    return expTy[0], integral[0]


def augmented_exponential(T, exit, pi, y, tol=DEFAULT_TOL):
    """Full 2p x 2p exponential of the augmented matrix (block-structure checks)."""
    A, _ = _augmented(T, exit, pi)
    return _uniformized(A, _check_times([y]), tol)[0]
