r"""EM algorithm for PH(pi, T) on (transformed) positive data.

E-step: for every observation z the conditional expectations of the path functionals of the
hidden jump process (starts B_k, sojourn times Z_k, jumps N_ks, exits N_k) given absorption at
z. With ``a = pi^T e^{Tz}``, ``b = e^{Tz} t``, ``J = \int_0^z e^{T(z-u)} t pi^T e^{Tu} du``
and ``f = pi^T b``:

    B_k = pi_k b_k / f,   Z_k = J_kk / f,   N_ks = t_ks J_sk / f,   N_k = t_k a_k / f.

M-step: pi_k = B_k / N, t_ks = N_ks / Z_k, t_k = N_k / Z_k, restricted to the structure.
"""
import logging
from dataclasses import dataclass
from multiprocessing.pool import ThreadPool

import numpy as np

from phreg import matexp
from phreg.errors import DegenerateStateError, DomainError, LikelihoodUnderflowError
from phreg.phase import PhaseTypeLaw, StructureKind, structure_masks

logger = logging.getLogger(__name__)

CHUNK = 256


@dataclass(frozen=True, eq=False)
class SufficientStats:
    B: np.ndarray
    Z: np.ndarray
    Njump: np.ndarray
    Nexit: np.ndarray
    n: float

    def __add__(self, other):
        return SufficientStats(
            self.B + other.B,
            self.Z + other.Z,
            self.Njump + other.Njump,
            self.Nexit + other.Nexit,
            self.n + other.n,
        )


def aggregate(z, weights=None):
    """Unique values, summed multiplicity weights and the first index of each value."""
    z = np.asarray(z, dtype=float).ravel()
    if weights is None:
        weights = np.ones_like(z)
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape != z.shape:
        raise DomainError(f"got {weights.size} weights for {z.size} observations")
    values, first, inverse = np.unique(z, return_index=True, return_inverse=True)
    return values, np.bincount(inverse.ravel(), weights=weights, minlength=values.size), first


def _check_positive(z):
    z = np.asarray(z, dtype=float).ravel()
    if z.size == 0:
        raise DomainError("no observations")
    bad = np.flatnonzero(~(z > 0) | ~np.isfinite(z))
    if bad.size:
        raise DomainError(f"observation {int(bad[0])} is not a positive finite number: {z[bad[0]]!r}")
    return z


def map_chunks(fn, n, threads=1):
    """Apply fn to fixed slices of range(n); results come back in slice order."""
    slices = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if threads <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPool(processes=threads) as pool:
        return pool.map(fn, slices)


def e_step(law, z, weights=None, tol=matexp.DEFAULT_TOL, threads=1):
    z = _check_positive(z)
    values, w, first = aggregate(z, weights)
    pi, T, t = law.pi, law.T, law.exit
    off = T - np.diag(np.diag(T))

    def part(sl):
        E, J = matexp.van_loan_batch(T, t, pi, values[sl], tol)
        a = np.einsum("j,njk->nk", pi, E)
        b = np.einsum("njk,k->nj", E, t)
        dens = b @ pi
        bad = np.flatnonzero(~(dens > 0))
        if bad.size:
            raise LikelihoodUnderflowError(first[sl][bad[0]], float(dens[bad[0]]))
        c = w[sl] / dens
        JT = np.einsum("n,njk->jk", c, J)
        return SufficientStats(
            B=pi * (c @ b),
            Z=np.diagonal(JT).copy(),
            Njump=off * JT.T,
            Nexit=t * (c @ a),
            n=float(w[sl].sum()),
        )

    parts = map_chunks(part, values.size, threads)
    total = parts[0]
    for s in parts[1:]:
        total = total + s
    return total


def m_step(stats, structure):
    kind = StructureKind(structure)
    p = stats.B.size
    pi_free, off_ok, exit_ok = structure_masks(kind, p)
    empty = np.flatnonzero(~(stats.Z > 0))
    if empty.size:
        raise DegenerateStateError(empty[0])

    if kind in (StructureKind.EXPONENTIAL, StructureKind.ERLANG):
        # one shared rate: every event (jump or exit) per unit of total sojourn
        rate = (stats.Njump[off_ok].sum() + stats.Nexit[exit_ok].sum()) / stats.Z.sum()
        T = -rate * np.eye(p)
        T[off_ok] = rate
    else:
        off = np.where(off_ok, stats.Njump / stats.Z[:, None], 0.0)
        ex = np.where(exit_ok, stats.Nexit / stats.Z, 0.0)
        T = off - np.diag(off.sum(axis=1) + ex)

    if pi_free.all():
        pi = stats.B / stats.n
        pi = pi / pi.sum()
    else:
        pi = np.zeros(p)
        pi[0] = 1.0
    return PhaseTypeLaw(pi, T, kind)


def ph_loglik(law, z, weights=None, tol=matexp.DEFAULT_TOL, threads=1):
    """sum_i w_i log(pi^T exp(T z_i) t)."""
    z = _check_positive(z)
    values, w, first = aggregate(z, weights)

    def part(sl):
        E = matexp.expm_batch(law.T, values[sl], tol)
        dens = np.einsum("j,njk,k->n", law.pi, E, law.exit)
        bad = np.flatnonzero(~(dens > 0))
        if bad.size:
            raise LikelihoodUnderflowError(first[sl][bad[0]], float(dens[bad[0]]))
        return float(w[sl] @ np.log(dens))

    return float(sum(map_chunks(part, values.size, threads)))


def fit_ph(z, law, weights=None, tol=1e-8, max_iter=5000, kernel_tol=matexp.DEFAULT_TOL, threads=1):
    """Plain EM on PH data starting from ``law``; returns the fitted law and loglik trace."""
    trace = [ph_loglik(law, z, weights, kernel_tol, threads)]
    for it in range(1, max_iter + 1):
        stats = e_step(law, z, weights, kernel_tol, threads)
        law = m_step(stats, law.structure)
        trace.append(ph_loglik(law, z, weights, kernel_tol, threads))
        gain = trace[-1] - trace[-2]
        logger.debug("EM iteration %d: loglik=%.10g gain=%.3g", it, trace[-1], gain)
        if abs(gain) < tol * abs(trace[-2]):
            break
    return law, trace
