r"""Phase-type (PH) and inhomogeneous phase-type (IPH) laws.

A law ``PH(pi, T)`` is the absorption time ``Z`` of a Markov jump process with transient
states ``1..p``. An IPH law is ``Y = g(Z; theta)`` where ``g^{-1}(y) = \int_0^y lambda(s) ds``;
equivalently the jump process runs with time-varying intensity ``lambda(t) T``. Hence

.. math::

    S_Y(y) = \pi^T e^{g^{-1}(y) T} e, \qquad f_Y(y) = \lambda(y)\, \pi^T e^{g^{-1}(y) T} t.

The transform families (``g``, ``g^{-1}``, ``lambda`` and the ``theta``-derivatives used by
the score) are written in closed form below.
"""
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from phreg import matexp
from phreg.errors import (
    DomainError,
    NumericDomainError,
    StructureError,
    TailUnderflowWarning,
    UnsupportedTransformError,
)

SURVIVAL_FLOOR = 1e-300


class StructureKind(str, Enum):
    EXPONENTIAL = "exponential"
    ERLANG = "erlang"
    HYPEREXPONENTIAL = "hyperexp"
    COXIAN = "coxian"
    GENERALIZED_COXIAN = "gcoxian"
    GENERAL = "general"


# pi pinned to e_1 for these kinds
PINNED_START = {StructureKind.EXPONENTIAL, StructureKind.ERLANG, StructureKind.COXIAN}


def structure_masks(kind, p):
    """Boolean masks (pi_free, offdiag_allowed, exit_allowed) for a structure of size p."""
    kind = StructureKind(kind)
    if p < 1:
        raise StructureError(f"number of phases must be >= 1, got {p}")
    if kind is StructureKind.EXPONENTIAL and p != 1:
        raise StructureError(f"exponential structure has exactly one phase, got p={p}")
    pi_free = np.zeros(p, dtype=bool) if kind in PINNED_START else np.ones(p, dtype=bool)
    pi_free[0] = True
    off = np.zeros((p, p), dtype=bool)
    if kind in (StructureKind.ERLANG, StructureKind.COXIAN, StructureKind.GENERALIZED_COXIAN):
        off[np.arange(p - 1), np.arange(1, p)] = True
    elif kind is StructureKind.GENERAL:
        off[:] = True
        np.fill_diagonal(off, False)
    exit_ok = np.ones(p, dtype=bool)
    if kind is StructureKind.ERLANG:
        exit_ok[:] = False
        exit_ok[-1] = True
    return pi_free, off, exit_ok


def parameter_count(kind, p):
    """Free (pi, T) parameters in the usual parametrization of each structure."""
    kind = StructureKind(kind)
    structure_masks(kind, p)
    return {
        StructureKind.EXPONENTIAL: 1,
        StructureKind.ERLANG: 1,
        StructureKind.HYPEREXPONENTIAL: 2 * p - 1,
        StructureKind.COXIAN: 2 * p - 1,
        StructureKind.GENERALIZED_COXIAN: 3 * p - 2,
        StructureKind.GENERAL: p * p + p - 1,
    }[kind]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PhaseTypeLaw:
    pi: np.ndarray
    T: np.ndarray
    structure: StructureKind = StructureKind.GENERAL

    def __post_init__(self):
        T = matexp.check_subintensity(self.T)
        pi = np.asarray(self.pi, dtype=float).ravel()
        kind = StructureKind(self.structure)
        p = T.shape[0]
        if pi.size != p:
            raise StructureError(f"pi has {pi.size} entries but T is {p}x{p}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise StructureError(f"pi must be a probability vector, got {pi.tolist()}")
        pi_free, off_ok, exit_ok = structure_masks(kind, p)
        off = T - np.diag(np.diag(T))
        exit = -T.sum(axis=1)
        if np.any(pi[~pi_free] != 0):
            raise StructureError(f"{kind.value} structure requires pi = e_1")
        if np.any(off[~off_ok] != 0):
            raise StructureError(f"T has transitions outside the {kind.value} pattern")
        if np.any(exit[~exit_ok] > 1e-10 * np.abs(np.diag(T))[~exit_ok]):
            raise StructureError(f"T has exits outside the {kind.value} pattern")
        if kind is StructureKind.ERLANG and np.ptp(np.diag(T)) > 1e-9 * abs(T[0, 0]):
            raise StructureError("erlang structure requires equal rates")
        object.__setattr__(self, "pi", _frozen(pi))
        object.__setattr__(self, "T", _frozen(T))
        object.__setattr__(self, "structure", kind)

    @property
    def p(self):
        return self.T.shape[0]

    @property
    def exit(self):
        return -self.T.sum(axis=1)

    def to_dict(self):
        return {
            "structure": self.structure.value,
            "p": self.p,
            "pi": self.pi.tolist(),
            "T": self.T.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(pi=doc["pi"], T=doc["T"], structure=doc["structure"])


# --- inhomogeneity transforms -------------------------------------------------------------


class Family(str, Enum):
    IDENTITY = "identity"
    PARETO = "pareto"
    WEIBULL = "weibull"
    LOGNORMAL = "lognormal"
    GOMPERTZ = "gompertz"


PARAM_NAMES = {
    Family.IDENTITY: (),
    Family.PARETO: ("eta",),
    Family.WEIBULL: ("eta",),
    Family.LOGNORMAL: ("gamma",),
    Family.GOMPERTZ: ("eta",),
}

# lower bound of the single parameter of each family
PARAM_FLOOR = {Family.PARETO: 0.0, Family.WEIBULL: 0.0, Family.LOGNORMAL: 1.0, Family.GOMPERTZ: 0.0}


@dataclass(frozen=True)
class InhomogeneityTransform:
    family: Family = Family.IDENTITY
    theta: tuple = field(default=())

    def __post_init__(self):
        family = Family(self.family)
        theta = tuple(float(v) for v in np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if len(theta) != len(PARAM_NAMES[family]):
            raise UnsupportedTransformError(
                f"{family.value} takes {len(PARAM_NAMES[family])} parameter(s), got {len(theta)}"
            )
        if theta and not (np.isfinite(theta[0]) and theta[0] > PARAM_FLOOR[family]):
            raise DomainError(f"{family.value} parameter must exceed {PARAM_FLOOR[family]}, got {theta[0]}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "theta", theta)

    @property
    def param_names(self):
        return PARAM_NAMES[self.family]

    @property
    def n_params(self):
        return len(self.theta)

    def g(self, z):
        z = np.asarray(z, dtype=float)
        f = self.family
        if f is Family.IDENTITY:
            return z.copy()
        (a,) = self.theta
        if f is Family.PARETO:
            return a * np.expm1(z)
        if f is Family.WEIBULL:
            return z ** (1.0 / a)
        if f is Family.LOGNORMAL:
            return np.expm1(z ** (1.0 / a))
        return np.log1p(a * z) / a

    def g_inv(self, y):
        """Integrated intensity; +inf once it overflows (the law puts no mass there)."""
        y = np.asarray(y, dtype=float)
        f = self.family
        if f is Family.IDENTITY:
            return y.copy()
        (a,) = self.theta
        with np.errstate(over="ignore"):
            if f is Family.PARETO:
                return np.log1p(y / a)
            if f is Family.WEIBULL:
                return y**a
            if f is Family.LOGNORMAL:
                return np.log1p(y) ** a
            return np.expm1(a * y) / a

    def intensity(self, y):
        y = np.asarray(y, dtype=float)
        f = self.family
        if f is Family.IDENTITY:
            return np.ones_like(y)
        (a,) = self.theta
        if f is Family.PARETO:
            return 1.0 / (y + a)
        if f is Family.WEIBULL:
            return a * y ** (a - 1.0)
        if f is Family.LOGNORMAL:
            return a * np.log1p(y) ** (a - 1.0) / (1.0 + y)
        with np.errstate(over="ignore"):
            return np.exp(a * y)

    def d_g_inv(self, y):
        """d g^{-1}(y; theta) / d theta, shape (n_params, len(y))."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        f = self.family
        if f is Family.IDENTITY:
            return np.empty((0, y.size))
        (a,) = self.theta
        if f is Family.PARETO:
            d = -y / (a * (a + y))
        elif f is Family.WEIBULL:
            d = y**a * np.log(y)
        elif f is Family.LOGNORMAL:
            L = np.log1p(y)
            d = L**a * np.log(L)
        else:
            d = (a * y * np.exp(a * y) - np.expm1(a * y)) / a**2
        return d[None, :]

    def d_log_intensity(self, y):
        """d log lambda(y; theta) / d theta, shape (n_params, len(y))."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        f = self.family
        if f is Family.IDENTITY:
            return np.empty((0, y.size))
        (a,) = self.theta
        if f is Family.PARETO:
            d = -1.0 / (y + a)
        elif f is Family.WEIBULL:
            d = 1.0 / a + np.log(y)
        elif f is Family.LOGNORMAL:
            d = 1.0 / a + np.log(np.log1p(y))
        else:
            d = y
        return d[None, :]

    def to_free(self):
        if not self.theta:
            return np.empty(0)
        return np.array([math.log(self.theta[0] - PARAM_FLOOR[self.family])])

    def from_free(self, free):
        free = np.atleast_1d(free)
        if self.family is Family.IDENTITY:
            return self
        return InhomogeneityTransform(self.family, (PARAM_FLOOR[self.family] + math.exp(float(free[0])),))

    def to_dict(self):
        return {"family": self.family.value, "theta": list(self.theta)}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["family"], tuple(doc.get("theta", ())))


IDENTITY = InhomogeneityTransform()


# --- construction -------------------------------------------------------------------------


def build_structure(kind, p, seed=None, data_scale=1.0):
    """Random law with the exact zero pattern of ``kind`` and PH mean ``data_scale``."""
    kind = StructureKind(kind)
    pi_free, off_ok, exit_ok = structure_masks(kind, p)
    if not data_scale > 0:
        raise DomainError(f"data_scale must be positive, got {data_scale}")
    rng = np.random.default_rng(seed)
    base = p / data_scale

    if kind is StructureKind.ERLANG:
        rate = rng.uniform(0.1, 1.1) * base
        T = -rate * np.eye(p)
        T[np.arange(p - 1), np.arange(1, p)] = rate
    else:
        off = np.where(off_ok, rng.uniform(0.1, 1.1, size=(p, p)) * base, 0.0)
        exit = np.where(exit_ok, rng.uniform(0.1, 1.1, size=p) * base, 0.0)
        T = off - np.diag(off.sum(axis=1) + exit)

    if pi_free.all():
        w = rng.uniform(0.1, 1.1, size=p)
        pi = w / w.sum()
    else:
        pi = np.zeros(p)
        pi[0] = 1.0

    law = PhaseTypeLaw(pi, T, kind)
    # scaling T by c scales the mean by 1/c
    return PhaseTypeLaw(pi, T * ph_mean(law) / data_scale, kind)


# --- evaluation ---------------------------------------------------------------------------


def start_rows(law, z, tol=matexp.DEFAULT_TOL):
    """pi^T exp(T z_i) for every z_i, shape (n, p).

    exp(T z) -> 0 as z -> inf for a sub-intensity T, so rows whose uniformization rate
    ``max(-t_kk) * z`` is not finite (including z = +inf) come back as zeros.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float)).ravel()
    if np.any(np.isnan(z)) or np.any(z < 0):
        raise NumericDomainError("time argument must be nonnegative and not NaN")
    rate = float(np.max(-np.diag(law.T)))
    with np.errstate(over="ignore"):
        finite = np.isfinite(rate * z)
    rows = np.zeros((z.size, law.p))
    if np.any(finite):
        E = matexp.expm_batch(law.T, z[finite], tol)
        rows[finite] = np.einsum("j,njk->nk", law.pi, E)
    return rows


def ph_density(law, z, tol=matexp.DEFAULT_TOL):
    return start_rows(law, z, tol) @ law.exit


def _scaled_density(scale, dens):
    # scale may overflow where the PH density has already vanished
    with np.errstate(invalid="ignore", over="ignore"):
        out = scale * dens
    return np.where(dens > 0, out, 0.0)


def ph_survival(law, z, tol=matexp.DEFAULT_TOL):
    return np.clip(start_rows(law, z, tol).sum(axis=1), 0.0, 1.0)


def _scalar_or_array(template, values):
    return float(values[0]) if np.ndim(template) == 0 else values


def iph_density(law, transform, y, tol=matexp.DEFAULT_TOL):
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ys > 0)):
        raise DomainError("density is defined for y > 0")
    out = _scaled_density(transform.intensity(ys), ph_density(law, transform.g_inv(ys), tol))
    return _scalar_or_array(y, out)


def iph_survival(law, transform, y, tol=matexp.DEFAULT_TOL):
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ys >= 0)):
        raise DomainError("survival is defined for y >= 0")
    return _scalar_or_array(y, ph_survival(law, transform.g_inv(ys), tol))


def _flag_underflow(surv, what):
    low = surv < SURVIVAL_FLOOR
    if np.any(low):
        warnings.warn(
            f"{int(low.sum())} survival value(s) below {SURVIVAL_FLOOR:g} in {what}",
            TailUnderflowWarning,
            stacklevel=3,
        )
    return low


def iph_hazard(law, transform, y, tol=matexp.DEFAULT_TOL):
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ys > 0)):
        raise DomainError("hazard is defined for y > 0")
    rows = start_rows(law, transform.g_inv(ys), tol)
    surv = rows.sum(axis=1)
    low = _flag_underflow(surv, "hazard")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        h = transform.intensity(ys) * (rows @ law.exit) / surv
    h[low] = np.inf
    return _scalar_or_array(y, h)


def iph_cumhazard(law, transform, y, tol=matexp.DEFAULT_TOL):
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ys > 0)):
        raise DomainError("cumulative hazard is defined for y > 0")
    surv = ph_survival(law, transform.g_inv(ys), tol)
    low = _flag_underflow(surv, "cumulative hazard")
    with np.errstate(divide="ignore"):
        H = -np.log(surv)
    H[low] = np.inf
    return _scalar_or_array(y, H)


def ph_mean(law):
    """pi (-T)^{-1} e."""
    try:
        v = np.linalg.solve(-law.T.T, law.pi)
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError(f"-T is singular: {exc}") from None
    return float(v.sum())


def moments(law, k=2):
    """Raw moments E[Z^j] = j! pi (-T)^{-j} e for j = 1..k."""
    out = []
    row = law.pi.copy()
    for j in range(1, k + 1):
        row = np.linalg.solve(-law.T.T, row)
        out.append(math.factorial(j) * float(row.sum()))
    return np.array(out)


def tail_index(law, transform):
    """Tail index -1 / (largest real eigenvalue of T) of a Matrix-Pareto law."""
    if transform.family is not Family.PARETO:
        raise UnsupportedTransformError(f"tail index is defined for the pareto family, not {transform.family.value}")
    top = float(np.max(np.linalg.eigvals(law.T).real))
    return -1.0 / top


def density_modes(law, transform, grid):
    """Grid points at which the density has a strict local maximum."""
    grid = np.asarray(grid, dtype=float)
    f = iph_density(law, transform, grid)
    inner = (f[1:-1] > f[:-2]) & (f[1:-1] > f[2:])
    return grid[1:-1][inner].tolist()


# --- simulation ---------------------------------------------------------------------------


def sample_ph(law, n, seed=None):
    """Absorption times of PH(pi, T) by running the embedded jump chain for n paths at once."""
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    p = law.p
    rates = -np.diag(law.T)
    moves = np.column_stack([law.T - np.diag(np.diag(law.T)), law.exit]) / rates[:, None]
    cum = np.cumsum(moves, axis=1)

    state = rng.choice(p, size=n, p=law.pi / law.pi.sum())
    z = np.zeros(n)
    active = np.arange(n)
    while active.size:
        s = state[active]
        z[active] += rng.exponential(1.0 / rates[s])
        u = rng.random(active.size)
        nxt = np.minimum((u[:, None] > cum[s]).sum(axis=1), p)
        state[active] = nxt
        active = active[nxt < p]
    return z


def sample(law, transform, n, seed=None):
    return transform.g(sample_ph(law, n, seed))
