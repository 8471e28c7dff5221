r"""Phase-type regression.

Given covariates x (no intercept column, the intercept lives in T) the conditional law of
Y | x is IPH(pi, T, m(x^T beta) lambda(.; theta)), with density

.. math:: f(y|x) = m(x^T\beta)\lambda(y;\theta)\,\pi^T e^{m(x^T\beta) g^{-1}(y;\theta) T} t.

Since ``z = g^{-1}(y; theta) m(x^T beta)`` is PH(pi, T) distributed, fitting alternates an EM
step for (pi, T) on the transformed data with a derivative-free maximization over
(theta, beta) holding (pi, T) fixed.
"""
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import integrate, optimize
from scipy.special import expit, gamma as gamma_fn

from phreg import emfit, matexp
from phreg.errors import (
    DataError,
    DefectiveMatrixWarning,
    DomainError,
    InfiniteMeanError,
    NumericDomainError,
    PhRegError,
    UnsupportedTransformError,
)
from phreg.phase import (
    Family,
    InhomogeneityTransform,
    PhaseTypeLaw,
    StructureKind,
    build_structure,
    parameter_count,
    ph_density,
    ph_mean,
    ph_survival,
    sample_ph,
    tail_index,
)

logger = logging.getLogger(__name__)


# --- links --------------------------------------------------------------------------------


class Link:
    name = None

    def inv_link(self, eta):
        raise NotImplementedError

    def dinv_link(self, eta):
        raise NotImplementedError


class ExpLink(Link):
    name = "exp"

    def inv_link(self, eta):
        return np.exp(eta)

    def dinv_link(self, eta):
        return np.exp(eta)


class SoftplusLink(Link):
    name = "softplus"

    def inv_link(self, eta):
        return np.logaddexp(0.0, eta)

    def dinv_link(self, eta):
        return expit(eta)


LINKS = {link.name: link for link in (ExpLink(), SoftplusLink())}


def get_link(name):
    try:
        return LINKS[name]
    except KeyError:
        raise DomainError(f"unknown link {name!r}; choose from {sorted(LINKS)}") from None


# --- data and model -----------------------------------------------------------------------


def numeric_columns(df, columns):
    """Float arrays per column; DataError names the first missing or non-numeric cell."""
    cols = {}
    for col in columns:
        values = pd.to_numeric(df[col], errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            raise DataError(f"column {col!r} has a missing or non-numeric value in row {int(bad[0])}", column=col, row=int(bad[0]))
        cols[col] = values.to_numpy(dtype=float)
    return cols


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    X: np.ndarray = None
    columns: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size == 0:
            raise DataError("dataset has no observations")
        X = np.empty((y.size, 0)) if self.X is None else np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.size:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.size}")
        columns = tuple(self.columns) or tuple(f"X{j + 1}" for j in range(X.shape[1]))
        if len(columns) != X.shape[1]:
            raise DataError(f"{len(columns)} column names for {X.shape[1]} covariates")
        bad = np.flatnonzero(~np.isfinite(y) | ~(y > 0))
        if bad.size:
            raise DataError(f"response must be positive and finite; row {int(bad[0])} has {y[bad[0]]!r}", row=int(bad[0]))
        bad_rows, bad_cols = np.nonzero(~np.isfinite(X))
        if bad_rows.size:
            raise DataError(
                f"covariate {columns[bad_cols[0]]!r} is not finite in row {int(bad_rows[0])}",
                column=columns[bad_cols[0]],
                row=int(bad_rows[0]),
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "columns", columns)

    @property
    def n(self):
        return self.y.size

    @property
    def d(self):
        return self.X.shape[1]

    def subset(self, rows):
        return Dataset(self.y[rows], self.X[rows], self.columns)

    def select(self, columns):
        idx = [self.columns.index(c) for c in columns]
        return Dataset(self.y, self.X[:, idx], tuple(columns))

    @classmethod
    def from_frame(cls, df, response, covariates=()):
        covariates = tuple(covariates or ())
        for col in (response, *covariates):
            if col not in df.columns:
                raise DataError(f"column {col!r} not found; available: {list(df.columns)}", column=col)
        cols = numeric_columns(df, (response, *covariates))
        y = cols[response]
        bad = np.flatnonzero(~(y > 0))
        if bad.size:
            raise DataError(f"response {response!r} must be positive; row {int(bad[0])} has {y[bad[0]]!r}", column=response, row=int(bad[0]))
        X = np.column_stack([cols[c] for c in covariates]) if covariates else None
        return cls(y, X, covariates)


@dataclass(frozen=True, eq=False)
class RegressionModel:
    law: PhaseTypeLaw
    transform: InhomogeneityTransform = field(default_factory=InhomogeneityTransform)
    beta: np.ndarray = None
    link: Link = field(default_factory=ExpLink)
    covariates: tuple = ()

    def __post_init__(self):
        beta = np.zeros(len(self.covariates)) if self.beta is None else np.asarray(self.beta, dtype=float).ravel()
        covariates = tuple(self.covariates) or tuple(f"X{j + 1}" for j in range(beta.size))
        if len(covariates) != beta.size:
            raise DataError(f"{beta.size} coefficients for {len(covariates)} covariates")
        link = get_link(self.link) if isinstance(self.link, str) else self.link
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "link", link)

    @property
    def d(self):
        return self.beta.size

    @property
    def df(self):
        """Free parameters: structural (pi, T) rates, theta and beta."""
        return parameter_count(self.law.structure, self.law.p) + self.transform.n_params + self.d

    def multiplier(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.d == 0:
            return np.ones(X.shape[0])
        if X.shape[1] != self.d:
            raise DataError(f"model has {self.d} covariates but the data has {X.shape[1]}")
        with np.errstate(over="ignore"):
            return self.link.inv_link(X @ self.beta)

    def with_params(self, transform=None, beta=None, law=None):
        return replace(
            self,
            law=self.law if law is None else law,
            transform=self.transform if transform is None else transform,
            beta=self.beta if beta is None else beta,
        )

    def to_dict(self):
        return {
            "law": self.law.to_dict(),
            "transform": self.transform.to_dict(),
            "beta": self.beta.tolist(),
            "covariates": list(self.covariates),
            "link": self.link.name,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            law=PhaseTypeLaw.from_dict(doc["law"]),
            transform=InhomogeneityTransform.from_dict(doc["transform"]),
            beta=doc.get("beta", []),
            link=doc.get("link", "exp"),
            covariates=tuple(doc.get("covariates", ())),
        )


def _row(model, x):
    x = np.zeros(model.d) if x is None else np.asarray(x, dtype=float).ravel()
    return float(model.multiplier(x[None, :])[0])


def _scaled_time(m, z):
    with np.errstate(over="ignore"):
        return m * z


# --- likelihood ---------------------------------------------------------------------------


def transform_data(model, data):
    """z_i = g^{-1}(y_i; theta) m(x_i^T beta)."""
    mult = model.multiplier(data.X)
    with np.errstate(over="ignore", invalid="ignore"):
        z = model.transform.g_inv(data.y) * mult
    bad = np.flatnonzero(~np.isfinite(z) | ~(z > 0))
    if bad.size:
        raise NumericDomainError(
            f"{bad.size} observation(s) overflow the transform, first is row {int(bad[0])} (z={z[bad[0]]!r})"
        )
    return z


def regression_loglik(model, data, tol=matexp.DEFAULT_TOL, threads=1):
    z = transform_data(model, data)
    mult = model.multiplier(data.X)
    jacobian = np.log(mult).sum() + np.log(model.transform.intensity(data.y)).sum()
    return float(jacobian + emfit.ph_loglik(model.law, z, tol=tol, threads=threads))


def conditional_survival(model, x, y, tol=matexp.DEFAULT_TOL):
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ys >= 0)):
        raise DomainError("survival is defined for y >= 0")
    out = ph_survival(model.law, _scaled_time(_row(model, x), model.transform.g_inv(ys)), tol)
    return float(out[0]) if np.ndim(y) == 0 else out


def conditional_density(model, x, y, tol=matexp.DEFAULT_TOL):
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(~(ys > 0)):
        raise DomainError("density is defined for y > 0")
    m = _row(model, x)
    dens = ph_density(model.law, _scaled_time(m, model.transform.g_inv(ys)), tol)
    with np.errstate(over="ignore", invalid="ignore"):
        out = m * model.transform.intensity(ys) * dens
    out = np.where(dens > 0, out, 0.0)
    return float(out[0]) if np.ndim(y) == 0 else out


# --- fitting ------------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    structure: StructureKind = StructureKind.COXIAN
    phases: int = 3
    family: Family = Family.PARETO
    seed: int = 1
    tol: float = 1e-8
    max_iter: int = 5000
    link: str = "exp"
    kernel_tol: float = matexp.DEFAULT_TOL
    inner_max_evals: int = 200
    threads: int = 1

    @classmethod
    def from_settings(cls, settings, **kwargs):
        base = dict(
            tol=settings.em_tol,
            max_iter=settings.max_iter,
            kernel_tol=settings.effective_kernel_tol(kwargs.get("tol")),
            inner_max_evals=settings.inner_max_evals,
            threads=settings.threads,
        )
        base.update(kwargs)
        return cls(**base)


@dataclass
class FitReport:
    n_obs: int
    iterations: int = 0
    loglik: float = float("nan")
    loglik_trace: list = field(default_factory=list)
    df: int = 0
    aic: float = float("nan")
    bic: float = float("nan")
    converged: bool = False
    seed: int = None
    inner_fallbacks: int = 0
    inner_evaluations: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class InnerResult:
    model: RegressionModel
    loglik: float
    start_loglik: float
    evaluations: int
    fallback: bool
    step: np.ndarray = None


def initial_theta(family, y):
    family = Family(family)
    med = float(np.median(y))
    return {
        Family.IDENTITY: (),
        Family.PARETO: (med,),
        Family.WEIBULL: (1.0,),
        Family.LOGNORMAL: (2.0,),
        Family.GOMPERTZ: (1.0 / med,),
    }[family]


INITIAL_STEP = 0.1
MIN_STEP = 1e-5
MAX_STEP = 0.5


def inner_maximize(model, data, max_evals=200, tol=matexp.DEFAULT_TOL, threads=1, step=INITIAL_STEP, fatol=1e-11):
    """Nelder-Mead over (beta, log-scaled theta) with (pi, T) fixed; never descends.

    The starting simplex has edge ``step`` along each coordinate (scalar or one per
    coordinate). ``InnerResult.step`` suggests the edges for the next call.
    """
    family = model.transform.family
    d = model.d
    start = np.concatenate([model.beta, model.transform.to_free()])

    def unpack(free):
        return model.with_params(transform=model.transform.from_free(free[d:]), beta=free[:d])

    def objective(free):
        try:
            value = regression_loglik(unpack(free), data, tol, threads)
        except (PhRegError, FloatingPointError, OverflowError):
            return np.inf
        return -value if np.isfinite(value) else np.inf

    f0 = objective(start)
    if start.size == 0:
        return InnerResult(model, -f0, -f0, 1, False)
    edges = np.broadcast_to(np.asarray(step, dtype=float), start.shape)
    simplex = np.vstack([start, start + np.diag(edges)])
    try:
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-7, "fatol": fatol, "initial_simplex": simplex},
        )
    except (PhRegError, ValueError, FloatingPointError) as exc:
        logger.warning("inner maximization over %s failed (%s); keeping previous parameters", family.value, exc)
        return InnerResult(model, -f0, -f0, max_evals, True)
    if not np.isfinite(res.fun):
        logger.warning("inner maximization produced no finite likelihood; keeping previous parameters")
        return InnerResult(model, -f0, -f0, int(res.nfev), True)
    if res.fun < f0:
        moved = np.clip(2.0 * np.abs(res.x - start), MIN_STEP, MAX_STEP)
        return InnerResult(unpack(res.x), -float(res.fun), -f0, int(res.nfev), False, moved)
    return InnerResult(model, -f0, -f0, int(res.nfev), False, np.maximum(edges / 2.0, MIN_STEP))


def fit(data, config=None, start=None):
    """Generalized EM for phase-type regression; returns (model, FitReport)."""
    config = config or FitConfig()
    structure = StructureKind(config.structure)
    family = Family(config.family)
    ktol = config.kernel_tol
    report = FitReport(n_obs=data.n, seed=config.seed)

    if start is None:
        transform = InhomogeneityTransform(family, initial_theta(family, data.y))
        scale = float(np.mean(transform.g_inv(data.y)))
        law = build_structure(structure, config.phases, config.seed, scale)
        model = RegressionModel(law, transform, np.zeros(data.d), config.link, data.columns)
    else:
        model = start

    loglik = regression_loglik(model, data, ktol, config.threads)
    report.loglik_trace.append(loglik)
    step = INITIAL_STEP
    for it in range(1, config.max_iter + 1):
        z = transform_data(model, data)
        stats = emfit.e_step(model.law, z, tol=ktol, threads=config.threads)
        model = model.with_params(law=emfit.m_step(stats, structure))
        # the simplex only needs to resolve a fraction of the outer stopping gain
        fatol = max(1e-11, 0.1 * config.tol * abs(loglik))
        inner = inner_maximize(model, data, config.inner_max_evals, ktol, config.threads, step, fatol)
        model = inner.model
        if inner.step is not None:
            step = inner.step
        report.inner_fallbacks += int(inner.fallback)
        report.inner_evaluations += inner.evaluations
        report.loglik_trace.append(inner.loglik)
        report.iterations = it
        gain = inner.loglik - loglik
        logger.debug("iteration %d: loglik=%.10g gain=%.3g evals=%d", it, inner.loglik, gain, inner.evaluations)
        if abs(gain) < config.tol * abs(loglik):
            report.converged = True
            loglik = inner.loglik
            break
        loglik = inner.loglik

    report.loglik = loglik
    report.df = model.df
    report.aic = -2.0 * loglik + 2.0 * report.df
    report.bic = -2.0 * loglik + report.df * math.log(data.n)
    if report.converged:
        logger.info("converged after %d iterations, loglik=%.4f", report.iterations, loglik)
    else:
        logger.warning("no convergence within %d iterations, loglik=%.4f", config.max_iter, loglik)
    return model, report


# --- prediction ---------------------------------------------------------------------------


def _check_finite_mean(model, m):
    if model.transform.family is Family.PARETO:
        xi = tail_index(model.law, model.transform) / m
        if xi >= 1.0:
            raise InfiniteMeanError(f"conditional tail index {xi:.4g} >= 1, the mean is infinite")


def conditional_mean(model, x=None, quad_tol=1e-10, tol=matexp.DEFAULT_TOL):
    """Integral of the conditional survival over (0, inf)."""
    m = _row(model, x)
    _check_finite_mean(model, m)
    if model.transform.family is Family.IDENTITY:
        return ph_mean(model.law) / m

    def integrand(u):
        if u > 700.0:
            return 0.0
        y = math.exp(u)
        return float(ph_survival(model.law, _scaled_time(m, model.transform.g_inv(np.array([y]))), tol)[0]) * y

    cuts = sorted({math.log(predict_quantile(model, x, q, tol=tol)) for q in (0.1, 0.5, 0.9, 0.99)})
    bounds = [-np.inf, *cuts, np.inf]
    total = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=quad_tol, limit=200)
        total += val
    return total


def weibull_mean(model, x=None, tol=matexp.DEFAULT_TOL):
    """Gamma(1 + 1/theta) pi^T (-T)^{-1/theta} e / m(x^T beta)^{1/theta}."""
    if model.transform.family is not Family.WEIBULL:
        raise UnsupportedTransformError(f"closed-form mean needs the weibull family, not {model.transform.family.value}")
    (theta,) = model.transform.theta
    m = _row(model, x)
    w, V = np.linalg.eig(-model.law.T)
    if np.linalg.cond(V) > 1e8:
        warnings.warn("-T is (nearly) defective; using quadrature for the mean", DefectiveMatrixWarning, stacklevel=2)
        return conditional_mean(model, x, tol=tol)
    power = V @ np.diag(w ** (-1.0 / theta)) @ np.linalg.inv(V)
    value = (model.law.pi @ power @ np.ones(model.law.p)).real
    return float(gamma_fn(1.0 + 1.0 / theta) * value / m ** (1.0 / theta))


def predict_quantile(model, x=None, q=0.5, tol=matexp.DEFAULT_TOL):
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    m = _row(model, x)
    target = 1.0 - q

    def gap(y):
        return float(ph_survival(model.law, _scaled_time(m, model.transform.g_inv(np.array([y]))), tol)[0]) - target

    hi = 1.0
    while gap(hi) > 0.0:
        hi *= 2.0
    lo = hi / 2.0
    while lo > 1e-300 and gap(lo) <= 0.0:
        lo /= 2.0
    if gap(hi) == 0.0:
        return hi
    return float(optimize.bisect(gap, lo, hi, xtol=1e-300, rtol=1e-10, maxiter=500))


def simulate(model, X=None, n=None, seed=None):
    """Y_i = g(Z_i / m(x_i^T beta)) with Z_i ~ PH(pi, T)."""
    if X is None:
        X = np.zeros((n or 1, model.d))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = sample_ph(model.law, X.shape[0], seed)
    return model.transform.g(z / model.multiplier(X))


def conditional_means(model, X=None, n=None):
    """Conditional mean per row, inf where the mean does not exist; one evaluation per distinct row."""
    if X is None:
        X = np.zeros((n or 1, model.d))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] == 0:
        rows, inverse = np.zeros((1, 0)), np.zeros(X.shape[0], dtype=int)
    else:
        rows, inverse = np.unique(X, axis=0, return_inverse=True)
    means = np.empty(rows.shape[0])
    for k, x in enumerate(rows):
        try:
            if model.transform.family is Family.WEIBULL:
                means[k] = weibull_mean(model, x)
            else:
                means[k] = conditional_mean(model, x)
        except InfiniteMeanError:
            means[k] = np.inf
    return means[inverse.ravel()]
