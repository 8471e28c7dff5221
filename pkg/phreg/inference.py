r"""Scores, Fisher information, Wald inference and goodness of fit.

Inference covers (beta, theta) only; (pi, T) is treated as fixed. For observation i with
``z_i = h(y_i) m_i``, ``h = g^{-1}``, ``m_i = m(x_i^T beta)`` and ``a_i = pi^T e^{T z_i}``:

.. math::

    G_1(i, j) = x_{ij} m'_i \left( \frac{1}{m_i} + h(y_i) \frac{a_i T t}{a_i t} \right), \qquad
    G_2(i) = \frac{\partial_\theta \lambda(y_i)}{\lambda(y_i)}
             + m_i \partial_\theta h(y_i) \frac{a_i T t}{a_i t}.

The outer-product information is ``sum_i G_i G_i^T`` with ``G_i = (G_1(i, .), G_2(i))``.
"""
import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import stats

from phreg import matexp
from phreg.errors import (
    DomainError,
    LikelihoodUnderflowError,
    SingularInformationError,
    TailUnderflowWarning,
    UnsupportedTransformError,
)
from phreg.phase import SURVIVAL_FLOOR, InhomogeneityTransform, start_rows
from phreg.regression import conditional_means, regression_loglik

logger = logging.getLogger(__name__)

OUTER_PRODUCT = "outer-product"
NUMERICAL_HESSIAN = "numerical-hessian"
SOURCES = (OUTER_PRODUCT, NUMERICAL_HESSIAN)
MAX_CONDITION = 1e12
Z_95 = 1.96


def parameter_names(model):
    return [*model.covariates, *(f"theta.{name}" for name in model.transform.param_names)]


def parameters(model):
    return np.concatenate([model.beta, np.asarray(model.transform.theta, dtype=float)])


def with_parameters(model, values):
    values = np.asarray(values, dtype=float)
    transform = InhomogeneityTransform(model.transform.family, tuple(values[model.d :]))
    return model.with_params(transform=transform, beta=values[: model.d])


def score_contributions(model, data, tol=matexp.DEFAULT_TOL):
    """Per-observation gradient rows G_i, shape (N, d + |theta|)."""
    law, transform = model.law, model.transform
    eta = data.X @ model.beta if model.d else np.zeros(data.n)
    try:
        dm = model.link.dinv_link(eta)
    except NotImplementedError:
        raise UnsupportedTransformError(f"link {model.link.name!r} has no derivative") from None
    m = model.link.inv_link(eta)
    h = transform.g_inv(data.y)
    a = start_rows(law, h * m, tol)
    at = a @ law.exit
    bad = np.flatnonzero(~(at > 0))
    if bad.size:
        raise LikelihoodUnderflowError(bad[0], float(at[bad[0]]))
    ratio = (a @ (law.T @ law.exit)) / at

    G1 = data.X * (dm * (1.0 / m + h * ratio))[:, None]
    G2 = (transform.d_log_intensity(data.y) + m * transform.d_g_inv(data.y) * ratio).T
    return np.hstack([G1, G2])


def score(model, data, tol=matexp.DEFAULT_TOL):
    return score_contributions(model, data, tol).sum(axis=0)


def fisher_information(model, data, source=OUTER_PRODUCT, tol=matexp.DEFAULT_TOL):
    if source == OUTER_PRODUCT:
        G = score_contributions(model, data, tol)
        return G.T @ G
    if source == NUMERICAL_HESSIAN:
        return -numerical_hessian(model, data, tol)
    raise DomainError(f"unknown information source {source!r}; choose from {SOURCES}")


def numerical_hessian(model, data, tol=matexp.DEFAULT_TOL):
    """Central second differences of regression_loglik over (beta, theta).

    Uses only likelihood values, never the analytic score. Step 1e-4 (1 + |param|) per
    coordinate; the kernel tolerance is tightened to at most 1e-14 so truncation noise
    stays below the differencing error.
    """
    x0 = parameters(model)
    k = x0.size
    ktol = min(tol, 1e-14)
    E = np.diag(1e-4 * (1.0 + np.abs(x0)))
    h = np.diag(E)

    def f(shift):
        return regression_loglik(with_parameters(model, x0 + shift), data, ktol)

    f0 = f(np.zeros(k))
    H = np.empty((k, k))
    for j in range(k):
        H[j, j] = (f(E[j]) - 2.0 * f0 + f(-E[j])) / h[j] ** 2
        for i in range(j):
            cross = f(E[i] + E[j]) - f(E[i] - E[j]) - f(E[j] - E[i]) + f(-E[i] - E[j])
            H[i, j] = H[j, i] = cross / (4.0 * h[i] * h[j])
    return H


def covariance(information, source=OUTER_PRODUCT):
    information = np.atleast_2d(information)
    if information.size == 0:
        return information.copy()
    cond = np.linalg.cond(information)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        other = NUMERICAL_HESSIAN if source == OUTER_PRODUCT else OUTER_PRODUCT
        raise SingularInformationError(float(cond), source, other)
    return np.linalg.inv(information)


def aic_bic(loglik, df, n):
    if df < 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {df}")
    if n < 1:
        raise DomainError(f"sample size must be >= 1, got {n}")
    return -2.0 * loglik + 2.0 * df, -2.0 * loglik + df * math.log(n)


@dataclass
class InferenceReport:
    names: list
    estimates: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    p_values: np.ndarray
    source: str
    loglik: float
    df: int
    aic: float
    bic: float
    n_obs: int

    def to_frame(self):
        return pd.DataFrame(
            {
                "term": self.names,
                "estimate": self.estimates,
                "se": self.se,
                "ci_lower": self.lower,
                "ci_upper": self.upper,
                "p_value": self.p_values,
            }
        )

    def to_dict(self):
        doc = asdict(self)
        for key in ("estimates", "se", "lower", "upper", "p_values"):
            doc[key] = np.asarray(doc[key], dtype=float).tolist()
        return doc


def wald_report(model, data, source=OUTER_PRODUCT, tol=matexp.DEFAULT_TOL, converged=True):
    if not converged:
        logger.warning("Wald inference on a model that did not converge; standard errors may be off")
    est = parameters(model)
    cov = covariance(fisher_information(model, data, source, tol), source)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(se > 0, est / se, np.where(est == 0, 0.0, np.inf))
    p_values = 2.0 * stats.norm.sf(np.abs(stat))
    loglik = regression_loglik(model, data, tol)
    aic, bic = aic_bic(loglik, model.df, data.n)
    return InferenceReport(
        names=parameter_names(model),
        estimates=est,
        se=se,
        lower=est - Z_95 * se,
        upper=est + Z_95 * se,
        p_values=p_values,
        source=source,
        loglik=loglik,
        df=model.df,
        aic=aic,
        bic=bic,
        n_obs=data.n,
    )


# --- goodness of fit ----------------------------------------------------------------------


def pit_residuals(model, data, tol=matexp.DEFAULT_TOL):
    """Conditional survival S(y_i | x_i), clamped to [1e-300, 1]."""
    z = model.transform.g_inv(data.y) * model.multiplier(data.X)
    surv = start_rows(model.law, z, tol).sum(axis=1)
    low = surv < SURVIVAL_FLOOR
    if np.any(low):
        warnings.warn(
            f"{int(low.sum())} PIT residual(s) below {SURVIVAL_FLOOR:g} were clamped",
            TailUnderflowWarning,
            stacklevel=2,
        )
    return np.clip(surv, SURVIVAL_FLOOR, 1.0)


def _check_unit(u):
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0:
        raise DomainError("no residuals")
    if np.any(~((u >= 0) & (u <= 1))):
        raise DomainError("residuals must lie in [0, 1]")
    return u


def ks_statistic(u):
    """Sup distance between the empirical CDF of u and the uniform CDF."""
    return float(stats.kstest(_check_unit(u), "uniform").statistic)


def ks_critical_value(n, level=0.05):
    """Asymptotic critical value of the one-sample KS statistic."""
    return float(stats.kstwobign.isf(level) / math.sqrt(n))


def pp_table(u):
    u = np.sort(_check_unit(u))
    n = u.size
    return pd.DataFrame({"ordered_pit": u, "uniform_quantile": np.arange(1, n + 1) / (n + 1)})


# --- predictive diagnostics ---------------------------------------------------------------


def loss_ratio(model, data):
    """Sum of predicted conditional means over the sum of observed responses."""
    means = conditional_means(model, data.X)
    if not np.all(np.isfinite(means)):
        logger.warning("loss ratio undefined: %d row(s) have an infinite conditional mean", int((~np.isfinite(means)).sum()))
        return None
    return float(means.sum() / data.y.sum())


def holdout_split(data, fraction):
    """(held-out first rows, remaining rows)."""
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"holdout fraction must lie in (0, 1), got {fraction}")
    k = int(round(fraction * data.n))
    if k < 1 or k >= data.n:
        raise DomainError(f"holdout fraction {fraction} leaves an empty split for N={data.n}")
    return data.subset(slice(0, k)), data.subset(slice(k, None))


def holdout_mse(model, data, fraction=None):
    """Mean squared error of conditional means; on the first ``fraction`` of rows if given."""
    test = data if fraction is None else holdout_split(data, fraction)[0]
    means = conditional_means(model, test.X)
    if not np.all(np.isfinite(means)):
        logger.warning("holdout MSE undefined: infinite conditional mean on the held-out rows")
        return None
    return float(np.mean((means - test.y) ** 2))
