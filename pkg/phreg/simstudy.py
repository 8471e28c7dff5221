"""Synthetic heterogeneous claims data and the GLM vs phase-type regression comparison.

Covariates come from a bivariate Gaussian copula (uniform marginals). Each response is drawn
from one of three components with log-link means exp(X1), exp(3 + X1) and exp(X1 - 1); the
third component is exponentiated, which gives the mixture a Pareto-type tail.
"""
import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

from phreg.errors import DataError, DomainError, PhRegError
from phreg.inference import OUTER_PRODUCT, aic_bic, wald_report
from phreg.phase import Family, StructureKind
from phreg.regression import Dataset, FitConfig, fit
from phreg.settings import CFG, read_json

logger = logging.getLogger(__name__)

COVARIATES = ("X1", "X2")


@dataclass(frozen=True)
class SynthConfig:
    n: int = 1000
    rho: float = 0.7
    probs: tuple = (0.4, 0.4, 0.2)
    dispersion: float = 1.0
    seed: int = 1

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) != 3 or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise DomainError(f"component probabilities must be 3 nonnegative numbers summing to 1, got {probs}")
        if not -1.0 < self.rho < 1.0:
            raise DomainError(f"copula correlation must lie in (-1, 1), got {self.rho}")
        if self.n < 1:
            raise DomainError(f"sample size must be >= 1, got {self.n}")
        if not self.dispersion > 0:
            raise DomainError(f"dispersion must be positive, got {self.dispersion}")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_json(cls, path=None, **overrides):
        raw = read_json(Path(path) if path else CFG / "synth.json", {})
        known = {f.name for f in fields(cls)}
        data = {k: v for k, v in raw.items() if k in known} if isinstance(raw, dict) else {}
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def component_means(X1):
    return np.exp(X1), np.exp(3.0 + X1), np.exp(X1 - 1.0)


def generate(config=None):
    """(Dataset with columns X1, X2; component labels 1..3 kept apart from the Dataset)."""
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    n, rho, phi = config.n, config.rho, config.dispersion

    z1 = rng.standard_normal(n)
    z2 = rho * z1 + math.sqrt(1.0 - rho**2) * rng.standard_normal(n)
    X = stats.norm.cdf(np.column_stack([z1, z2]))

    labels = rng.choice(3, size=n, p=config.probs)
    mu = np.choose(labels, component_means(X[:, 0]))
    # Gamma with mean mu and dispersion phi: shape 1/phi, scale mu*phi
    y = rng.gamma(shape=1.0 / phi, scale=mu * phi)
    heavy = labels == 2
    y[heavy] = np.exp(y[heavy])
    return Dataset(y, X, COVARIATES), labels + 1


def to_frame(data, labels=None):
    df = pd.DataFrame(data.X, columns=list(data.columns))
    df.insert(0, "y", data.y)
    if labels is not None:
        df["component"] = labels
    return df


# --- gamma GLM reference fit --------------------------------------------------------------


@dataclass
class GammaGlmResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    p_values: np.ndarray
    dispersion: float
    shape: float
    loglik: float
    df: int
    aic: float
    bic: float
    iterations: int
    converged: bool


def _gamma_deviance(y, mu):
    return 2.0 * float(np.sum((y - mu) / mu - np.log(y / mu)))


def _ml_shape(y, mu):
    # log(nu) - digamma(nu) = mean deviance / 2
    target = _gamma_deviance(y, mu) / (2.0 * y.size)
    if not target > 0:
        raise DomainError("gamma shape is unbounded: the fit is exact")

    def eq(nu):
        return math.log(nu) - special.digamma(nu) - target

    lo, hi = 1e-8, 1.0
    while eq(hi) > 0:
        hi *= 10.0
    return float(optimize.brentq(eq, lo, hi, xtol=1e-14, rtol=1e-12))


def gamma_loglik(y, mu, shape):
    nu = shape
    return float(np.sum(nu * np.log(nu * y / mu) - nu * y / mu - np.log(y) - special.gammaln(nu)))


def fit_gamma_glm(data, max_iter=100, tol=1e-10):
    """Gamma GLM with log link and intercept by IRLS; Pearson-dispersion standard errors."""
    y = data.y
    X = np.column_stack([np.ones(data.n), data.X])
    names = ["(Intercept)", *data.columns]
    if data.n <= X.shape[1]:
        raise DataError(f"need more than {X.shape[1]} observations for {X.shape[1]} coefficients")

    mu = y.copy()
    eta = np.log(mu)
    dev = _gamma_deviance(y, mu)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        # log link with V(mu) = mu^2: unit IRLS weights, working response eta + (y - mu) / mu
        working = eta + (y - mu) / mu
        coef, *_ = np.linalg.lstsq(X, working, rcond=None)
        eta = X @ coef
        mu = np.exp(eta)
        new_dev = _gamma_deviance(y, mu)
        if abs(new_dev - dev) <= tol * (abs(new_dev) + tol):
            converged = True
            dev = new_dev
            break
        dev = new_dev
    if not converged:
        logger.warning("gamma GLM IRLS did not converge in %d iterations", max_iter)

    dispersion = float(np.sum(((y - mu) / mu) ** 2) / (data.n - X.shape[1]))
    cov = dispersion * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    p_values = 2.0 * stats.norm.sf(np.abs(coef / se))
    shape = _ml_shape(y, mu)
    loglik = gamma_loglik(y, mu, shape)
    df = X.shape[1] + 1
    aic, bic = aic_bic(loglik, df, data.n)
    return GammaGlmResult(names, coef, se, p_values, dispersion, shape, loglik, df, aic, bic, iteration, converged)


# --- comparison harness -------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str  # "glm" or "phreg"
    covariates: tuple = COVARIATES
    structure: StructureKind = StructureKind.COXIAN
    phases: int = 3
    family: Family = Family.PARETO


DEFAULT_SPECS = (
    ModelSpec("Gamma GLM (X1)", "glm", ("X1",)),
    ModelSpec("Gamma GLM (X1, X2)", "glm", ("X1", "X2")),
    ModelSpec("M-Pareto(3) (X1)", "phreg", ("X1",)),
    ModelSpec("M-Pareto(3) (X1, X2)", "phreg", ("X1", "X2")),
)


def _terms(names, est, se, p):
    row = {}
    for name, e, s, pv in zip(names, est, se, p):
        row[f"{name}_estimate"] = float(e)
        row[f"{name}_se"] = float(s)
        row[f"{name}_p"] = float(pv)
    return row


def fit_spec(spec, data, fit_config=None):
    sub = data.select(spec.covariates)
    if spec.kind == "glm":
        res = fit_gamma_glm(sub)
        row = dict(loglik=res.loglik, df=res.df, aic=res.aic, bic=res.bic, converged=res.converged)
        row.update(_terms(res.names, res.coef, res.se, res.p_values))
        row["shape"] = res.shape
        return row
    if spec.kind == "phreg":
        cfg = fit_config or FitConfig()
        cfg = replace(cfg, structure=spec.structure, phases=spec.phases, family=spec.family)
        model, report = fit(sub, cfg)
        rep = wald_report(model, sub, OUTER_PRODUCT, cfg.kernel_tol, converged=report.converged)
        row = dict(loglik=report.loglik, df=report.df, aic=report.aic, bic=report.bic, converged=report.converged)
        row.update(iterations=report.iterations, inner_evaluations=report.inner_evaluations)
        row.update(_terms(rep.names, rep.estimates, rep.se, rep.p_values))
        return row
    raise DomainError(f"unknown model kind {spec.kind!r}")


def run_study(config=None, specs=DEFAULT_SPECS, fit_config=None):
    """One row per model spec; a failed fit is recorded in its row."""
    config = config or SynthConfig()
    data, _ = generate(config)
    rows = []
    for spec in specs:
        row = {"seed": config.seed, "model": spec.name, "n_obs": data.n}
        try:
            row.update(fit_spec(spec, data, fit_config))
            row["status"] = "ok"
        except (PhRegError, np.linalg.LinAlgError) as exc:
            logger.error("%s failed on seed %s: %s", spec.name, config.seed, exc)
            row["status"] = f"failed: {exc}"
        rows.append(row)
        logger.info("%s: %s", spec.name, row.get("loglik", row["status"]))
    return pd.DataFrame(rows)


def run_seeds(config, seeds, specs=DEFAULT_SPECS, fit_config=None):
    frames = []
    for seed in seeds:
        cfg = replace(config, seed=int(seed))
        fc = None if fit_config is None else replace(fit_config, seed=int(seed))
        frames.append(run_study(cfg, specs, fc))
    return pd.concat(frames, ignore_index=True)
