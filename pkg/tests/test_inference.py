import math

import numpy as np
import pytest

from phreg import inference, regression
from phreg.errors import DomainError, SingularInformationError, TailUnderflowWarning
from phreg.phase import IDENTITY, Family, InhomogeneityTransform, PhaseTypeLaw, StructureKind, build_structure
from phreg.regression import Dataset, RegressionModel


def exp_glm(rate=1.0, beta=0.0):
    law = PhaseTypeLaw([1.0], [[-rate]], StructureKind.EXPONENTIAL)
    return RegressionModel(law, IDENTITY, [beta], "exp", ("X1",))


def glm_data(seed, n=400, beta=0.6):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 1))
    y = rng.exponential(np.exp(-beta * X[:, 0]))
    return Dataset(y, X, ("X1",))


def test_score_matches_exponential_glm_by_hand():
    data = glm_data(1, n=100)
    model = exp_glm(beta=0.25)
    x = data.X[:, 0]
    expected = np.sum(x * (1.0 - np.exp(0.25 * x) * data.y))
    assert inference.score(model, data)[0] == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize(
    "family,theta,link,seed",
    [
        (Family.PARETO, 1.7, "exp", 11),
        (Family.WEIBULL, 0.8, "exp", 12),
        (Family.LOGNORMAL, 1.6, "softplus", 13),
        (Family.GOMPERTZ, 0.4, "exp", 14),
    ],
)
def test_score_matches_finite_differences(family, theta, link, seed):
    rng = np.random.default_rng(seed)
    law = build_structure(StructureKind.COXIAN, 3, seed=int(rng.integers(100)), data_scale=1.0)
    model = RegressionModel(law, InhomogeneityTransform(family, (theta,)), rng.normal(scale=0.5, size=2), link, ("a", "b"))
    data = Dataset(rng.uniform(0.05, 3.0, 150), rng.normal(size=(150, 2)), ("a", "b"))
    tol = 1e-15

    x0 = inference.parameters(model)
    fd = np.empty_like(x0)
    for j in range(x0.size):
        h = 1e-5 * (1.0 + abs(x0[j]))
        up, down = x0.copy(), x0.copy()
        up[j] += h
        down[j] -= h
        fd[j] = (
            regression.regression_loglik(inference.with_parameters(model, up), data, tol)
            - regression.regression_loglik(inference.with_parameters(model, down), data, tol)
        ) / (2 * h)
    np.testing.assert_allclose(inference.score(model, data, tol), fd, rtol=1e-5, atol=1e-5)


def test_information_matrices_are_symmetric_psd():
    data = glm_data(2)
    model = exp_glm(rate=1.2, beta=0.4)
    for source in inference.SOURCES:
        info = inference.fisher_information(model, data, source)
        np.testing.assert_allclose(info, info.T, atol=1e-10)
        assert np.min(np.linalg.eigvalsh(info)) >= -1e-8


def test_numerical_hessian_matches_exponential_glm():
    data = glm_data(3)
    model = exp_glm(rate=1.2, beta=0.4)
    x = data.X[:, 0]
    exact = np.sum(1.2 * np.exp(0.4 * x) * data.y * x * x)
    info = inference.fisher_information(model, data, inference.NUMERICAL_HESSIAN)
    assert info[0, 0] == pytest.approx(exact, rel=1e-6)


def test_numerical_hessian_agrees_with_score_differences():
    rng = np.random.default_rng(9)
    law = build_structure(StructureKind.COXIAN, 2, seed=2, data_scale=1.0)
    model = RegressionModel(law, InhomogeneityTransform(Family.PARETO, (1.5,)), [0.3, -0.2], "exp", ("a", "b"))
    data = Dataset(rng.pareto(2.0, 300) + 0.05, rng.normal(size=(300, 2)), ("a", "b"))
    H = inference.numerical_hessian(model, data)
    np.testing.assert_array_equal(H, H.T)

    x0 = inference.parameters(model)
    by_score = np.empty_like(H)
    for j in range(x0.size):
        h = 1e-5 * (1.0 + abs(x0[j]))
        up, down = x0.copy(), x0.copy()
        up[j] += h
        down[j] -= h
        by_score[:, j] = (
            inference.score(inference.with_parameters(model, up), data, 1e-15)
            - inference.score(inference.with_parameters(model, down), data, 1e-15)
        ) / (2 * h)
    np.testing.assert_allclose(H, by_score, rtol=1e-4, atol=1e-3 * np.abs(H).max())


@pytest.mark.slow
def test_outer_product_and_hessian_standard_errors_agree():
    rng = np.random.default_rng(21)
    law = PhaseTypeLaw([1.0], [[-1.3]], StructureKind.EXPONENTIAL)
    true = RegressionModel(law, InhomogeneityTransform(Family.WEIBULL, (1.4,)), [0.7], "exp", ("X1",))
    X = rng.uniform(-1, 1, size=(5000, 1))
    data = Dataset(regression.simulate(true, X, seed=22), X, ("X1",))
    config = regression.FitConfig(
        structure=StructureKind.EXPONENTIAL, phases=1, family=Family.WEIBULL, tol=1e-10, max_iter=500
    )
    model, report = regression.fit(data, config)
    assert report.converged
    op = inference.wald_report(model, data, inference.OUTER_PRODUCT)
    hess = inference.wald_report(model, data, inference.NUMERICAL_HESSIAN)
    np.testing.assert_allclose(op.se, hess.se, rtol=0.15)


@pytest.mark.slow
def test_null_covariate_rejection_rate():
    rejections = 0
    reps = 200
    config = regression.FitConfig(
        structure=StructureKind.EXPONENTIAL, phases=1, family=Family.IDENTITY, max_iter=300
    )
    for seed in range(reps):
        rng = np.random.default_rng(1000 + seed)
        X = rng.uniform(-1, 1, size=(200, 2))
        y = rng.exponential(np.exp(-0.8 * X[:, 0]))
        model, _ = regression.fit(Dataset(y, X, ("X1", "X2")), config)
        rep = inference.wald_report(model, Dataset(y, X, ("X1", "X2")))
        rejections += int(rep.p_values[1] < 0.05)
    assert 0.01 <= rejections / reps <= 0.11


def test_outer_product_blocks():
    rng = np.random.default_rng(4)
    law = build_structure(StructureKind.COXIAN, 2, seed=1)
    model = RegressionModel(law, InhomogeneityTransform(Family.PARETO, (2.0,)), [0.3], "exp", ("X1",))
    data = Dataset(rng.uniform(0.1, 5.0, 80), rng.normal(size=(80, 1)), ("X1",))
    G = inference.score_contributions(model, data)
    info = inference.fisher_information(model, data)
    assert info.shape == (2, 2)
    assert info[0, 1] == pytest.approx(np.sum(G[:, 0] * G[:, 1]))
    np.testing.assert_array_equal(info, info.T)


def test_wald_report_arithmetic():
    data = glm_data(5)
    rep = inference.wald_report(exp_glm(beta=0.0), data)
    assert rep.names == ["X1"]
    assert rep.p_values[0] == pytest.approx(1.0)
    np.testing.assert_allclose(rep.upper - rep.estimates, 1.96 * rep.se)
    np.testing.assert_allclose(rep.estimates - rep.lower, 1.96 * rep.se)
    assert rep.source == inference.OUTER_PRODUCT
    assert rep.aic == pytest.approx(-2 * rep.loglik + 2 * rep.df)
    frame = rep.to_frame()
    assert list(frame.columns) == ["term", "estimate", "se", "ci_lower", "ci_upper", "p_value"]


def test_wald_p_values_are_scale_free():
    data = glm_data(6)
    model = exp_glm(rate=1.1, beta=0.5)
    scaled = Dataset(data.y, data.X * 4.0, data.columns)
    a = inference.wald_report(model, data)
    b = inference.wald_report(exp_glm(rate=1.1, beta=0.5 / 4.0), scaled)
    assert b.p_values[0] == pytest.approx(a.p_values[0], abs=1e-6)
    assert b.se[0] == pytest.approx(a.se[0] / 4.0, rel=1e-10)


def test_confidence_interval_arithmetic():
    est, se = -1.039, 0.147
    assert est - inference.Z_95 * se == pytest.approx(-1.327, abs=1e-3)
    assert est + inference.Z_95 * se == pytest.approx(-0.751, abs=1e-3)


def test_singular_information_is_refused():
    with pytest.raises(SingularInformationError) as err:
        inference.covariance(np.diag([1.0, 1e-14]), inference.OUTER_PRODUCT)
    assert err.value.recommended_source == inference.NUMERICAL_HESSIAN
    with pytest.raises(DomainError):
        inference.fisher_information(exp_glm(), glm_data(7), "bootstrap")


def test_aic_bic_table_values():
    aic, bic = inference.aic_bic(-3042.0, 7, 1000)
    assert aic == pytest.approx(6098.0)
    assert bic == pytest.approx(6098.0 + 7 * math.log(1000) - 14.0)
    assert abs(bic - 6133) < 1.0
    with pytest.raises(DomainError):
        inference.aic_bic(-1.0, 0, 10)


def test_ks_statistic():
    assert inference.ks_statistic([0.5]) == pytest.approx(0.5)
    n = 200
    grid = np.arange(1, n + 1) / (n + 1)
    assert inference.ks_statistic(grid) <= 1.0 / (n + 1) + 1.0 / n
    with pytest.raises(DomainError):
        inference.ks_statistic([0.2, 1.3])
    with pytest.raises(DomainError):
        inference.ks_statistic([])


def test_pit_limits_and_permutation(coxian3):
    model = RegressionModel(coxian3, InhomogeneityTransform(Family.PARETO, (1.0,)), [0.2], covariates=("X1",))
    data = Dataset([1e-9, 1.0, 1e6], [[0.0], [1.0], [2.0]], ("X1",))
    u = inference.pit_residuals(model, data)
    assert u[0] == pytest.approx(1.0, abs=1e-6)
    assert u[2] < 1e-3
    perm = [2, 0, 1]
    np.testing.assert_array_equal(inference.pit_residuals(model, data.subset(perm)), u[perm])


def test_pit_inverts_quantiles(coxian3):
    model = RegressionModel(coxian3, InhomogeneityTransform(Family.WEIBULL, (1.4,)), [-0.3], covariates=("X1",))
    levels = np.array([0.05, 0.3, 0.5, 0.8, 0.97])
    ys = np.array([regression.predict_quantile(model, [1.0], q) for q in levels])
    u = inference.pit_residuals(model, Dataset(ys, np.ones((5, 1)), ("X1",)))
    np.testing.assert_allclose(u, 1.0 - levels, atol=1e-9)


def test_pit_underflow_is_clamped(exponential):
    model = RegressionModel(exponential, IDENTITY)
    with pytest.warns(TailUnderflowWarning):
        u = inference.pit_residuals(model, Dataset([1.0, 900.0]))
    assert u[1] == 1e-300


def test_self_simulated_data_passes_ks(coxian3):
    model = RegressionModel(coxian3, InhomogeneityTransform(Family.PARETO, (1.5,)), [0.7, -0.4], covariates=("a", "b"))
    X = np.random.default_rng(9).uniform(size=(5000, 2))
    data = Dataset(regression.simulate(model, X, seed=10), X, ("a", "b"))
    u = inference.pit_residuals(model, data)
    assert inference.ks_statistic(u) < inference.ks_critical_value(data.n)
    assert inference.ks_critical_value(data.n) == pytest.approx(1.358 / math.sqrt(5000), rel=1e-3)


def test_pp_table():
    table = inference.pp_table([0.9, 0.1, 0.5])
    assert list(table.columns) == ["ordered_pit", "uniform_quantile"]
    np.testing.assert_array_equal(table["ordered_pit"], [0.1, 0.5, 0.9])
    np.testing.assert_allclose(table["uniform_quantile"], [0.25, 0.5, 0.75])


def test_loss_ratio_and_holdout():
    model = exp_glm(beta=0.0)
    data = Dataset([0.5, 1.5, 1.0, 1.0], np.zeros((4, 1)), ("X1",))
    assert inference.loss_ratio(model, data) == pytest.approx(4.0 / 4.0)
    assert inference.holdout_mse(model, data) == pytest.approx(np.mean([0.25, 0.25, 0.0, 0.0]))
    test, train = inference.holdout_split(data, 0.5)
    assert test.n == 2 and train.n == 2
    np.testing.assert_array_equal(test.y, [0.5, 1.5])
    assert inference.holdout_mse(model, data, 0.5) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        inference.holdout_split(data, 1.0)

    heavy = RegressionModel(
        PhaseTypeLaw([1.0], [[-0.5]], StructureKind.EXPONENTIAL), InhomogeneityTransform(Family.PARETO, (1.0,))
    )
    assert inference.loss_ratio(heavy, Dataset([1.0, 2.0])) is None
