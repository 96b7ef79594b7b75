"""Numerical kernels against closed forms and independent solvers."""

import numpy as np
import pytest

from causaldiff.regress import (
    RankDeficiencyError,
    SeparationError,
    cluster_correction,
    cluster_robust_vcov,
    fit_lasso_glm,
    fit_logistic,
    fit_ols,
    g_compute,
    lasso_lambda_max,
)


def design(rng, n, p):
    X = rng.standard_normal((n, p))
    X[:, 0] = 1.0
    return X


# -- OLS ---------------------------------------------------------------------------


def test_ols_exact_line():
    x = np.array([0.0, 1.0, 2.0])
    X = np.column_stack([np.ones(3), x])
    fit = fit_ols(2 * x, X, columns=("const", "x"))
    np.testing.assert_allclose(fit.coef, [0.0, 2.0], atol=1e-12)


def test_ols_intercept_only_is_mean():
    y = np.array([1.0, 2.0, 6.0])
    fit = fit_ols(y, np.ones((3, 1)))
    assert fit.coef[0] == pytest.approx(y.mean())


def test_ols_matches_normal_equation_oracle():
    rng = np.random.default_rng(0)
    X = design(rng, 50, 4)
    y = rng.standard_normal(50)
    fit = fit_ols(y, X)
    oracle = np.linalg.inv(X.T @ X) @ X.T @ y
    np.testing.assert_allclose(fit.coef, oracle, atol=1e-10)


def test_ols_residuals_orthogonal():
    rng = np.random.default_rng(1)
    X = design(rng, 80, 5)
    y = rng.standard_normal(80)
    fit = fit_ols(y, X)
    resid = fit.residuals
    rel = np.abs(X.T @ resid) / (np.linalg.norm(X, axis=0) * np.linalg.norm(resid))
    assert rel.max() < 1e-10


def test_ols_rank_deficiency_names_column():
    rng = np.random.default_rng(2)
    X = design(rng, 30, 3)
    X = np.column_stack([X, X[:, 1] * 2.0])
    with pytest.raises(RankDeficiencyError) as err:
        fit_ols(rng.standard_normal(30), X, columns=("const", "a", "b", "a_copy"))
    assert "a_copy" in err.value.columns or "a" in err.value.columns


def test_ols_drops_missing_rows():
    y = np.array([1.0, np.nan, 3.0, 4.0])
    X = np.column_stack([np.ones(4), [0.0, 1.0, np.nan, 3.0]])
    fit = fit_ols(y, X)
    assert fit.n_dropped == 2
    assert fit.n_obs == 2


# -- logistic ------------------------------------------------------------------------


def test_logistic_balanced_intercept_only():
    y = np.array([0.0, 1.0] * 20)
    fit = fit_logistic(y, np.ones((40, 1)))
    assert fit.coef[0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(fit.predict(), 0.5, atol=1e-9)


def test_logistic_single_binary_regressor_log_odds_ratio():
    # 2x2 table: exposed (30 events / 70), unexposed (10 events / 90)
    y = np.concatenate([np.ones(30), np.zeros(70), np.ones(10), np.zeros(90)])
    x = np.concatenate([np.ones(100), np.zeros(100)])
    X = np.column_stack([np.ones(200), x])
    fit = fit_logistic(y, X)
    expected = np.log((30 * 90) / (70 * 10))
    assert fit.coef[1] == pytest.approx(expected, abs=1e-8)


def newton_logistic_oracle(y, X, tol=1e-12, max_iter=200):
    """Plain Newton iteration on the log-likelihood, independent of IRLS."""
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p)
        hess = X.T @ (X * (p * (1 - p))[:, None])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def test_logistic_matches_newton_oracle():
    rng = np.random.default_rng(3)
    X = design(rng, 200, 4)
    truth = np.array([-0.3, 0.8, -0.5, 0.2])
    p = 1.0 / (1.0 + np.exp(-(X @ truth)))
    y = (rng.uniform(size=200) < p).astype(float)
    fit = fit_logistic(y, X)
    oracle = newton_logistic_oracle(y, X)
    np.testing.assert_allclose(fit.coef, oracle, atol=1e-6)
    assert fit.convergence["score_norm"] <= 1e-8


def test_logistic_separation_detected():
    x = np.linspace(-2, 2, 60)
    y = (x > 0).astype(float)
    X = np.column_stack([np.ones(60), x])
    with pytest.raises(SeparationError):
        fit_logistic(y, X)


def test_logistic_rescaling_invariance():
    rng = np.random.default_rng(4)
    X = design(rng, 300, 3)
    truth = np.array([0.2, -0.6, 0.4])
    y = (rng.uniform(size=300) < 1 / (1 + np.exp(-(X @ truth)))).astype(float)
    fit = fit_logistic(y, X)
    X2 = X.copy()
    X2[:, 1] *= 10.0
    fit2 = fit_logistic(y, X2)
    np.testing.assert_allclose(fit2.coef[1] * 10.0, fit.coef[1], atol=1e-6)
    np.testing.assert_allclose(fit2.predict(), fit.predict(), atol=1e-8)


# -- lasso ----------------------------------------------------------------------------


def test_lasso_lambda_max_zeroes_everything():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((100, 6))
    y = rng.standard_normal(100) + X[:, 0]
    lam_max = lasso_lambda_max(y, X)
    fit = fit_lasso_glm(y, X, lam=lam_max * 1.0001)
    assert fit.convergence["n_nonzero"] == 0
    assert fit.convergence["kkt_violation"] <= 1e-6


def test_lasso_zero_penalty_equals_ols():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((120, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(120)
    fit = fit_lasso_glm(y, X, lam=0.0)
    ols = fit_ols(y, np.column_stack([np.ones(120), X]))
    np.testing.assert_allclose(fit.coef, ols.coef, atol=1e-6)


def test_lasso_orthonormal_soft_threshold():
    rng = np.random.default_rng(7)
    n = 400
    raw = rng.standard_normal((n, 3))
    q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    Z = q * np.sqrt(n)  # centered columns with unit sample variance
    truth = np.array([1.5, -0.7, 0.0])
    y = Z @ truth + rng.standard_normal(n)
    lam = 0.3
    fit = fit_lasso_glm(y, Z, lam=lam)
    ols = fit_ols(y, np.column_stack([np.ones(n), Z])).coef[1:]
    # orthonormal design: the lasso solution soft-thresholds the OLS one
    expected = np.sign(ols) * np.maximum(np.abs(ols) - lam, 0.0)
    np.testing.assert_allclose(fit.coef[1:], expected, atol=1e-8)


def test_lasso_kkt_certificate_random_designs():
    rng = np.random.default_rng(8)
    for _ in range(5):
        X = rng.standard_normal((150, 6))
        y = X @ rng.standard_normal(6) + rng.standard_normal(150)
        lam = float(rng.uniform(0.02, 0.5))
        fit = fit_lasso_glm(y, X, lam=lam)
        assert fit.convergence["kkt_violation"] <= 1e-6


def test_lasso_binomial_kkt_and_null():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((300, 4))
    p = 1 / (1 + np.exp(-(X @ np.array([1.0, -1.0, 0.0, 0.0]))))
    y = (rng.uniform(size=300) < p).astype(float)
    lam_max = lasso_lambda_max(y, X, family="binomial")
    null_fit = fit_lasso_glm(y, X, family="binomial", lam=lam_max * 1.01)
    assert null_fit.convergence["n_nonzero"] == 0
    fit = fit_lasso_glm(y, X, family="binomial", lam=0.05)
    assert fit.convergence["kkt_violation"] <= 1e-6
    assert fit.convergence["n_nonzero"] >= 2


def test_lasso_negative_penalty_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        fit_lasso_glm(np.zeros(10), np.ones((10, 1)), lam=-1.0)


def test_lasso_objective_nonincreasing_per_sweep():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((80, 5))
    y = X @ rng.standard_normal(5) + rng.standard_normal(80)
    lam = 0.1
    # run with a sweep cap and confirm the objective never rises between caps
    Z = (X - X.mean(axis=0)) / X.std(axis=0)

    def objective(fit):
        beta = fit.standardized_coef
        resid = y - y.mean() - Z @ beta
        return float(resid @ resid / (2 * len(y)) + lam * np.abs(beta).sum())

    values = [
        objective(fit_lasso_glm(y, X, lam=lam, max_sweeps=k)) for k in (1, 2, 3, 5, 10)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


# -- cluster-robust covariance ----------------------------------------------------------


def test_singleton_clusters_equal_hc_sandwich():
    rng = np.random.default_rng(11)
    X = design(rng, 60, 3)
    y = X @ np.array([1.0, 0.5, -0.2]) + rng.standard_normal(60)
    fit = fit_ols(y, X)
    vcov = cluster_robust_vcov(fit, np.arange(60))
    bread = np.linalg.inv(X.T @ X)
    meat = X.T @ (X * (fit.residuals**2)[:, None])
    expected = cluster_correction(60, 60, 3) * bread @ meat @ bread
    np.testing.assert_allclose(vcov.matrix, expected, atol=1e-12)


def test_duplicating_clusters_keeps_points_scales_vcov():
    rng = np.random.default_rng(12)
    X = design(rng, 40, 2)
    y = X @ np.array([0.3, 1.2]) + rng.standard_normal(40)
    clusters = np.repeat(np.arange(8), 5)
    fit = fit_ols(y, X)
    v1 = cluster_robust_vcov(fit, clusters)
    X2, y2 = np.vstack([X, X]), np.concatenate([y, y])
    clusters2 = np.concatenate([clusters, clusters + 8])
    fit2 = fit_ols(y2, X2)
    np.testing.assert_allclose(fit2.coef, fit.coef, atol=1e-12)
    v2 = cluster_robust_vcov(fit2, clusters2)
    # recomputation oracle: doubled data with cloned clusters
    bread2 = np.linalg.inv(X2.T @ X2)
    sums = np.zeros((16, 2))
    scores = X2 * (y2 - X2 @ fit2.coef)[:, None]
    np.add.at(sums, clusters2, scores)
    expected = cluster_correction(16, 80, 2) * bread2 @ (sums.T @ sums) @ bread2
    np.testing.assert_allclose(v2.matrix, expected, atol=1e-12)


def test_homoskedastic_many_clusters_near_classical():
    rng = np.random.default_rng(13)
    n, reps = 2000, 40
    ratios = []
    for _ in range(reps):
        X = design(rng, n, 2)
        y = X @ np.array([1.0, 2.0]) + rng.standard_normal(n)
        fit = fit_ols(y, X)
        clusters = np.arange(n) % 200
        robust = cluster_robust_vcov(fit, clusters).matrix[1, 1]
        classical = fit.unpenalized_covariance()[1, 1]
        ratios.append(robust / classical)
    assert abs(np.mean(ratios) - 1.0) < 0.05


def test_single_cluster_rejected():
    rng = np.random.default_rng(14)
    X = design(rng, 10, 2)
    fit = fit_ols(rng.standard_normal(10), X)
    with pytest.raises(ValueError, match="at least 2"):
        cluster_robust_vcov(fit, np.zeros(10))


# -- g-computation -----------------------------------------------------------------------


def test_identity_link_contrast_is_slope_times_delta():
    rng = np.random.default_rng(15)
    X = design(rng, 100, 3)
    y = X @ np.array([0.5, 2.0, -1.0]) + rng.standard_normal(100)
    fit = fit_ols(y, X, columns=("const", "d", "c"))
    for weights in (None, rng.uniform(size=100)):
        res = g_compute(fit, X, "d", 0.8, 0.2, weight_rows=weights)
        assert res.estimate == pytest.approx(fit.coefficient("d") * 0.6, abs=1e-12)


def test_logistic_single_row_contrast():
    rng = np.random.default_rng(16)
    X = design(rng, 50, 2)
    y = (rng.uniform(size=50) < 0.5).astype(float)
    fit = fit_logistic(y, X, columns=("const", "d"))
    row = X[:1]
    res = g_compute(fit, row, "d", 1.0, 0.0)
    a, b = fit.coef

    def inv_logit(v):
        return 1 / (1 + np.exp(-v))

    assert res.estimate == pytest.approx(inv_logit(a + b) - inv_logit(a), abs=1e-12)


def test_logistic_contrast_matches_row_loop():
    rng = np.random.default_rng(17)
    X = design(rng, 100, 3)
    truth = np.array([0.1, 0.9, -0.4])
    y = (rng.uniform(size=100) < 1 / (1 + np.exp(-(X @ truth)))).astype(float)
    fit = fit_logistic(y, X, columns=("const", "d", "c"))
    res = g_compute(fit, X, "d", 0.7, 0.1)
    acc = 0.0
    for i in range(100):
        hi = X[i].copy()
        lo = X[i].copy()
        hi[1], lo[1] = 0.7, 0.1
        p_hi = 1 / (1 + np.exp(-(hi @ fit.coef)))
        p_lo = 1 / (1 + np.exp(-(lo @ fit.coef)))
        acc += (p_hi - p_lo) / 100
    assert res.estimate == pytest.approx(acc, abs=1e-12)


def test_gcompute_influence_reduces_to_coefficient_variance_when_linear():
    rng = np.random.default_rng(18)
    X = design(rng, 200, 2)
    y = X @ np.array([0.5, 1.5]) + rng.standard_normal(200)
    fit = fit_ols(y, X, columns=("const", "d"))
    clusters = np.arange(200) % 25
    res = g_compute(fit, X, "d", 1.0, 0.0)
    se = res.clustered_se(clusters, fit.n_params)
    coef_se = np.sqrt(cluster_robust_vcov(fit, clusters).matrix[1, 1])
    assert se == pytest.approx(coef_se, rel=1e-10)
