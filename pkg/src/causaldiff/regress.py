"""Estimation kernels: OLS, logistic IRLS, lasso coordinate descent,
cluster-robust covariance, and g-computation contrasts.

All fitting is deterministic and single-threaded; fitted models keep their
design so covariance and delta-method computations can be done afterwards
without refitting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats

__all__ = [
    "ClusterVcov",
    "ConvergenceError",
    "GComputeResult",
    "ModelFit",
    "RankDeficiencyError",
    "SeparationError",
    "cluster_robust_vcov",
    "fit_lasso_glm",
    "fit_logistic",
    "fit_ols",
    "g_compute",
]

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
IRLS_RIDGE = 1e-10
SEPARATION_SCALE = 15.0
CD_TOL = 1e-9
CD_MAX_SWEEPS = 10_000


class RankDeficiencyError(ValueError):
    def __init__(self, columns):
        self.columns = tuple(columns)
        super().__init__(f"design is rank deficient; collinear columns: {list(columns)}")


class SeparationError(RuntimeError):
    """The logistic likelihood has no finite maximizer."""


class ConvergenceError(RuntimeError):
    pass


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    expe = np.exp(eta[~pos])
    out[~pos] = expe / (1.0 + expe)
    return out


def _binomial_deviance(y, p):
    eps = 1e-12
    p = np.clip(p, eps, 1 - eps)
    return -2.0 * np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))


def _drop_missing(y, X, extra=None):
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    ok = ~np.isnan(y) & ~np.isnan(X).any(axis=1)
    dropped = int((~ok).sum())
    if extra is not None:
        extra = np.asarray(extra)[ok]
    return y[ok], X[ok], ok, dropped, extra


def _check_rank(X, columns):
    _, r, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        raise RankDeficiencyError(columns)
    tol = diag[0] * max(X.shape) * np.finfo(float).eps
    deficient = np.nonzero(diag <= tol)[0]
    if len(deficient):
        bad = sorted(piv[k] for k in deficient)
        raise RankDeficiencyError([columns[k] for k in bad])


def _named(columns, width):
    if columns is None:
        return tuple(f"x{k}" for k in range(width))
    if len(columns) != width:
        raise ValueError("column names do not match design width")
    return tuple(columns)


@dataclass
class ModelFit:
    """A fitted generalized linear model with its training design."""

    family: str
    coef: np.ndarray
    columns: tuple
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)  # IRLS working weights; ones for OLS
    n_dropped: int = 0
    convergence: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def n_params(self) -> int:
        return len(self.coef)

    def coefficient(self, name: str) -> float:
        return float(self.coef[self.columns.index(name)])

    def linear_predictor(self, X=None) -> np.ndarray:
        X = self.X if X is None else np.asarray(X, dtype=float)
        return X @ self.coef

    def predict(self, X=None) -> np.ndarray:
        eta = self.linear_predictor(X)
        if self.family == "binomial":
            return _sigmoid(eta)
        return eta

    def mean_derivative(self, X=None) -> np.ndarray:
        """d mu / d eta at the fitted (or supplied) design rows."""
        if self.family == "binomial":
            p = self.predict(X)
            return p * (1 - p)
        rows = len(self.X if X is None else X)
        return np.ones(rows)

    @property
    def residuals(self) -> np.ndarray:
        return self.y - self.predict()

    def score_contributions(self) -> np.ndarray:
        """Per-row score vectors (rows x params)."""
        return self.X * self.residuals[:, None]

    def bread_inverse(self) -> np.ndarray:
        """Inverse of X'WX, the unscaled information."""
        xtwx = self.X.T @ (self.X * self.weights[:, None])
        return linalg.pinvh(xtwx)

    def unpenalized_covariance(self) -> np.ndarray:
        """Model-based covariance: sigma^2 (X'X)^-1 for gaussian, (X'WX)^-1
        for binomial."""
        binv = self.bread_inverse()
        if self.family == "gaussian":
            dof = max(self.n_obs - self.n_params, 1)
            sigma2 = float(self.residuals @ self.residuals) / dof
            return sigma2 * binv
        return binv

    def summary(self) -> dict:
        return {
            "family": self.family,
            "n_obs": self.n_obs,
            "n_dropped": self.n_dropped,
            "columns": list(self.columns),
            "coef": [float(c) for c in self.coef],
            **{k: v for k, v in self.convergence.items()},
        }


def fit_ols(y, X, columns=None) -> ModelFit:
    """Least squares via the normal equations after a pivoted-QR rank check.

    Rows with missing values are dropped and counted; rank deficiency is an
    error naming the collinear columns.
    """
    columns = _named(columns, np.asarray(X).shape[1])
    y, X, _, dropped, _ = _drop_missing(y, X)
    if len(y) < X.shape[1]:
        raise ValueError("fewer usable rows than parameters")
    _check_rank(X, columns)
    xtx = X.T @ X
    coef = linalg.solve(xtx, X.T @ y, assume_a="pos")
    fit = ModelFit(
        family="gaussian",
        coef=coef,
        columns=columns,
        X=X,
        y=y,
        weights=np.ones(len(y)),
        n_dropped=dropped,
        convergence={"iterations": 1, "score_norm": float(np.max(np.abs(X.T @ (y - X @ coef))) / max(len(y), 1))},
    )
    return fit


def fit_logistic(y, X, columns=None) -> ModelFit:
    """Logistic regression by iteratively reweighted least squares.

    Converges when the maximum absolute score falls to ``1e-8``; the
    deviance is kept non-increasing by step halving. Divergence toward a
    perfectly separating hyperplane raises :class:`SeparationError` instead
    of returning silently huge coefficients.
    """
    columns = _named(columns, np.asarray(X).shape[1])
    y, X, _, dropped, _ = _drop_missing(y, X)
    uniq = np.unique(y)
    if not np.isin(uniq, (0.0, 1.0)).all():
        raise ValueError("binomial outcome must be coded 0/1")
    if len(y) < X.shape[1]:
        raise ValueError("fewer usable rows than parameters")
    _check_rank(X, columns)

    col_scale = X.std(axis=0)
    col_scale[col_scale == 0] = 1.0

    coef = np.zeros(X.shape[1])
    eta = X @ coef
    p = _sigmoid(eta)
    deviance = _binomial_deviance(y, p)
    iterations = 0
    for iterations in range(1, IRLS_MAX_ITER + 1):
        w = p * (1 - p)
        score = X.T @ (y - p)
        if np.max(np.abs(score)) <= IRLS_TOL:
            break
        xtwx = X.T @ (X * w[:, None])
        xtwx[np.diag_indices_from(xtwx)] += IRLS_RIDGE
        step = linalg.solve(xtwx, score, assume_a="pos")
        # step halving keeps the deviance non-increasing
        factor = 1.0
        for _ in range(30):
            trial = coef + factor * step
            trial_dev = _binomial_deviance(y, _sigmoid(X @ trial))
            if trial_dev <= deviance + 1e-12:
                break
            factor /= 2.0
        coef = coef + factor * step
        eta = X @ coef
        p = _sigmoid(eta)
        deviance = trial_dev
        if np.max(np.abs(coef) * col_scale) > SEPARATION_SCALE:
            raise SeparationError(
                "coefficients diverging; the classes are (quasi-)separated"
            )
    score_norm = float(np.max(np.abs(X.T @ (y - p))))
    if score_norm > 1e-4:
        raise ConvergenceError(f"IRLS failed to converge (score norm {score_norm:.2e})")
    return ModelFit(
        family="binomial",
        coef=coef,
        columns=columns,
        X=X,
        y=y,
        weights=p * (1 - p),
        n_dropped=dropped,
        convergence={
            "iterations": iterations,
            "score_norm": score_norm,
            "deviance": float(deviance),
        },
    )


# -- lasso ------------------------------------------------------------------------


def _soft_threshold(value, bound):
    if value > bound:
        return value - bound
    if value < -bound:
        return value + bound
    return 0.0


def fit_lasso_glm(y, X, family="gaussian", lam=0.0, columns=None, max_sweeps=CD_MAX_SWEEPS) -> ModelFit:
    """L1-penalized GLM by cyclic coordinate descent.

    Columns are standardized internally (the intercept is implicit and
    unpenalized); reported coefficients are on the original scale with the
    intercept prepended as column ``const``. The objective is the mean
    deviance plus ``lam`` times the L1 norm of the standardized
    coefficients, and the fit records its Karush-Kuhn-Tucker certificate.
    """
    if lam < 0:
        raise ValueError("penalty must be non-negative")
    if family not in ("gaussian", "binomial"):
        raise ValueError(f"unknown family {family!r}")
    columns = _named(columns, np.asarray(X).shape[1])
    y, X, _, dropped, _ = _drop_missing(y, X)
    n, p = X.shape
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    if (scales == 0).any():
        bad = [columns[k] for k in np.nonzero(scales == 0)[0]]
        raise ValueError(f"constant columns cannot be penalized: {bad}")
    Z = (X - means) / scales

    beta = np.zeros(p)
    if family == "gaussian":
        intercept = float(y.mean())
        resid = y - intercept
        for sweep in range(1, max_sweeps + 1):
            delta = 0.0
            for j in range(p):
                old = beta[j]
                rho = (Z[:, j] @ resid) / n + old
                new = _soft_threshold(rho, lam)
                if new != old:
                    resid -= (new - old) * Z[:, j]
                    beta[j] = new
                    delta = max(delta, abs(new - old))
            if delta <= CD_TOL:
                break
        grad = -(Z.T @ resid) / n
        final_weights = np.ones(n)
    else:
        if not np.isin(np.unique(y), (0.0, 1.0)).all():
            raise ValueError("binomial outcome must be coded 0/1")
        pbar = min(max(y.mean(), 1e-6), 1 - 1e-6)
        intercept = float(np.log(pbar / (1 - pbar)))
        for outer in range(100):
            eta = intercept + Z @ beta
            mu = _sigmoid(eta)
            w = np.clip(mu * (1 - mu), 1e-6, None)
            z_work = eta + (y - mu) / w
            # weighted cyclic descent on the quadratic approximation
            for sweep in range(200):
                delta = 0.0
                r = z_work - intercept - Z @ beta
                new_intercept = intercept + float((w @ r) / w.sum())
                r -= new_intercept - intercept
                intercept = new_intercept
                for j in range(p):
                    old = beta[j]
                    wz = w * Z[:, j]
                    rho = (wz @ r) / n + (wz @ Z[:, j]) / n * old
                    denom = (wz @ Z[:, j]) / n
                    new = _soft_threshold(rho, lam) / denom
                    if new != old:
                        r -= (new - old) * Z[:, j]
                        beta[j] = new
                        delta = max(delta, abs(new - old))
                if delta <= CD_TOL * 10:
                    break
            new_eta = intercept + Z @ beta
            if np.max(np.abs(new_eta - eta)) <= 1e-8:
                break
        mu = _sigmoid(intercept + Z @ beta)
        grad = (Z.T @ (mu - y)) / n
        final_weights = mu * (1 - mu)

    kkt = 0.0
    for j in range(p):
        if beta[j] == 0.0:
            kkt = max(kkt, max(abs(grad[j]) - lam, 0.0))
        else:
            kkt = max(kkt, abs(grad[j] + lam * np.sign(beta[j])))

    coef_orig = beta / scales
    intercept_orig = intercept - float(means @ coef_orig)
    full_coef = np.concatenate([[intercept_orig], coef_orig])
    full_cols = ("const",) + columns
    design = np.column_stack([np.ones(n), X])
    fit = ModelFit(
        family=family,
        coef=full_coef,
        columns=full_cols,
        X=design,
        y=y,
        weights=final_weights if family == "binomial" else np.ones(n),
        n_dropped=dropped,
        convergence={
            "lambda": float(lam),
            "kkt_violation": float(kkt),
            "n_nonzero": int(np.count_nonzero(beta)),
        },
    )
    fit.standardized_coef = beta  # pattern on the standardized scale
    return fit


def lasso_lambda_max(y, X, family="gaussian") -> float:
    """Smallest penalty at which every penalized coefficient is zero.

    For both families the null model fits only the intercept (mean or log
    odds of the mean), so the gradient bound is the same expression.
    """
    y, X, _, _, _ = _drop_missing(y, X)
    n = len(y)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales == 0] = 1.0
    Z = (X - means) / scales
    return float(np.max(np.abs(Z.T @ (y - y.mean()))) / n)


# -- covariance -------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterVcov:
    matrix: np.ndarray
    n_clusters: int
    correction: float

    def se(self, index) -> float:
        return float(np.sqrt(self.matrix[index, index]))


def cluster_correction(n_clusters: int, n_obs: int, n_params: int) -> float:
    return (n_clusters / (n_clusters - 1)) * ((n_obs - 1) / max(n_obs - n_params, 1))


def cluster_robust_vcov(fit: ModelFit, cluster_ids) -> ClusterVcov:
    """Sandwich covariance with cluster-summed scores and the usual
    small-sample correction ``G/(G-1) * (n-1)/(n-k)``."""
    cluster_ids = np.asarray(cluster_ids)
    if len(cluster_ids) != fit.n_obs:
        raise ValueError("cluster ids do not align with the fitted rows")
    labels, codes = np.unique(cluster_ids, return_inverse=True)
    n_clusters = len(labels)
    if n_clusters < 2:
        raise ValueError("cluster-robust covariance needs at least 2 clusters")
    scores = fit.score_contributions()
    sums = np.zeros((n_clusters, fit.n_params))
    np.add.at(sums, codes, scores)
    meat = sums.T @ sums
    bread = fit.bread_inverse()
    corr = cluster_correction(n_clusters, fit.n_obs, fit.n_params)
    return ClusterVcov(corr * bread @ meat @ bread, n_clusters, corr)


# -- g-computation ------------------------------------------------------------------


@dataclass
class GComputeResult:
    estimate: float
    influence: np.ndarray
    row_contrasts: np.ndarray
    weights: np.ndarray

    def clustered_se(self, cluster_ids, n_params: int) -> float:
        cluster_ids = np.asarray(cluster_ids)
        labels, codes = np.unique(cluster_ids, return_inverse=True)
        sums = np.zeros(len(labels))
        np.add.at(sums, codes, self.influence)
        corr = cluster_correction(len(labels), len(self.influence), n_params)
        return float(np.sqrt(corr * np.sum(sums**2)))


def g_compute(
    fit: ModelFit,
    data: np.ndarray,
    treatment_col,
    d_high: float,
    d_low: float,
    weight_rows: Optional[np.ndarray] = None,
    interactions: Sequence[tuple] = (),
) -> GComputeResult:
    """Average model-predicted contrast between two treatment values.

    ``data`` is a design matrix aligned with the fit's columns; the
    treatment column (and any ``interactions``, pairs of
    ``(column_index, modifier_values)`` whose column equals treatment times
    modifier) is overridden at ``d_high`` and ``d_low`` in turn. Rows enter
    with ``weight_rows`` (normalized; default uniform). The influence
    values combine the covariate-sampling term with the delta-method
    propagation of coefficient noise, so a cluster aggregation of them
    yields a standard error.
    """
    data = np.asarray(data, dtype=float)
    if isinstance(treatment_col, str):
        treatment_col = fit.columns.index(treatment_col)
    if data.shape[1] != fit.n_params:
        raise ValueError("evaluation design does not match the fitted columns")
    n = len(data)
    if weight_rows is None:
        weights = np.full(n, 1.0 / n)
    else:
        weight_rows = np.asarray(weight_rows, dtype=float)
        total = weight_rows.sum()
        if total <= 0:
            raise ValueError("row weights must have positive mass")
        weights = weight_rows / total

    def at(d):
        X = data.copy()
        X[:, treatment_col] = d
        for col, modifier in interactions:
            X[:, col] = d * np.asarray(modifier, dtype=float)
        return X

    X_hi, X_lo = at(d_high), at(d_low)
    mu_hi, mu_lo = fit.predict(X_hi), fit.predict(X_lo)
    contrasts = mu_hi - mu_lo
    estimate = float(weights @ contrasts)

    # gradient of the weighted contrast with respect to the coefficients
    dmu_hi = fit.mean_derivative(X_hi)
    dmu_lo = fit.mean_derivative(X_lo)
    grad = (weights * dmu_hi) @ X_hi - (weights * dmu_lo) @ X_lo
    coef_influence = fit.score_contributions() @ (fit.bread_inverse() @ grad)
    if n == fit.n_obs:
        # evaluation rows coincide with the fitted rows
        influence = weights * (contrasts - estimate) + coef_influence
    else:
        influence = None
    return GComputeResult(estimate, influence, contrasts, weights)


def z_p_value(point: float, se: float) -> float:
    if se == 0:
        return float(point == 0.0)
    return float(2.0 * stats.norm.sf(abs(point / se)))
