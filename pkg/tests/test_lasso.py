"""Coordinate-descent LASSO: closed-form cases, a brute-force grid
oracle, KKT stationarity at exit, and the cross-validated path."""

import numpy as np
import pytest

from st2n.lasso import (
    ConvergenceError,
    kkt_violation,
    lasso_cv_path,
    lasso_fit,
    lasso_objective,
)


def standardized_design(rng, n, m):
    X = rng.standard_normal((n, m))
    return X


class TestLassoFit:
    def test_unpenalized_single_column_is_ols(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(40)
        y = 2.0 + 1.7 * x + 0.1 * rng.standard_normal(40)
        fit = lasso_fit(x[:, None], y, 0.0)
        xc = x - x.mean()
        slope = float(xc @ (y - y.mean()) / (xc @ xc))
        assert fit.coef[0] == pytest.approx(slope, rel=1e-8)
        assert fit.intercept == pytest.approx(y.mean() - slope * x.mean(), rel=1e-8)

    def test_null_model_threshold(self):
        rng = np.random.default_rng(1)
        X = standardized_design(rng, 50, 8)
        y = rng.standard_normal(50)
        xc = X - X.mean(axis=0)
        xs = xc / np.sqrt((xc * xc).mean(axis=0))
        lam_max = np.abs(xs.T @ (y - y.mean())).max() / 50
        fit = lasso_fit(X, y, lam_max * (1 + 1e-12))
        assert np.all(fit.coef == 0.0)
        assert fit.intercept == pytest.approx(y.mean())
        # just below the threshold, something comes alive
        fit2 = lasso_fit(X, y, lam_max * 0.95)
        assert np.any(fit2.coef != 0.0)

    def test_matches_brute_force_grid(self):
        # m=2, n=5: exhaustive search over the coefficient square of the
        # standardized problem (the one the solver actually minimizes;
        # the penalty is applied on unit-variance columns, as in glmnet)
        from st2n.lasso import _Standardized

        rng = np.random.default_rng(2)
        X = rng.standard_normal((5, 2))
        y = np.array([1.1, -0.4, 0.3, 2.0, -1.2])
        lam = 0.15
        fit = lasso_fit(X, y, lam, tol=1e-12)
        std = _Standardized(X, y)
        w_std = fit.coef * std.x_scale
        ours = 0.5 * ((std.yc - std.cols.T @ w_std) ** 2).mean() + lam * np.abs(
            w_std
        ).sum()

        grid = np.arange(-3.0, 3.0 + 1e-9, 1e-3)
        best = np.inf
        for w0 in grid:
            r0 = std.yc - std.cols[0] * w0
            resid = r0[:, None] - std.cols[1][:, None] * grid[None, :]
            obj = 0.5 * (resid**2).mean(axis=0) + lam * (abs(w0) + np.abs(grid))
            best = min(best, float(obj.min()))
        assert abs(ours - best) < 1e-5
        assert ours <= best + 1e-12  # solver at least as good as the grid
        # and the intercept restores the raw-scale fit at the same point
        assert fit.intercept == pytest.approx(
            y.mean() - float(X.mean(axis=0) @ fit.coef), rel=1e-12
        )

    def test_kkt_residuals_at_exit(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            n, m = 40, 12
            X = standardized_design(rng, n, m)
            w_true = np.zeros(m)
            w_true[:3] = [1.0, -2.0, 0.5]
            y = X @ w_true + 0.3 * rng.standard_normal(n)
            lam = float(rng.uniform(0.01, 0.3))
            fit = lasso_fit(X, y, lam, tol=1e-12)
            assert kkt_violation(X, y, fit) <= 1e-6

    def test_objective_monotone_across_sweeps(self):
        from st2n import kernels
        from st2n.lasso import _Standardized

        rng = np.random.default_rng(4)
        n, m = 30, 10
        X = standardized_design(rng, n, m)
        y = X[:, 0] - 0.5 * X[:, 3] + 0.2 * rng.standard_normal(n)
        lam = 0.1
        std = _Standardized(X, y)
        w = np.zeros(m)
        r = std.yc.copy()
        objs = []
        for _ in range(14):
            kernels.cd_sweep(std.cols, r, w, lam)
            objs.append(0.5 * (r @ r) / n + lam * np.abs(w).sum())
        assert all(a >= b - 1e-12 for a, b in zip(objs, objs[1:]))

    def test_nonconvergence_raises(self):
        rng = np.random.default_rng(5)
        X = standardized_design(rng, 30, 6)
        y = rng.standard_normal(30)
        with pytest.raises(ConvergenceError):
            lasso_fit(X, y, 0.001, tol=0.0, max_iter=3)

    def test_constant_column_gets_zero_weight(self):
        rng = np.random.default_rng(6)
        X = np.c_[np.ones(20), rng.standard_normal(20)]
        y = 3.0 * X[:, 1] + 0.1 * rng.standard_normal(20)
        fit = lasso_fit(X, y, 0.01)
        assert fit.coef[0] == 0.0
        assert fit.coef[1] != 0.0


class TestLassoCvPath:
    def test_pure_noise_selects_sparse_model(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((60, 40))
        y = rng.standard_normal(60)
        cv = lasso_cv_path(X, y, seed=11)
        assert np.count_nonzero(cv.fit.coef) <= 0.05 * 40

    def test_fold_assignment_deterministic(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((45, 10))
        y = X[:, 2] + 0.2 * rng.standard_normal(45)
        cv1 = lasso_cv_path(X, y, seed=5)
        cv2 = lasso_cv_path(X, y, seed=5)
        assert cv1.lambda_best == cv2.lambda_best
        np.testing.assert_array_equal(cv1.cv_mse, cv2.cv_mse)

    def test_path_descends_four_decades_and_is_finite(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((45, 10))
        y = X[:, 0] + 0.3 * rng.standard_normal(45)
        cv = lasso_cv_path(X, y, n_lambdas=25, seed=1)
        assert cv.lambdas[0] / cv.lambdas[-1] == pytest.approx(1e4, rel=1e-9)
        assert np.all(np.isfinite(cv.cv_mse))
        assert cv.lambdas.shape == cv.cv_mse.shape == (25,)

    def test_recovers_signal_support(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((80, 15))
        y = 2.0 * X[:, 4] - 1.5 * X[:, 9] + 0.2 * rng.standard_normal(80)
        cv = lasso_cv_path(X, y, seed=3)
        assert cv.fit.coef[4] != 0.0 and cv.fit.coef[9] != 0.0
        assert kkt_violation(X, y, cv.fit) <= 1e-6

    def test_rejects_single_fold(self):
        with pytest.raises(ValueError):
            lasso_cv_path(np.ones((10, 2)), np.ones(10), k_folds=1)
