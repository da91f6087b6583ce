"""Cyclic coordinate-descent LASSO with an unpenalized intercept.

Fits ``min_w (1/2n) ||y - b - X w||^2 + lam ||w||_1`` with columns
standardized internally to unit mean square (coefficients are mapped
back to the original scale on output).  Used per group on the flattened
voxel-by-component predictor matrix as the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from st2n import kernels

__all__ = [
    "LassoFit",
    "CvResult",
    "ConvergenceError",
    "lasso_fit",
    "lasso_cv_path",
    "kkt_violation",
    "lasso_objective",
]


class ConvergenceError(RuntimeError):
    """Coordinate descent failed to reach the tolerance in max_iter sweeps."""


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    lambda_reg: float
    final_delta: float
    n_sweeps: int


@dataclass
class CvResult:
    lambda_best: float
    lambdas: np.ndarray
    cv_mse: np.ndarray
    fit: LassoFit


class _Standardized:
    """Centered, unit-mean-square design with the maps back to raw scale."""

    def __init__(self, X: np.ndarray, y: np.ndarray):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.x_mean = X.mean(axis=0)
        xc = X - self.x_mean
        self.x_scale = np.sqrt((xc * xc).mean(axis=0))
        self.live = self.x_scale > 0.0
        scale_safe = np.where(self.live, self.x_scale, 1.0)
        self.cols = np.ascontiguousarray((xc / scale_safe).T)
        self.cols[~self.live] = 0.0
        self.y_mean = y.mean()
        self.yc = y - self.y_mean
        self.n = y.shape[0]
        self.m = X.shape[1]

    def lambda_max(self) -> float:
        return float(np.abs(self.cols @ self.yc).max() / self.n)

    def to_raw(self, w: np.ndarray) -> tuple[np.ndarray, float]:
        coef = np.where(self.live, w / np.where(self.live, self.x_scale, 1.0), 0.0)
        intercept = self.y_mean - float(self.x_mean @ coef)
        return coef, intercept


def _descend(std: _Standardized, w: np.ndarray, lam: float, tol: float, max_iter: int):
    r = std.yc - std.cols.T @ w
    for sweep in range(max_iter):
        delta = kernels.cd_sweep(std.cols, r, w, lam)
        if delta < tol:
            return w, float(delta), sweep + 1
        if (sweep + 1) % 1000 == 0:
            # long warm-started runs: rebuild the residual to stop
            # incremental floating-point drift from setting a floor
            r = std.yc - std.cols.T @ w
    raise ConvergenceError(
        f"coordinate descent did not converge in {max_iter} sweeps "
        f"(last max update {delta:.3e}, tol {tol:.3e})"
    )


def lasso_fit(
    Xmat: np.ndarray,
    y: np.ndarray,
    lambda_reg: float,
    tol: float = 1e-8,
    max_iter: int = 100000,
) -> LassoFit:
    """Solve one LASSO problem by cyclic coordinate descent."""
    if lambda_reg < 0:
        raise ValueError("penalty must be nonnegative")
    std = _Standardized(Xmat, y)
    w = np.zeros(std.m)
    w, delta, sweeps = _descend(std, w, lambda_reg, tol, max_iter)
    coef, intercept = std.to_raw(w)
    return LassoFit(
        coef=coef, intercept=intercept, lambda_reg=float(lambda_reg),
        final_delta=delta, n_sweeps=sweeps,
    )


def lasso_objective(Xmat, y, coef, intercept, lambda_reg) -> float:
    resid = y - intercept - Xmat @ coef
    n = y.shape[0]
    return float(0.5 * (resid @ resid) / n + lambda_reg * np.abs(coef).sum())


def kkt_violation(Xmat: np.ndarray, y: np.ndarray, fit: LassoFit) -> float:
    """Largest stationarity violation on the standardized problem."""
    std = _Standardized(Xmat, y)
    w = fit.coef * std.x_scale
    r = std.yc - std.cols.T @ w
    grad = std.cols @ r / std.n
    active = w != 0.0
    viol = np.abs(grad[active] - fit.lambda_reg * np.sign(w[active]))
    slack = np.abs(grad[~active & std.live]) - fit.lambda_reg
    worst = 0.0
    if viol.size:
        worst = max(worst, float(viol.max()))
    if slack.size:
        worst = max(worst, float(slack.max()))
    return worst


def lasso_cv_path(
    Xmat: np.ndarray,
    y: np.ndarray,
    k_folds: int = 5,
    n_lambdas: int = 30,
    tol: float = 1e-7,
    max_iter: int = 100000,
    seed: int = 0,
) -> CvResult:
    """Select the penalty by k-fold cross-validation over a warm-started path.

    The grid is log-spaced from the null-model threshold down four
    decades; fold assignment is a seeded permutation.  The default
    tolerance is looser than the single-fit default: near the bottom of
    the path on underdetermined folds, cyclic descent converges slowly,
    and 1e-7 still leaves an order of magnitude against the 1e-6
    stationarity contract.
    """
    if k_folds < 2:
        raise ValueError("need at least two folds")
    X = np.asarray(Xmat, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    full = _Standardized(X, y)
    lam_max = full.lambda_max()
    if lam_max == 0.0:
        lam_max = 1.0
    lambdas = np.logspace(np.log10(lam_max), np.log10(lam_max) - 4.0, n_lambdas)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, k_folds)
    sq_err = np.zeros((n_lambdas, k_folds))
    for k, val_idx in enumerate(folds):
        train_mask = np.ones(n, dtype=bool)
        train_mask[val_idx] = False
        std = _Standardized(X[train_mask], y[train_mask])
        w = np.zeros(std.m)
        for li, lam in enumerate(lambdas):
            w, _, _ = _descend(std, w, lam, tol, max_iter)
            coef, intercept = std.to_raw(w)
            resid = y[val_idx] - intercept - X[val_idx] @ coef
            sq_err[li, k] = (resid @ resid) / val_idx.size
    cv_mse = sq_err.mean(axis=1)
    best = int(np.argmin(cv_mse))
    fit = lasso_fit(X, y, float(lambdas[best]), tol=tol, max_iter=max_iter)
    return CvResult(
        lambda_best=float(lambdas[best]), lambdas=lambdas, cv_mse=cv_mse, fit=fit
    )
