"""Generative model: coefficient-field materialization, Gaussian
likelihood, and exact gradients of the log posterior with respect to
every latent knot coefficient.

The mean for subject ``i`` in group ``g`` is

    mu_i = b0[g] + X_i . b_cov + p^{-1/2} sum_j <D_i(v_j), beta_g(v_j)>

where ``beta_g(v_j)`` comes from the double soft-threshold of the
expanded shared and group latent fields.  Voxels inside the threshold
ball contribute exactly nothing to the mean or to any gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, multigammaln

from st2n import kernels
from st2n.fields import KernelCholeskyCache, SpatialGrid, expand_field, gp_log_prior

__all__ = [
    "VectorImageDataset",
    "ModelState",
    "CoefficientField",
    "Hyper",
    "group_indices",
    "materialize_coefficients",
    "predict_mean",
    "log_likelihood",
    "log_posterior_value",
    "log_posterior_and_grad",
]


@dataclass(frozen=True)
class Hyper:
    """Fixed hyperparameters of the priors."""

    c1: float = 0.1
    c2: float = 0.1
    d1: float = 0.1
    d2: float = 0.1
    sigma_b2: float = 100.0
    nu: float = 4.0
    S: np.ndarray | None = None  # inverse-Wishart scale; identity when None
    R: float = 5.0

    def scale_matrix(self, q: int) -> np.ndarray:
        if self.S is None:
            return np.eye(q)
        S = np.asarray(self.S, dtype=float)
        if S.shape != (q, q):
            raise ValueError(f"inverse-Wishart scale must be {q}x{q}, got {S.shape}")
        return S


@dataclass
class VectorImageDataset:
    """Responses, predictor tensor, group labels and scalar covariates."""

    y: np.ndarray          # (n,)
    D: np.ndarray          # (n, p, q)
    group_of: np.ndarray   # (n,) integers in [0, n_groups)
    n_groups: int
    grid: SpatialGrid
    X: np.ndarray = field(default=None)  # (n, c); c may be zero

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.D = np.ascontiguousarray(self.D, dtype=float)
        self.group_of = np.asarray(self.group_of, dtype=np.int64)
        if self.X is None:
            self.X = np.zeros((self.n, 0))
        self.X = np.asarray(self.X, dtype=float)
        if self.D.ndim != 3 or self.D.shape[0] != self.n:
            raise ValueError("predictor tensor must be (n, p, q)")
        if self.D.shape[1] != self.grid.p:
            raise ValueError(
                f"predictor voxel count {self.D.shape[1]} does not match grid p={self.grid.p}"
            )
        if self.group_of.shape != (self.n,):
            raise ValueError("group labels must be one per subject")
        counts = np.bincount(self.group_of, minlength=self.n_groups)
        if counts.size > self.n_groups or np.any(counts[: self.n_groups] == 0):
            raise ValueError("every group must be nonempty and labels in range")
        for name, arr in (("y", self.y), ("D", self.D), ("X", self.X)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.D.shape[1]

    @property
    def q(self) -> int:
        return self.D.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]


def group_indices(group_of: np.ndarray, n_groups: int) -> list[np.ndarray]:
    return [np.nonzero(group_of == g)[0] for g in range(n_groups)]


@dataclass
class ModelState:
    """One point in the posterior's parameter space."""

    beta_knots: np.ndarray     # (L, q) shared latent field at the knots
    alpha_knots: np.ndarray    # (G, L, q) group latent fields at the knots
    a_shared: float
    a_group: np.ndarray        # (G,)
    lambda_shared: float
    lambda_group: np.ndarray   # (G,)
    sigma_mat: np.ndarray      # (q, q) cross-component covariance
    sigma2: float
    b0: np.ndarray             # (G,)
    b_cov: np.ndarray          # (c,)

    def copy(self) -> "ModelState":
        return ModelState(
            beta_knots=self.beta_knots.copy(),
            alpha_knots=self.alpha_knots.copy(),
            a_shared=float(self.a_shared),
            a_group=self.a_group.copy(),
            lambda_shared=float(self.lambda_shared),
            lambda_group=self.lambda_group.copy(),
            sigma_mat=self.sigma_mat.copy(),
            sigma2=float(self.sigma2),
            b0=self.b0.copy(),
            b_cov=self.b_cov.copy(),
        )

    @property
    def n_groups(self) -> int:
        return self.alpha_knots.shape[0]

    def validate(self, R: float) -> None:
        if self.sigma2 <= 0:
            raise ValueError("error variance must be positive")
        lams = np.append(self.lambda_group, self.lambda_shared)
        if np.any(lams < 0) or np.any(lams > R):
            raise ValueError(f"thresholds must lie in [0, {R}]")
        np.linalg.cholesky(self.sigma_mat)


@dataclass
class CoefficientField:
    """Materialized per-voxel coefficients and derived summaries.

    ``beta`` holds exact zeros where thresholded; ``psi`` is NaN at
    voxels where any group's coefficient is zero (no direction).
    """

    beta: np.ndarray       # (G, p, q)
    norms: np.ndarray      # (G, p)
    f_values: np.ndarray   # (p, q)
    lambda_s: np.ndarray   # (p,)
    psi: np.ndarray        # (p,) with NaN marking undefined


def _psi_map(beta: np.ndarray, norms: np.ndarray) -> np.ndarray:
    G, p, _ = beta.shape
    psi = np.full(p, np.nan)
    if G < 2:
        return psi
    defined = np.all(norms > 0.0, axis=0)
    if not np.any(defined):
        return psi
    units = beta[:, defined, :] / norms[:, defined, None]
    best = np.full(defined.sum(), np.inf)
    for g in range(G):
        for h in range(g + 1, G):
            np.minimum(best, (units[g] * units[h]).sum(axis=1), out=best)
    psi[defined] = best
    return psi


def _lambda_s_map(bt: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    # alpha: (G, p, q) thresholded deviations; bt: (p, q) shared field
    vals = (alpha * (alpha + 2.0 * bt[None, :, :])).sum(axis=2)  # (G, p)
    vals = np.where(vals < 0.0, vals, -np.inf)
    worst = vals.max(axis=0)
    return np.where(np.isfinite(worst), np.sqrt(np.maximum(-worst, 0.0)), 0.0)


def materialize_coefficients(
    state: ModelState, basis: np.ndarray, return_internals: bool = False
):
    """Expand knot fields to voxels and apply the double soft-threshold.

    With ``return_internals`` the pre-threshold fields needed by the
    gradient chain are returned alongside the public field.
    """
    G = state.n_groups
    p = basis.shape[0]
    q = state.beta_knots.shape[1]
    bt = expand_field(basis, state.beta_knots)
    beta = np.empty((G, p, q))
    alpha = np.empty((G, p, q))
    u = np.empty((G, p, q))
    u_norm = np.empty((G, p))
    at = np.empty((G, p, q))
    a_norm = np.empty((G, p))
    for g in range(G):
        at[g] = expand_field(basis, state.alpha_knots[g])
        beta[g], u[g], u_norm[g], alpha[g], a_norm[g] = kernels.double_threshold_rows(
            bt, at[g], state.lambda_shared, float(state.lambda_group[g])
        )
    norms = np.sqrt((beta * beta).sum(axis=2))
    lambda_s = _lambda_s_map(bt, alpha)
    hb, _ = kernels.st2n_rows(bt, state.lambda_shared)
    f_values, _ = kernels.st2n_rows_var(hb, lambda_s)
    fieldv = CoefficientField(
        beta=beta, norms=norms, f_values=f_values, lambda_s=lambda_s,
        psi=_psi_map(beta, norms),
    )
    if return_internals:
        internals = {"bt": bt, "at": at, "u": u, "u_norm": u_norm,
                     "alpha": alpha, "a_norm": a_norm}
        return fieldv, internals
    return fieldv


def predict_mean(
    coeff: CoefficientField, data: VectorImageDataset, state: ModelState
) -> np.ndarray:
    """Model mean per subject given a materialized coefficient field."""
    if coeff.beta.shape != (data.n_groups, data.p, data.q):
        raise ValueError("coefficient field does not match dataset shape")
    mu = state.b0[data.group_of] + data.X @ state.b_cov
    scale = 1.0 / np.sqrt(data.p)
    flat = data.D.reshape(data.n, -1)
    for g, idx in enumerate(group_indices(data.group_of, data.n_groups)):
        mu[idx] += scale * (flat[idx] @ coeff.beta[g].ravel())
    return mu


def log_likelihood(y: np.ndarray, mu: np.ndarray, sigma2: float) -> float:
    """Gaussian log likelihood with its normalizing constant."""
    if sigma2 <= 0:
        raise ValueError("error variance must be positive")
    resid = y - mu
    n = y.shape[0]
    return float(
        -0.5 * n * np.log(2.0 * np.pi * sigma2) - 0.5 * (resid @ resid) / sigma2
    )


def log_a_prior(a: float, d: int, d1: float, d2: float) -> float:
    """Log density of the inverse length-scale whose d-th power is Gamma."""
    if a <= 0:
        return -np.inf
    ad = a**d
    log_gamma = d1 * np.log(d2) - gammaln(d1) + (d1 - 1.0) * np.log(ad) - d2 * ad
    # change of variables t = a^d
    return float(log_gamma + np.log(d) + (d - 1.0) * np.log(a))


def log_sigma2_prior(sigma2: float, c1: float, c2: float) -> float:
    """Log density of the error variance whose inverse is Gamma(c1, c2)."""
    if sigma2 <= 0:
        return -np.inf
    tau = 1.0 / sigma2
    return float(c1 * np.log(c2) - gammaln(c1) + (c1 + 1.0) * np.log(tau) - c2 * tau)


def _normal_logpdf_sum(x: np.ndarray, var: float) -> float:
    x = np.atleast_1d(x)
    return float(-0.5 * x.size * np.log(2.0 * np.pi * var) - 0.5 * (x * x).sum() / var)


def invwishart_logpdf(X: np.ndarray, df: float, S: np.ndarray) -> float:
    """Inverse-Wishart log density (full normalizing constant)."""
    q = X.shape[0]
    chol_x = np.linalg.cholesky(X)
    chol_s = np.linalg.cholesky(S)
    logdet_x = 2.0 * np.log(np.diag(chol_x)).sum()
    logdet_s = 2.0 * np.log(np.diag(chol_s)).sum()
    half = solve_triangular(chol_x, chol_s, lower=True)
    trace = float((half * half).sum())  # tr(S X^{-1})
    return float(
        0.5 * df * logdet_s
        - 0.5 * df * q * np.log(2.0)
        - multigammaln(0.5 * df, q)
        - 0.5 * (df + q + 1.0) * logdet_x
        - 0.5 * trace
    )


def _scalar_prior_value(state: ModelState, data: VectorImageDataset, hyper: Hyper) -> float:
    """Sum of the non-field prior log densities at the current state."""
    d = data.grid.d
    lams = np.append(state.lambda_group, state.lambda_shared)
    if np.any(lams < 0) or np.any(lams > hyper.R):
        return -np.inf
    value = -lams.size * np.log(hyper.R)
    value += log_a_prior(state.a_shared, d, hyper.d1, hyper.d2)
    for g in range(state.n_groups):
        value += log_a_prior(float(state.a_group[g]), d, hyper.d1, hyper.d2)
    value += log_sigma2_prior(state.sigma2, hyper.c1, hyper.c2)
    value += _normal_logpdf_sum(state.b0, hyper.sigma_b2)
    if state.b_cov.size:
        value += _normal_logpdf_sum(state.b_cov, hyper.sigma_b2)
    value += invwishart_logpdf(state.sigma_mat, hyper.nu, hyper.scale_matrix(data.q))
    return float(value)


def log_posterior_value(
    state: ModelState,
    data: VectorImageDataset,
    basis: np.ndarray,
    chol_cache: KernelCholeskyCache,
    hyper: Hyper,
) -> float:
    """Full log posterior without the gradient bookkeeping."""
    coeff = materialize_coefficients(state, basis)
    mu = predict_mean(coeff, data, state)
    value = log_likelihood(data.y, mu, state.sigma2)
    chol_shared = chol_cache.get("shared", state.a_shared)
    value += gp_log_prior(state.beta_knots, chol_shared, state.sigma_mat)[0]
    for g in range(state.n_groups):
        chol_g = chol_cache.get(f"group{g}", float(state.a_group[g]))
        value += gp_log_prior(state.alpha_knots[g], chol_g, state.sigma_mat)[0]
    return float(value + _scalar_prior_value(state, data, hyper))


def log_posterior_and_grad(
    state: ModelState,
    data: VectorImageDataset,
    basis: np.ndarray,
    chol_cache: KernelCholeskyCache,
    hyper: Hyper,
):
    """Full log posterior and its gradient w.r.t. every knot coefficient.

    All prior terms enter the value (with normalizing constants) but
    only knot-coefficient gradients are returned, as a pair
    ``(grad_shared, grad_groups)`` of ``(L, q)`` and ``(G, L, q)``
    arrays.
    """
    G = state.n_groups
    coeff, internals = materialize_coefficients(state, basis, return_internals=True)
    mu = predict_mean(coeff, data, state)
    value = log_likelihood(data.y, mu, state.sigma2)

    # gradient of the likelihood w.r.t. the materialized coefficients
    scale = 1.0 / np.sqrt(data.p)
    flat = data.D.reshape(data.n, -1)
    weights = (data.y - mu) / state.sigma2
    grad_shared = np.zeros_like(state.beta_knots)
    grad_groups = np.zeros_like(state.alpha_knots)
    for g, idx in enumerate(group_indices(data.group_of, data.n_groups)):
        s_g = (flat[idx].T @ weights[idx]).reshape(data.p, data.q) * scale
        g_u, g_at = kernels.double_threshold_backward(
            s_g, internals["u"][g], internals["u_norm"][g],
            internals["at"][g], internals["a_norm"][g],
            state.lambda_shared, float(state.lambda_group[g]),
        )
        grad_shared += basis.T @ g_u
        grad_groups[g] = basis.T @ g_at

    # latent-field priors and their gradients
    sigma_mat = state.sigma_mat
    chol_shared = chol_cache.get("shared", state.a_shared)
    lp, gp = gp_log_prior(state.beta_knots, chol_shared, sigma_mat)
    value += lp
    grad_shared += gp
    for g in range(G):
        chol_g = chol_cache.get(f"group{g}", float(state.a_group[g]))
        lp, gp = gp_log_prior(state.alpha_knots[g], chol_g, sigma_mat)
        value += lp
        grad_groups[g] += gp

    value += _scalar_prior_value(state, data, hyper)
    return value, grad_shared, grad_groups
