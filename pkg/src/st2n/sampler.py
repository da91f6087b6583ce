"""Posterior sampler: HMC over latent knot fields, Metropolis-Hastings
for kernel scales and thresholds, Gibbs for the conjugate blocks.

One chain mutates its state single-threadedly and is bit-reproducible
given its seed.  Per iteration the update schedule is fixed:

1. HMC on the shared knot field, then on each group's field;
2. random-walk MH on ``log a`` for the shared and each group kernel;
3. reflected random-walk MH on the shared and each group threshold;
4. Gibbs draws for the error variance, intercepts/covariates, and the
   cross-component covariance.

During burn-in, every 100 iterations each HMC step size (and each MH
proposal scale) is multiplied by 1.1 when that block's windowed
acceptance exceeds ``target + 0.1`` and divided by 1.1 when it falls
below ``target - 0.1``; all scales freeze after burn-in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from st2n import kernels
from st2n.fields import KernelCholeskyCache, KnotSet, gp_log_prior, robust_cholesky
from st2n.model import (
    Hyper,
    ModelState,
    VectorImageDataset,
    group_indices,
    log_posterior_value,
)

__all__ = [
    "SamplerConfig",
    "ChainRecord",
    "leapfrog",
    "hmc_update_block",
    "mh_update_a",
    "mh_update_threshold",
    "reflect_interval",
    "gibbs_sigma2",
    "gibbs_intercepts_covariates",
    "gibbs_sigma_mat",
    "sample_invwishart",
    "initial_state",
    "run_chain",
    "block_names",
]

MAX_ENERGY_ERROR = 1000.0
ADAPT_WINDOW = 100
ADAPT_FACTOR = 1.1
ADAPT_SLACK = 0.1


@dataclass
class SamplerConfig:
    n_iter: int = 10000
    n_burnin: int = 5000
    thin: int = 1
    leapfrog_steps: int = 30
    hmc_step_init: float = 0.01
    target_accept: float = 0.65
    mh_scale_a: float = 0.2
    mh_scale_lambda: float = 0.25
    seed: int = 0
    hyper: Hyper = field(default_factory=Hyper)

    def validate(self) -> None:
        if self.n_iter < 1 or not 0 <= self.n_burnin < self.n_iter:
            raise ValueError("need 0 <= n_burnin < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if self.hmc_step_init <= 0:
            raise ValueError("hmc_step_init must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0,1)")
        if self.mh_scale_a <= 0 or self.mh_scale_lambda <= 0:
            raise ValueError("MH proposal scales must be positive")
        if self.hyper.R <= 0:
            raise ValueError("threshold bound R must be positive")

    def is_recorded(self, iteration: int) -> bool:
        """Whether the (0-based) iteration index lands on a saved record."""
        return iteration >= self.n_burnin and (iteration - self.n_burnin) % self.thin == 0


@dataclass
class ChainRecord:
    iteration: int
    state: ModelState
    log_posterior: float
    accepted: np.ndarray  # (3 + 3G,) 0/1 flags in ``block_names`` order


def block_names(n_groups: int) -> list[str]:
    names = ["hmc_shared"] + [f"hmc_group{g}" for g in range(n_groups)]
    names += ["mh_a"] + [f"mh_a{g}" for g in range(n_groups)]
    names += ["mh_lambda"] + [f"mh_lambda{g}" for g in range(n_groups)]
    return names


# ---------------------------------------------------------------------------
# HMC


def leapfrog(x0, mom0, step: float, n_steps: int, eval_fn):
    """Leapfrog trajectory for potential ``eval_fn`` (identity mass).

    ``eval_fn(x) -> (U, gradU)``.  Returns ``(x, mom, U, ok)``; ``ok``
    is False when the trajectory hit non-finite energy or gradients.
    """
    U, grad = eval_fn(x0)
    if not (np.isfinite(U) and np.all(np.isfinite(grad))):
        return x0, mom0, U, False
    x = np.array(x0, dtype=float, copy=True)
    mom = mom0 - 0.5 * step * grad
    for step_idx in range(n_steps):
        x = x + step * mom
        U, grad = eval_fn(x)
        if not (np.isfinite(U) and np.all(np.isfinite(grad))):
            return x, mom, U, False
        if step_idx < n_steps - 1:
            mom = mom - step * grad
    mom = mom - 0.5 * step * grad
    return x, mom, U, True


def hmc_update_block(coeffs, eval_fn, step: float, n_leap: int, rng):
    """One HMC proposal for a single knot-field block.

    Divergent trajectories (non-finite energy or Hamiltonian error above
    ``MAX_ENERGY_ERROR``) reject and leave the block unchanged.
    """
    mom0 = rng.standard_normal(coeffs.shape)
    U0, _ = eval_fn(coeffs)
    h0 = U0 + 0.5 * float((mom0 * mom0).sum())
    x, mom, U1, ok = leapfrog(coeffs, mom0, step, n_leap, eval_fn)
    if not ok or not np.isfinite(U1):
        return coeffs, False
    h1 = U1 + 0.5 * float((mom * mom).sum())
    delta = h1 - h0
    if not np.isfinite(delta) or delta > MAX_ENERGY_ERROR:
        return coeffs, False
    if np.log(rng.uniform()) < -delta:
        return x, True
    return coeffs, False


# ---------------------------------------------------------------------------
# Metropolis-Hastings for kernel scales and thresholds


def _log_a_target(log_a: float, dim: int, d1: float, d2: float) -> float:
    # prior of a (gamma on a^dim) expressed in the log-a parameterization
    return d1 * dim * log_a - d2 * np.exp(dim * log_a)


def mh_update_a(
    a: float,
    coeffs: np.ndarray,
    knots: KnotSet,
    sigma_mat: np.ndarray,
    dim: int,
    d1: float,
    d2: float,
    scale: float,
    rng,
    chol: np.ndarray | None = None,
):
    """Random walk on ``log a`` against the field prior it parameterizes.

    Returns ``(a, chol, accepted)`` where ``chol`` is the kernel factor
    consistent with the returned ``a``.
    """
    if chol is None:
        chol = robust_cholesky(knots, a)
    lp0, _ = gp_log_prior(coeffs, chol, sigma_mat)
    log_a0 = np.log(a)
    t0 = _log_a_target(log_a0, dim, d1, d2) + lp0
    log_a1 = log_a0 + scale * rng.standard_normal()
    a1 = float(np.exp(log_a1))
    try:
        chol1 = robust_cholesky(knots, a1)
    except np.linalg.LinAlgError:
        rng.uniform()  # keep the draw count fixed regardless of outcome
        return a, chol, False
    lp1, _ = gp_log_prior(coeffs, chol1, sigma_mat)
    t1 = _log_a_target(log_a1, dim, d1, d2) + lp1
    if np.log(rng.uniform()) < t1 - t0:
        return a1, chol1, True
    return a, chol, False


def reflect_interval(x: float, lo: float, hi: float) -> float:
    """Fold a real number into [lo, hi] by reflection at both ends."""
    width = hi - lo
    z = np.mod(x - lo, 2.0 * width)
    if z > width:
        z = 2.0 * width - z
    return float(lo + z)


def mh_update_threshold(
    lam: float, R: float, scale: float, delta_loglik: Callable[[float], float], rng
):
    """Reflected random walk for a threshold with a Unif(0, R) prior.

    ``delta_loglik(lam_new)`` must return the log-likelihood change of
    the move; the flat prior and the symmetric reflected proposal cancel.
    """
    prop = reflect_interval(lam + scale * rng.standard_normal(), 0.0, R)
    dll = delta_loglik(prop)
    if np.log(rng.uniform()) < dll:
        return prop, True
    return lam, False


# ---------------------------------------------------------------------------
# Gibbs blocks


def gibbs_sigma2(y: np.ndarray, mu: np.ndarray, c1: float, c2: float, rng) -> float:
    """Error variance from its conditional (gamma on the precision)."""
    resid = y - mu
    shape = c1 + 0.5 * y.size
    rate = c2 + 0.5 * float(resid @ resid)
    tau = rng.gamma(shape, 1.0 / rate)
    return 1.0 / tau


def gibbs_intercepts_covariates(
    data: VectorImageDataset,
    img: np.ndarray,
    b_cov: np.ndarray,
    sigma2: float,
    sigma_b2: float,
    rng,
    gidx: list[np.ndarray] | None = None,
):
    """Conditional Gaussian draws for the intercepts, then the covariates.

    ``img`` is the image contribution to the mean for every subject.
    """
    if gidx is None:
        gidx = group_indices(data.group_of, data.n_groups)
    b0 = np.empty(data.n_groups)
    base = data.y - data.X @ b_cov - img
    for g, idx in enumerate(gidx):
        prec = idx.size / sigma2 + 1.0 / sigma_b2
        mean = (base[idx].sum() / sigma2) / prec
        b0[g] = mean + rng.standard_normal() / np.sqrt(prec)
    if data.n_covariates == 0:
        return b0, b_cov.copy()
    resid = data.y - b0[data.group_of] - img
    prec_mat = data.X.T @ data.X / sigma2 + np.eye(data.n_covariates) / sigma_b2
    chol = cholesky(prec_mat, lower=True)
    rhs = data.X.T @ resid / sigma2
    mean = solve_triangular(
        chol.T, solve_triangular(chol, rhs, lower=True), lower=False
    )
    z = rng.standard_normal(data.n_covariates)
    draw = mean + solve_triangular(chol.T, z, lower=False)
    return b0, draw


def sample_invwishart(df: float, scale: np.ndarray, rng) -> np.ndarray:
    """Inverse-Wishart draw via the Bartlett factorization.

    Draw order is fixed (diagonal chi-square entries row by row, then
    the lower triangle row by row) so chains are reproducible.
    """
    q = scale.shape[0]
    if df <= q - 1:
        raise ValueError("degrees of freedom too small for the dimension")
    chol_scale = np.linalg.cholesky(scale)
    A = np.zeros((q, q))
    for i in range(q):
        A[i, i] = np.sqrt(rng.chisquare(df - i))
        for j in range(i):
            A[i, j] = rng.standard_normal()
    half = solve_triangular(A, chol_scale.T, lower=True)  # A^{-1} L_S^T
    draw = half.T @ half
    return 0.5 * (draw + draw.T)


def gibbs_sigma_mat(
    coeff_list: list[np.ndarray],
    chol_list: list[np.ndarray],
    nu: float,
    S: np.ndarray,
    rng,
) -> np.ndarray:
    """Cross-component covariance from its inverse-Wishart conditional.

    The scatter accumulates every latent field (shared plus one per
    group), each whitened by its own kernel factor.
    """
    scatter = np.array(S, dtype=float, copy=True)
    n_knots = coeff_list[0].shape[0]
    for C, chol_k in zip(coeff_list, chol_list):
        W = solve_triangular(chol_k, C, lower=True)
        scatter += W.T @ W
    scatter = 0.5 * (scatter + scatter.T)
    df = nu + n_knots * len(coeff_list)
    return sample_invwishart(df, scatter, rng)


# ---------------------------------------------------------------------------
# Chain driver


class _Evaluator:
    """Per-chain immutable dataset views plus the kernel Cholesky cache."""

    def __init__(self, data: VectorImageDataset, basis: np.ndarray, knots: KnotSet):
        self.data = data
        self.basis = np.ascontiguousarray(basis)
        self.basis_t = np.ascontiguousarray(basis.T)
        self.gidx = group_indices(data.group_of, data.n_groups)
        flat = data.D.reshape(data.n, -1)
        self.dflat = [np.ascontiguousarray(flat[idx]) for idx in self.gidx]
        self.yg = [data.y[idx] for idx in self.gidx]
        self.xg = [data.X[idx] for idx in self.gidx]
        self.inv_sqrt_p = 1.0 / np.sqrt(data.p)
        self.chol_cache = KernelCholeskyCache(knots)
        self.knots = knots

    def image_contribution(self, g: int, beta_g: np.ndarray) -> np.ndarray:
        return (self.dflat[g] @ beta_g.ravel()) * self.inv_sqrt_p


class _FieldCache:
    """Materialized fields kept consistent with the current state."""

    def __init__(self, ev: _Evaluator, state: ModelState):
        G = state.n_groups
        p = ev.data.p
        q = ev.data.q
        self.bt = np.zeros((p, q))
        self.at = np.zeros((G, p, q))
        self.alpha = np.zeros((G, p, q))
        self.a_norm = np.zeros((G, p))
        self.u = np.zeros((G, p, q))
        self.u_norm = np.zeros((G, p))
        self.beta = np.zeros((G, p, q))
        self.img = [np.zeros(idx.size) for idx in ev.gidx]
        self.refresh_all(ev, state)

    def refresh_all(self, ev: _Evaluator, state: ModelState) -> None:
        self.bt = ev.basis @ state.beta_knots
        for g in range(state.n_groups):
            self.refresh_group(ev, state, g)

    def refresh_group(self, ev: _Evaluator, state: ModelState, g: int) -> None:
        self.at[g] = ev.basis @ state.alpha_knots[g]
        (
            self.beta[g],
            self.u[g],
            self.u_norm[g],
            self.alpha[g],
            self.a_norm[g],
        ) = kernels.double_threshold_rows(
            self.bt, self.at[g], state.lambda_shared, float(state.lambda_group[g])
        )
        self.img[g] = ev.image_contribution(g, self.beta[g])

    def refresh_outer(self, ev: _Evaluator, state: ModelState) -> None:
        # shared threshold changed: u fields unchanged, rethreshold only
        for g in range(state.n_groups):
            self.beta[g], _ = kernels.st2n_rows(self.u[g], state.lambda_shared)
            self.img[g] = ev.image_contribution(g, self.beta[g])

    def mu(self, ev: _Evaluator, state: ModelState) -> np.ndarray:
        mu = state.b0[ev.data.group_of] + ev.data.X @ state.b_cov
        for g, idx in enumerate(ev.gidx):
            mu[idx] += self.img[g]
        return mu


def _gaussian_ll(resid: np.ndarray, sigma2: float) -> float:
    return float(
        -0.5 * resid.size * np.log(2.0 * np.pi * sigma2)
        - 0.5 * (resid @ resid) / sigma2
    )


def _shared_eval(ev: _Evaluator, cache: _FieldCache, state: ModelState, ybase):
    lam = state.lambda_shared
    sigma2 = state.sigma2
    chol = ev.chol_cache.get("shared", state.a_shared)
    G = state.n_groups

    def eval_fn(coeffs):
        bt = ev.basis @ coeffs
        ll = 0.0
        g_bt = np.zeros_like(bt)
        for g in range(G):
            u = bt + cache.alpha[g]
            beta, u_norm = kernels.st2n_rows(u, lam)
            resid = ybase[g] - ev.image_contribution(g, beta)
            ll += _gaussian_ll(resid, sigma2)
            s = (ev.dflat[g].T @ (resid / sigma2)).reshape(bt.shape) * ev.inv_sqrt_p
            g_bt += kernels.jvp_rows(u, u_norm, lam, s)
        lp, gp = gp_log_prior(coeffs, chol, state.sigma_mat)
        return -(ll + lp), -(ev.basis_t @ g_bt + gp)

    return eval_fn


def _whitened(eval_fn, chol_k):
    """Reparameterize a centered-coefficient potential by the kernel factor.

    With ``C = chol_k @ W`` the map has constant Jacobian, so HMC on the
    wrapped potential targets the same distribution over ``C`` while the
    integrator works on well-conditioned coordinates.
    """

    def wrapped(w):
        value, grad = eval_fn(chol_k @ w)
        return value, chol_k.T @ grad

    return wrapped


def _group_eval(ev: _Evaluator, cache: _FieldCache, state: ModelState, ybase, g: int):
    lam = state.lambda_shared
    lam_g = float(state.lambda_group[g])
    sigma2 = state.sigma2
    chol = ev.chol_cache.get(f"group{g}", float(state.a_group[g]))

    def eval_fn(coeffs):
        at = ev.basis @ coeffs
        beta, u, u_norm, alpha, a_norm = kernels.double_threshold_rows(
            cache.bt, at, lam, lam_g
        )
        resid = ybase[g] - ev.image_contribution(g, beta)
        ll = _gaussian_ll(resid, sigma2)
        s = (ev.dflat[g].T @ (resid / sigma2)).reshape(at.shape) * ev.inv_sqrt_p
        _, g_at = kernels.double_threshold_backward(s, u, u_norm, at, a_norm, lam, lam_g)
        lp, gp = gp_log_prior(coeffs, chol, state.sigma_mat)
        return -(ll + lp), -(ev.basis_t @ g_at + gp)

    return eval_fn


def initial_state(
    config: SamplerConfig,
    data: VectorImageDataset,
    knots: KnotSet,
    rng,
    basis: np.ndarray | None = None,
) -> ModelState:
    """Starting point: small live fields, data-scaled variance terms.

    Knot coefficients start at a draw from the smoothness prior, scaled
    so the expanded voxel field has RMS 0.1.  An i.i.d. start has mass
    on the kernel's near-null directions (which inflate the whitened
    scatter feeding the first cross-component covariance draw by the
    inverse nugget), and an unscaled prior draw expands through the
    taper's unnormalized row sums into order-one voxel fields whose
    spurious signal destabilizes the first likelihood gradients.
    """
    q = data.q
    G = data.n_groups
    n_knots = knots.L
    lam0 = 0.1 * config.hyper.R
    b0 = np.array([data.y[idx].mean() for idx in group_indices(data.group_of, G)])
    sigma2 = float(max(np.var(data.y), 1e-6))
    chol0 = robust_cholesky(knots, 1.0)

    def small_field_draw():
        coeffs = chol0 @ rng.standard_normal((n_knots, q))
        if basis is not None:
            field = basis @ coeffs
            rms = float(np.sqrt((field * field).mean()))
        else:
            rms = float(np.sqrt((coeffs * coeffs).mean()))
        return coeffs * (0.1 / max(rms, 1e-12))

    beta0 = small_field_draw()
    alpha0 = np.empty((G, n_knots, q))
    for g in range(G):
        alpha0[g] = small_field_draw()
    return ModelState(
        beta_knots=beta0,
        alpha_knots=alpha0,
        a_shared=1.0,
        a_group=np.ones(G),
        lambda_shared=lam0,
        lambda_group=np.full(G, lam0),
        sigma_mat=np.eye(q),
        sigma2=sigma2,
        b0=b0,
        b_cov=np.zeros(data.n_covariates),
    )


class _Adapter:
    """Windowed acceptance counters driving the +/-10% scale rule."""

    def __init__(self, n_scales: int):
        self.tries = np.zeros(n_scales, dtype=np.int64)
        self.accepts = np.zeros(n_scales, dtype=np.int64)

    def tally(self, idx: int, accepted: bool) -> None:
        self.tries[idx] += 1
        if accepted:
            self.accepts[idx] += 1

    def adapt(self, scales: np.ndarray, target: float) -> None:
        for i in range(scales.size):
            if self.tries[i] == 0:
                continue
            rate = self.accepts[i] / self.tries[i]
            if rate > target + ADAPT_SLACK:
                scales[i] *= ADAPT_FACTOR
            elif rate < target - ADAPT_SLACK:
                scales[i] /= ADAPT_FACTOR
        self.tries[:] = 0
        self.accepts[:] = 0


def run_chain(
    config: SamplerConfig,
    data: VectorImageDataset,
    basis: np.ndarray,
    knots: KnotSet,
    init: ModelState | None = None,
    yield_burnin: bool = False,
) -> Iterator[ChainRecord]:
    """Drive one chain; yields :class:`ChainRecord` snapshots.

    By default only post-burn-in iterations at the thinning stride are
    yielded; ``yield_burnin`` switches to yielding every iteration (the
    CLI uses this to build the full trace).  Deterministic given the
    config seed.
    """
    config.validate()
    hyper = config.hyper
    G = data.n_groups
    dim = data.grid.d
    ev = _Evaluator(data, basis, knots)
    rng = np.random.default_rng(config.seed)
    state = (
        init.copy()
        if init is not None
        else initial_state(config, data, knots, rng, basis=basis)
    )
    state.validate(hyper.R)
    if state.beta_knots.shape != (knots.L, data.q) or state.alpha_knots.shape != (
        G,
        knots.L,
        data.q,
    ):
        raise ValueError("initial state does not match knot count or data shape")
    S_mat = hyper.scale_matrix(data.q)
    cache = _FieldCache(ev, state)

    n_blocks = 1 + G
    hmc_steps = np.full(n_blocks, config.hmc_step_init)
    a_scales = np.full(n_blocks, config.mh_scale_a)
    lam_scales = np.full(n_blocks, config.mh_scale_lambda)
    hmc_adapt = _Adapter(n_blocks)
    a_adapt = _Adapter(n_blocks)
    lam_adapt = _Adapter(n_blocks)

    for it in range(config.n_iter):
        flags = np.zeros(3 * n_blocks)
        ybase = [
            ev.yg[g] - state.b0[g] - ev.xg[g] @ state.b_cov for g in range(G)
        ]

        # HMC: shared field, then each group field.  Each block runs in
        # whitened coordinates (knot coefficients pre-multiplied by the
        # inverse kernel factor): the target is unchanged up to a
        # constant Jacobian, but the prior curvature the integrator sees
        # is bounded by the cross-component covariance instead of the
        # kernel's condition number, which keeps one step size workable
        # across the whole chain.
        chol_shared = ev.chol_cache.get("shared", state.a_shared)
        eval_fn = _whitened(_shared_eval(ev, cache, state, ybase), chol_shared)
        w0 = solve_triangular(chol_shared, state.beta_knots, lower=True)
        new_w, acc = hmc_update_block(
            w0, eval_fn, hmc_steps[0], config.leapfrog_steps, rng
        )
        flags[0] = acc
        hmc_adapt.tally(0, acc)
        if acc:
            state.beta_knots = chol_shared @ new_w
            cache.refresh_all(ev, state)
        for g in range(G):
            chol_g = ev.chol_cache.get(f"group{g}", float(state.a_group[g]))
            eval_fn = _whitened(_group_eval(ev, cache, state, ybase, g), chol_g)
            w0 = solve_triangular(chol_g, state.alpha_knots[g], lower=True)
            new_w, acc = hmc_update_block(
                w0, eval_fn, hmc_steps[1 + g], config.leapfrog_steps, rng,
            )
            flags[1 + g] = acc
            hmc_adapt.tally(1 + g, acc)
            if acc:
                state.alpha_knots[g] = chol_g @ new_w
                cache.refresh_group(ev, state, g)

        # MH on the kernel inverse length-scales
        a_new, chol, acc = mh_update_a(
            state.a_shared, state.beta_knots, knots, state.sigma_mat, dim,
            hyper.d1, hyper.d2, a_scales[0], rng,
            chol=ev.chol_cache.get("shared", state.a_shared),
        )
        flags[n_blocks] = acc
        a_adapt.tally(0, acc)
        if acc:
            state.a_shared = a_new
            ev.chol_cache.put("shared", a_new, chol)
        for g in range(G):
            a_new, chol, acc = mh_update_a(
                float(state.a_group[g]), state.alpha_knots[g], knots,
                state.sigma_mat, dim, hyper.d1, hyper.d2, a_scales[1 + g], rng,
                chol=ev.chol_cache.get(f"group{g}", float(state.a_group[g])),
            )
            flags[n_blocks + 1 + g] = acc
            a_adapt.tally(1 + g, acc)
            if acc:
                state.a_group[g] = a_new
                ev.chol_cache.put(f"group{g}", a_new, chol)

        # MH on the thresholds
        def delta_shared(lam_new: float) -> float:
            delta = 0.0
            for g in range(G):
                beta_new, _ = kernels.st2n_rows(cache.u[g], lam_new)
                resid_new = ybase[g] - ev.image_contribution(g, beta_new)
                resid_old = ybase[g] - cache.img[g]
                delta += _gaussian_ll(resid_new, state.sigma2) - _gaussian_ll(
                    resid_old, state.sigma2
                )
            return delta

        lam_new, acc = mh_update_threshold(
            state.lambda_shared, hyper.R, lam_scales[0], delta_shared, rng
        )
        flags[2 * n_blocks] = acc
        lam_adapt.tally(0, acc)
        if acc:
            state.lambda_shared = lam_new
            cache.refresh_outer(ev, state)

        for g in range(G):

            def delta_group(lam_new: float, g: int = g) -> float:
                alpha_new, _ = kernels.st2n_rows(cache.at[g], lam_new)
                beta_new, _ = kernels.st2n_rows(
                    cache.bt + alpha_new, state.lambda_shared
                )
                resid_new = ybase[g] - ev.image_contribution(g, beta_new)
                resid_old = ybase[g] - cache.img[g]
                return _gaussian_ll(resid_new, state.sigma2) - _gaussian_ll(
                    resid_old, state.sigma2
                )

            lam_new, acc = mh_update_threshold(
                float(state.lambda_group[g]), hyper.R, lam_scales[1 + g],
                delta_group, rng,
            )
            flags[2 * n_blocks + 1 + g] = acc
            lam_adapt.tally(1 + g, acc)
            if acc:
                state.lambda_group[g] = lam_new
                cache.refresh_group(ev, state, g)

        # Gibbs blocks
        mu = cache.mu(ev, state)
        state.sigma2 = gibbs_sigma2(data.y, mu, hyper.c1, hyper.c2, rng)
        img_full = np.zeros(data.n)
        for g, idx in enumerate(ev.gidx):
            img_full[idx] = cache.img[g]
        state.b0, state.b_cov = gibbs_intercepts_covariates(
            data, img_full, state.b_cov, state.sigma2, hyper.sigma_b2, rng, ev.gidx
        )
        coeff_list = [state.beta_knots] + [state.alpha_knots[g] for g in range(G)]
        chol_list = [ev.chol_cache.get("shared", state.a_shared)] + [
            ev.chol_cache.get(f"group{g}", float(state.a_group[g])) for g in range(G)
        ]
        state.sigma_mat = gibbs_sigma_mat(coeff_list, chol_list, hyper.nu, S_mat, rng)

        # adaptation during burn-in only
        if it < config.n_burnin and (it + 1) % ADAPT_WINDOW == 0:
            hmc_adapt.adapt(hmc_steps, config.target_accept)
            a_adapt.adapt(a_scales, config.target_accept)
            lam_adapt.adapt(lam_scales, config.target_accept)

        if yield_burnin or config.is_recorded(it):
            value = log_posterior_value(state, data, basis, ev.chol_cache, hyper)
            yield ChainRecord(
                iteration=it,
                state=state.copy(),
                log_posterior=float(value),
                accepted=flags.copy(),
            )
