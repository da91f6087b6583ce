"""Synthetic data generators: unit-vector (von Mises-Fisher) predictors,
correlated Gaussian-process predictors, region-based ground-truth
coefficient fields, and response synthesis.

All generators are deterministic given their seed; predictor noise and
response noise come from separate child streams so the mean structure is
invariant to the error-variance argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky

from st2n.fields import SpatialGrid, make_grid
from st2n.model import VectorImageDataset

__all__ = [
    "SimTruth",
    "sample_vmf",
    "make_truth",
    "synthesize_responses",
    "gen_case1",
    "gen_case2",
    "gen_toy",
]

VMF_KAPPA = 30.0
GP_LENGTHSCALES = (3.0, 5.0, 7.0)  # grid-index units
_MIX_SEED = 73  # fixed draw behind the predictor mixing matrix


@dataclass
class SimTruth:
    """Ground truth behind a simulated dataset.

    ``beta0[g, j] = r[g, j] * eta[j]`` with unit directions shared
    across groups, so active voxels are similar-effect locations by
    construction.  ``seed`` reconstructs the response-noise stream.
    """

    beta0: np.ndarray      # (G, p, q)
    eta: np.ndarray        # (p, q) unit rows
    r: np.ndarray          # (G, p) nonnegative magnitudes
    b0_true: np.ndarray    # (G,)
    sigma2_true: float
    seed: int


def sample_vmf(mu: np.ndarray, kappa: float, rng, size: int | None = None) -> np.ndarray:
    """Exact von Mises-Fisher draws on the 2-sphere.

    The cosine against the mean direction is drawn by inverting its CDF
    (closed form in dimension 3), the tangent direction uniformly, and
    the pair is rotated onto ``mu``.  ``mu`` may be a single unit vector
    or an array of row vectors; with ``size`` given, ``size`` draws are
    generated per row.
    """
    mu = np.asarray(mu, dtype=float)
    if kappa <= 0:
        raise ValueError("concentration must be positive")
    single = mu.ndim == 1
    mus = mu[None, :] if single else mu
    if mus.shape[-1] != 3:
        raise ValueError("mean directions must be 3-dimensional")
    if not np.allclose(np.linalg.norm(mus, axis=-1), 1.0, atol=1e-10):
        raise ValueError("mean directions must have unit norm")
    n = 1 if size is None else int(size)
    p = mus.shape[0]

    u = rng.uniform(size=(n, p))
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    z = rng.standard_normal((n, p, 3))
    proj = (z * mus[None, :, :]).sum(axis=2, keepdims=True)
    tang = z - proj * mus[None, :, :]
    tnorm = np.linalg.norm(tang, axis=2, keepdims=True)
    # a zero tangent draw has probability zero; fall back to an arbitrary
    # orthogonal direction rather than dividing by zero
    degenerate = tnorm[..., 0] < 1e-300
    if np.any(degenerate):
        alt = np.zeros_like(tang)
        alt[..., 0] = -mus[None, :, 1]
        alt[..., 1] = mus[None, :, 0]
        alt_norm = np.linalg.norm(alt, axis=2, keepdims=True)
        bad = alt_norm[..., 0] < 1e-12
        alt[bad] = [0.0, -1.0, 0.0]
        tang = np.where(degenerate[..., None], alt, tang)
        tnorm = np.linalg.norm(tang, axis=2, keepdims=True)
    tang = tang / tnorm
    out = np.sqrt(np.maximum(0.0, 1.0 - w * w))[..., None] * tang + w[..., None] * mus
    if single:
        out = out[:, 0, :]
    if size is None:
        out = out[0]
    return out


def _fractional_block(dims, fr0, fr1, fc0, fc1):
    r0 = int(round(fr0 * dims[0]))
    r1 = int(round(fr1 * dims[0]))
    c0 = int(round(fc0 * dims[1]))
    c1 = int(round(fc1 * dims[1]))
    return r0, r1, c0, c1


def _block_magnitude(dims, block) -> np.ndarray:
    """Plateau-1 magnitude with a linear one-voxel taper at the block edge."""
    r0, r1, c0, c1 = block
    mag = np.zeros(dims)
    for i in range(r0, r1):
        for j in range(c0, c1):
            depth = min(i - r0, r1 - 1 - i, j - c0, c1 - 1 - j)
            mag[i, j] = min(1.0, (depth + 1) / 2.0)
    return mag.ravel()


def _rotating_unit_field(grid: SpatialGrid, q: int) -> np.ndarray:
    loc = grid.locations
    if q == 1:
        return np.ones((grid.p, 1))
    phase = np.pi * (loc[:, 0] + (loc[:, 1] if grid.d > 1 else 0.0))
    eta = np.full((grid.p, q), 0.5)
    eta[:, 0] = np.cos(phase)
    eta[:, 1] = np.sin(phase)
    return eta / np.linalg.norm(eta, axis=1, keepdims=True)


def make_truth(
    layout: str, n_groups: int, grid: SpatialGrid, q: int = 3, sigma2: float = 1.0,
    seed: int = 0,
) -> SimTruth:
    """Analytic region-based ground truth on a 2-D grid.

    ``blocks3`` places four disjoint rectangles: one shared by every
    group (the similar-effect region) and three assigned cyclically as
    group-specific regions.  ``toy`` places one centered block on which
    every group is active.
    """
    if grid.d != 2:
        raise ValueError("truth layouts are defined on 2-D grids")
    dims = grid.dims
    if layout == "blocks3":
        # D is active for every group; A/B/C are group-specific, so D is
        # the lone similar-effect region while the others mark contrasts
        blocks = [
            _fractional_block(dims, 0.1, 0.4, 0.1, 0.4),
            _fractional_block(dims, 0.1, 0.4, 0.6, 0.9),
            _fractional_block(dims, 0.6, 0.9, 0.1, 0.4),
            _fractional_block(dims, 0.6, 0.9, 0.6, 0.9),
        ]
        active = [(g % 3, 3) for g in range(n_groups)]
    elif layout == "toy":
        blocks = [_fractional_block(dims, 0.2, 0.8, 0.2, 0.8)]
        active = [(0,) for _ in range(n_groups)]
    else:
        raise ValueError(f"unknown truth layout {layout!r}")
    mags = [_block_magnitude(dims, blk) for blk in blocks]
    r = np.zeros((n_groups, grid.p))
    for g, blocks_of_g in enumerate(active):
        for b in blocks_of_g:
            r[g] += mags[b]
    eta = _rotating_unit_field(grid, q)
    beta0 = r[:, :, None] * eta[None, :, :]
    return SimTruth(
        beta0=beta0, eta=eta, r=r, b0_true=np.zeros(n_groups),
        sigma2_true=float(sigma2), seed=int(seed),
    )


def _noise_rng(seed: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))


def _predictor_rng(seed: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))


def synthesize_responses(
    D: np.ndarray, group_of: np.ndarray, truth: SimTruth, X: np.ndarray | None = None,
    b_cov: np.ndarray | None = None,
) -> np.ndarray:
    """Responses implied by the truth, regenerating noise from its seed."""
    n, p, _ = D.shape
    flat = D.reshape(n, -1)
    mu = truth.b0_true[group_of].astype(float).copy()
    if X is not None and b_cov is not None and X.shape[1]:
        mu += X @ b_cov
    scale = 1.0 / np.sqrt(p)
    for g in range(truth.beta0.shape[0]):
        idx = np.nonzero(group_of == g)[0]
        mu[idx] += scale * (flat[idx] @ truth.beta0[g].ravel())
    rng = _noise_rng(truth.seed)
    return mu + np.sqrt(truth.sigma2_true) * rng.standard_normal(n)


def _assemble(grid, D, n_per_group, n_groups, truth) -> VectorImageDataset:
    group_of = np.repeat(np.arange(n_groups), n_per_group)
    y = synthesize_responses(D, group_of, truth)
    return VectorImageDataset(
        y=y, D=D, group_of=group_of, n_groups=n_groups, grid=grid
    )


def direction_field(grid: SpatialGrid) -> np.ndarray:
    """Smooth spatially varying mean directions for unit-vector predictors."""
    loc = grid.locations
    raw = np.stack(
        [
            np.cos(np.pi * loc[:, 0]),
            np.sin(np.pi * loc[:, 0]),
            loc[:, 1] if grid.d > 1 else np.zeros(grid.p),
        ],
        axis=1,
    )
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def gen_case1(
    n_per_group: int, sigma2: float = 1.0, seed: int = 0, dims=(20, 20), n_groups: int = 3
):
    """Unit-vector predictors: vMF(30) around a smooth direction field."""
    grid = make_grid(dims)
    truth = make_truth("blocks3", n_groups, grid, q=3, sigma2=sigma2, seed=seed)
    rng = _predictor_rng(seed)
    mu_dir = direction_field(grid)
    D = sample_vmf(mu_dir, VMF_KAPPA, rng, size=n_per_group * n_groups)
    return _assemble(grid, D, n_per_group, n_groups, truth), truth


def mixing_matrix() -> np.ndarray:
    """Fixed well-conditioned positive-definite mixer for correlated predictors."""
    A = np.random.default_rng(_MIX_SEED).standard_normal((3, 3))
    P = A @ A.T
    return P / np.linalg.norm(P, 2) + 0.5 * np.eye(3)


def gen_case2(
    n_per_group: int, sigma2: float = 1.0, seed: int = 0, dims=(20, 20), n_groups: int = 3
):
    """Correlated predictors: exponential-kernel GPs mixed across components.

    Component kernels use raw grid-index distances (the length scales
    are meaningful at that scale), and the per-voxel covariance of the
    mixed field is the mixer times its transpose.
    """
    grid = make_grid(dims)
    truth = make_truth("blocks3", n_groups, grid, q=3, sigma2=sigma2, seed=seed)
    rng = _predictor_rng(seed)
    idx_coords = np.array(
        np.unravel_index(np.arange(grid.p), grid.dims), dtype=float
    ).T
    diff = idx_coords[:, None, :] - idx_coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    n = n_per_group * n_groups
    comps = np.empty((n, grid.p, 3))
    for k, length in enumerate(GP_LENGTHSCALES):
        K = np.exp(-dist / length)
        K[np.diag_indices_from(K)] += 1e-10
        chol = cholesky(K, lower=True)
        comps[:, :, k] = rng.standard_normal((n, grid.p)) @ chol.T
    psi = mixing_matrix()
    D = comps @ psi.T
    return _assemble(grid, D, n_per_group, n_groups, truth), truth


def gen_toy(n_per_group: int, sigma2: float = 0.1, seed: int = 0, n_groups: int = 1):
    """Small fixture: 5x5 grid, two components, Gaussian predictors."""
    grid = make_grid((5, 5))
    truth = make_truth("toy", n_groups, grid, q=2, sigma2=sigma2, seed=seed)
    rng = _predictor_rng(seed)
    D = rng.standard_normal((n_per_group * n_groups, grid.p, 2))
    return _assemble(grid, D, n_per_group, n_groups, truth), truth
