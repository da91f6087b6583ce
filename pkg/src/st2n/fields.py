"""Spatial grids, knot sets, tapered basis matrices and the low-rank
multivariate Gaussian-process prior.

A latent vector field over the image grid is represented by its values
at a coarse regular grid of knots; the voxel-level field is the basis
expansion ``field = basis @ knot_coeffs`` where the basis holds tapered
Gaussian kernel weights.  The knot coefficients carry a matrix-normal
prior with a squared-exponential row covariance (over knots) and a
cross-component column covariance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

__all__ = [
    "SpatialGrid",
    "KnotSet",
    "UncoveredVoxelError",
    "make_grid",
    "make_knots",
    "taper_weight",
    "kernel_matrix",
    "robust_cholesky",
    "expand_field",
    "gp_log_prior",
    "KernelCholeskyCache",
]

JITTER_INIT = 1e-4
JITTER_MAX = 1e-2


class UncoveredVoxelError(ValueError):
    """Raised when some voxel receives zero weight from every knot."""


@dataclass(frozen=True)
class SpatialGrid:
    """Regular grid of voxel locations scaled into the unit hypercube."""

    dims: tuple[int, ...]
    locations: np.ndarray  # (p, d)

    @property
    def p(self) -> int:
        return self.locations.shape[0]

    @property
    def d(self) -> int:
        return self.locations.shape[1]


@dataclass(frozen=True)
class KnotSet:
    """Regular sub-grid of knots with the taper bandwidth that pairs with it."""

    knots: np.ndarray  # (L, d)
    bandwidth: float

    @property
    def L(self) -> int:
        return self.knots.shape[0]


def _axis_points(count: int) -> np.ndarray:
    if count == 1:
        return np.array([0.5])
    return np.linspace(0.0, 1.0, count)


def make_grid(dims) -> SpatialGrid:
    """Equi-spaced voxel grid on [0,1]^d including both endpoints."""
    dims = tuple(int(k) for k in np.atleast_1d(dims))
    if any(k < 1 for k in dims):
        raise ValueError("grid dims must be positive")
    axes = [_axis_points(k) for k in dims]
    pts = np.array(list(itertools.product(*axes)), dtype=float)
    return SpatialGrid(dims=dims, locations=pts)


def default_knots_per_dim(dims) -> tuple[int, ...]:
    """Half the grid resolution per dimension, never fewer than two knots."""
    return tuple(max(2, int(np.ceil(k / 2))) for k in dims)


def taper_weight(dist, bandwidth: float):
    """Tapered Gaussian weight exp(-x^2 / 2b^2) cut to zero at x >= 3b."""
    dist = np.asarray(dist, dtype=float)
    w = np.exp(-(dist * dist) / (2.0 * bandwidth * bandwidth))
    return np.where(dist < 3.0 * bandwidth, w, 0.0)


def make_knots(grid: SpatialGrid, knots_per_dim=None, bandwidth: float | None = None):
    """Build a regular knot grid and its voxel-by-knot basis matrix.

    Knots include both endpoints along every dimension.  The default
    bandwidth is the knot spacing, which keeps every voxel inside the
    taper support of several knots; a bandwidth too small to cover some
    voxel raises :class:`UncoveredVoxelError`.
    """
    if knots_per_dim is None:
        knots_per_dim = default_knots_per_dim(grid.dims)
    knots_per_dim = tuple(int(k) for k in np.atleast_1d(knots_per_dim))
    if len(knots_per_dim) != grid.d:
        raise ValueError("knots_per_dim length must match grid dimension")
    if any(k < 2 for k in knots_per_dim):
        raise ValueError("need at least two knots per dimension")
    axes = [np.linspace(0.0, 1.0, k) for k in knots_per_dim]
    knots = np.array(list(itertools.product(*axes)), dtype=float)
    if bandwidth is None:
        bandwidth = max(1.0 / (k - 1) for k in knots_per_dim)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    diff = grid.locations[:, None, :] - knots[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    basis = taper_weight(dist, bandwidth)
    if np.any(basis.sum(axis=1) == 0.0):
        raise UncoveredVoxelError(
            f"bandwidth {bandwidth} leaves voxels outside every knot taper"
        )
    return KnotSet(knots=knots, bandwidth=float(bandwidth)), basis


def kernel_matrix(knots: KnotSet, a: float, jitter: float = JITTER_INIT) -> np.ndarray:
    """Lower Cholesky factor of the knot covariance exp(-a^2 d^2) + jitter I.

    The default jitter doubles as a conditioning nugget: squared
    exponential kernels over regular knot grids are numerically
    rank-deficient, and a 1e-4 nugget bounds the stiffness the sampler
    sees without visibly perturbing the prior.  Decomposition failure
    propagates as ``numpy.linalg.LinAlgError`` so the caller can
    escalate the jitter.
    """
    if a <= 0:
        raise ValueError("inverse length-scale must be positive")
    diff = knots.knots[:, None, :] - knots.knots[None, :, :]
    sq = (diff * diff).sum(axis=2)
    K = np.exp(-(a * a) * sq)
    K[np.diag_indices_from(K)] += jitter
    try:
        return cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        raise
    except Exception as exc:  # scipy raises its own LinAlgError subclass
        raise np.linalg.LinAlgError(str(exc)) from exc


def robust_cholesky(knots: KnotSet, a: float) -> np.ndarray:
    """Cholesky of the knot kernel with jitter doubling up to a hard cap."""
    jitter = JITTER_INIT
    while True:
        try:
            return kernel_matrix(knots, a, jitter)
        except np.linalg.LinAlgError:
            jitter *= 2.0
            if jitter > JITTER_MAX:
                raise


def expand_field(basis: np.ndarray, knot_coeffs: np.ndarray) -> np.ndarray:
    """Voxel-level field from knot coefficients: ``basis @ knot_coeffs``."""
    basis = np.asarray(basis, dtype=float)
    knot_coeffs = np.asarray(knot_coeffs, dtype=float)
    if basis.ndim != 2 or knot_coeffs.ndim != 2 or basis.shape[1] != knot_coeffs.shape[0]:
        raise ValueError(
            f"shape mismatch: basis {basis.shape} vs knot coefficients {knot_coeffs.shape}"
        )
    return basis @ knot_coeffs


def gp_log_prior(knot_coeffs: np.ndarray, chol_k: np.ndarray, sigma_mat: np.ndarray):
    """Matrix-normal log prior of knot coefficients and its gradient.

    Row covariance is given through its lower Cholesky factor ``chol_k``
    (over knots), column covariance through ``sigma_mat`` (across
    components).  Returns ``(logp, grad)`` with the full normalizing
    constant included and ``grad = -K^{-1} C Sigma^{-1}``.
    """
    C = np.asarray(knot_coeffs, dtype=float)
    L, q = C.shape
    chol_s = cholesky(np.asarray(sigma_mat, dtype=float), lower=True)
    kinv_c = cho_solve((chol_k, True), C)
    grad = -cho_solve((chol_s, True), kinv_c.T).T
    quad = float((C * -grad).sum())
    logdet_k = 2.0 * float(np.log(np.diag(chol_k)).sum())
    logdet_s = 2.0 * float(np.log(np.diag(chol_s)).sum())
    logp = -0.5 * (quad + q * logdet_k + L * logdet_s + L * q * np.log(2.0 * np.pi))
    return logp, grad


def solve_kernel(chol_k: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """K^{-1} rhs given the lower Cholesky factor of K."""
    return cho_solve((chol_k, True), rhs)


def sample_matrix_normal(rng, chol_k: np.ndarray, chol_s: np.ndarray) -> np.ndarray:
    """Draw from the matrix normal with the given row/column factors."""
    z = rng.standard_normal((chol_k.shape[0], chol_s.shape[0]))
    return chol_k @ z @ chol_s.T


class KernelCholeskyCache:
    """Per-chain cache of knot-kernel Cholesky factors keyed by field.

    A chain owns one cache; entries are invalidated only when the
    field's inverse length-scale changes (accepted Metropolis moves).
    """

    def __init__(self, knots: KnotSet):
        self.knots = knots
        self._entries: dict[str, tuple[float, np.ndarray]] = {}

    def get(self, field_id: str, a: float) -> np.ndarray:
        entry = self._entries.get(field_id)
        if entry is not None and entry[0] == a:
            return entry[1]
        chol = robust_cholesky(self.knots, a)
        self._entries[field_id] = (a, chol)
        return chol

    def put(self, field_id: str, a: float, chol: np.ndarray) -> None:
        self._entries[field_id] = (a, chol)


def _triangular_logdet(chol: np.ndarray) -> float:
    return 2.0 * float(np.log(np.diag(chol)).sum())


def whiten(chol: np.ndarray, x: np.ndarray) -> np.ndarray:
    """L^{-1} x for a lower-triangular factor (used by tests)."""
    return solve_triangular(chol, x, lower=True)
