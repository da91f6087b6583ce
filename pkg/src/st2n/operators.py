"""Per-voxel soft-threshold operators and cross-group similarity summaries.

Everything in this module is a pure function of small ``(q,)`` coefficient
vectors.  The vectorized field-scale equivalents used inside the sampler
live in :mod:`st2n.kernels`; these scalar versions are the reference
implementation and the public API for one-off evaluations.

Conventions shared by all operators:

* thresholding returns a bitwise-zero vector whenever the norm is inside
  the threshold ball, so downstream selection can test ``norm > 0``
  without an epsilon;
* at the measure-zero boundary ``norm == lam`` the zero (interior) branch
  is used, both for the value and for the Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ThresholdParams",
    "st2n",
    "st2n_jacobian",
    "double_threshold",
    "adaptive_threshold_lambda_s",
    "similar_effect_f",
    "psi_similarity",
]


@dataclass(frozen=True)
class ThresholdParams:
    """Threshold radii for the double soft-threshold composition.

    ``lambda_shared`` applies to the outer (combined) field and
    ``lambda_group[g]`` to group ``g``'s latent deviation field.
    """

    lambda_shared: float
    lambda_group: np.ndarray

    def __post_init__(self):
        lg = np.atleast_1d(np.asarray(self.lambda_group, dtype=float))
        object.__setattr__(self, "lambda_group", lg)
        if self.lambda_shared < 0 or np.any(lg < 0):
            raise ValueError("thresholds must be nonnegative")

    @property
    def n_groups(self) -> int:
        return self.lambda_group.shape[0]


def _as_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("expected a 1-D coefficient vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite coefficient vector")
    return x


def st2n(x, lam: float) -> np.ndarray:
    """Soft-threshold the Euclidean norm of ``x`` by ``lam``.

    Returns ``(1 - lam/||x||)_+ x``: the magnitude shrinks by ``lam``
    while the direction is preserved, and any vector with
    ``||x|| <= lam`` maps to the exact zero vector.
    """
    x = _as_vector(x)
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    nrm = float(np.linalg.norm(x))
    if nrm <= lam:
        return np.zeros_like(x)
    return (1.0 - lam / nrm) * x


def st2n_jacobian(x, lam: float) -> np.ndarray:
    """Jacobian of :func:`st2n` at ``x``.

    Inside the threshold ball (including the boundary) the map is
    constant zero, so the Jacobian is the zero matrix.  Outside it is
    ``(1 - lam/||x||) I + (lam/||x||^3) x x^T``.
    """
    x = _as_vector(x)
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    q = x.shape[0]
    nrm = float(np.linalg.norm(x))
    if nrm <= lam:
        return np.zeros((q, q))
    return (1.0 - lam / nrm) * np.eye(q) + (lam / nrm**3) * np.outer(x, x)


def double_threshold(beta_shared, alpha_latent, params: ThresholdParams, g: int) -> np.ndarray:
    """Group-``g`` coefficient vector from the shared and latent fields.

    Applies the inner threshold ``lambda_group[g]`` to the latent
    deviation, adds the shared field, then applies the outer threshold:
    ``h_lam(beta_shared + h_lam_g(alpha_latent))``.
    """
    if not 0 <= g < params.n_groups:
        raise IndexError(f"group index {g} out of range")
    alpha = st2n(alpha_latent, float(params.lambda_group[g]))
    return st2n(_as_vector(beta_shared) + alpha, params.lambda_shared)


def adaptive_threshold_lambda_s(beta_shared, alphas) -> float:
    """Spatially adaptive threshold for screening the shared field.

    ``alphas`` holds the already-thresholded group deviations, one row
    per group.  Among groups with ``a^T (a + 2 beta_shared) < 0`` the
    least-negative value sets the radius; with no qualifying group the
    threshold is zero (no shrinkage is justified).
    """
    beta_shared = _as_vector(beta_shared)
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    vals = alphas @ (2.0 * beta_shared) + (alphas * alphas).sum(axis=1)
    neg = vals[vals < 0]
    if neg.size == 0:
        return 0.0
    return float(np.sqrt(-neg.max()))


def similar_effect_f(beta_shared, alphas, lam: float) -> np.ndarray:
    """Similar-effect screen: shared field thresholded twice.

    The shared field is first thresholded at ``lam`` and then at the
    adaptive radius from :func:`adaptive_threshold_lambda_s`, yielding a
    vector that is nonzero only where the effect plausibly survives in
    every group.
    """
    hb = st2n(beta_shared, lam)
    lam_s = adaptive_threshold_lambda_s(beta_shared, alphas)
    return st2n(hb, lam_s)


def psi_similarity(betas) -> float | None:
    """Minimum pairwise cosine between group coefficient vectors.

    Returns ``None`` when any group's vector is zero (a zero coefficient
    has no direction) or when there are fewer than two groups.
    """
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    G = betas.shape[0]
    if G < 2:
        return None
    norms = np.linalg.norm(betas, axis=1)
    if np.any(norms == 0.0):
        return None
    units = betas / norms[:, None]
    gram = units @ units.T
    return float(gram[np.triu_indices(G, k=1)].min())
