"""Multi-group scalar on vector-valued image regression with doubly
soft-thresholded Gaussian process priors.

The package is organised around a small set of layers:

``operators``
    Pure per-voxel soft-threshold operators and cross-group similarity
    summaries.
``kernels``
    Vectorized field-scale versions of the hot loops, with a compiled
    extension backend and a NumPy fallback selected at import time.
``fields``
    Spatial grids, knot sets, tapered basis matrices and the low-rank
    Gaussian-process prior.
``model``
    Dataset container, likelihood, coefficient-field materialization and
    log-posterior gradients.
``sampler``
    The MCMC engine (HMC over latent fields, Metropolis-Hastings for
    kernel scales and thresholds, Gibbs for the conjugate blocks).
``simulate``
    Synthetic data generators and ground-truth layouts.
``lasso``
    Coordinate-descent LASSO baseline.
``summary``
    Posterior summaries and evaluation metrics.
``bundles`` / ``cli``
    On-disk formats and the batch command line interface.
"""

from st2n.operators import (
    ThresholdParams,
    adaptive_threshold_lambda_s,
    double_threshold,
    psi_similarity,
    similar_effect_f,
    st2n,
    st2n_jacobian,
)

__all__ = [
    "ThresholdParams",
    "adaptive_threshold_lambda_s",
    "double_threshold",
    "psi_similarity",
    "similar_effect_f",
    "st2n",
    "st2n_jacobian",
]

__version__ = "0.1.0"
