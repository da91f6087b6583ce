"""Shared oracles for the test suite.

These deliberately avoid the package's own vectorized kernels: scalar
reference loops, quadrature, and batch-means error bars for MCMC output.
"""

import numpy as np


def st2n_ref(x, lam):
    """Scalar-loop reference soft-threshold (independent of the package)."""
    x = np.asarray(x, dtype=float)
    nrm = np.sqrt((x * x).sum())
    if nrm <= lam:
        return np.zeros_like(x)
    return (1.0 - lam / nrm) * x


def uniform_sphere(rng, n, q):
    z = rng.standard_normal((n, q))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def threshold_case_pairs(rng, n, q, lam):
    """Pairs (x1, x2) split across the three threshold-ball cases.

    Thirds: both inside the ball, one inside one outside, both outside.
    """
    third = n // 3
    dirs1 = uniform_sphere(rng, n, q)
    dirs2 = uniform_sphere(rng, n, q)
    r_in1 = lam * rng.uniform(0, 1, n)
    r_in2 = lam * rng.uniform(0, 1, n)
    r_out1 = lam * (1.0 + rng.exponential(1.0, n))
    r_out2 = lam * (1.0 + rng.exponential(1.0, n))
    r1 = np.concatenate([r_in1[:third], r_in2[third : 2 * third], r_out1[2 * third :]])
    r2 = np.concatenate([r_in2[:third], r_out1[third : 2 * third], r_out2[2 * third :]])
    return dirs1 * r1[:, None], dirs2 * r2[:, None]


def batch_means_se(series, n_batches=40):
    """Monte-Carlo standard error of the mean from batch means."""
    series = np.asarray(series, dtype=float)
    usable = (series.size // n_batches) * n_batches
    batches = series[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))


def empirical_cdf_probe(series, points):
    series = np.asarray(series)
    return np.array([(series <= x).mean() for x in points])


def total_variation(grid, f, g):
    """TV distance between two densities tabulated on the same grid."""
    f = np.asarray(f) / np.trapezoid(f, grid)
    g = np.asarray(g) / np.trapezoid(g, grid)
    return 0.5 * np.trapezoid(np.abs(f - g), grid)
