"""NumPy fallback for the hot array kernels.

These functions mirror :mod:`st2n._kernels` (the compiled extension)
operation for operation; the dispatcher in :mod:`st2n.kernels` picks
whichever is available.  Fields are ``(p, q)`` float64 arrays, one row
per voxel.  Thresholded rows are written as exact ``+0.0`` so the
exact-sparsity contract holds bitwise.
"""

from __future__ import annotations

import numpy as np


def row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt((x * x).sum(axis=1))


def st2n_rows(x: np.ndarray, lam: float):
    """Row-wise soft-threshold of the Euclidean norm.

    Returns ``(out, norms)`` where ``norms`` are the input row norms.
    """
    norms = row_norms(x)
    alive = norms > lam
    factor = np.zeros_like(norms)
    np.divide(lam, norms, out=factor, where=alive)
    out = np.where(alive[:, None], (1.0 - factor)[:, None] * x, 0.0)
    return out, norms


def st2n_rows_var(x: np.ndarray, lams: np.ndarray):
    """Row-wise soft-threshold with a per-row threshold vector."""
    norms = row_norms(x)
    alive = norms > lams
    factor = np.zeros_like(norms)
    np.divide(lams, norms, out=factor, where=alive)
    out = np.where(alive[:, None], (1.0 - factor)[:, None] * x, 0.0)
    return out, norms


def jvp_rows(x: np.ndarray, norms: np.ndarray, lam: float, v: np.ndarray) -> np.ndarray:
    """Row-wise Jacobian-vector product of the soft-threshold map.

    ``x`` is the input field, ``norms`` its precomputed row norms and
    ``v`` the upstream gradient rows.  Rows inside the threshold ball
    (norm <= lam) propagate nothing.
    """
    alive = norms > lam
    inv = np.zeros_like(norms)
    np.divide(1.0, norms, out=inv, where=alive)
    factor = np.where(alive, 1.0 - lam * inv, 0.0)
    dots = (x * v).sum(axis=1)
    coeff = np.where(alive, lam * dots * inv * inv * inv, 0.0)
    out = factor[:, None] * v + coeff[:, None] * x
    return np.where(alive[:, None], out, 0.0)


def double_threshold_rows(bt: np.ndarray, at: np.ndarray, lam: float, lam_g: float):
    """Forward pass of the double soft-threshold for one group.

    ``bt`` is the expanded shared field and ``at`` the group's raw
    latent field.  Returns ``(beta, u, u_norm, alpha, a_norm)`` where
    ``u = bt + alpha`` is the pre-threshold combined field; the extra
    outputs feed :func:`double_threshold_backward`.
    """
    alpha, a_norm = st2n_rows(at, lam_g)
    u = bt + alpha
    beta, u_norm = st2n_rows(u, lam)
    return beta, u, u_norm, alpha, a_norm


def double_threshold_backward(
    g_beta: np.ndarray,
    u: np.ndarray,
    u_norm: np.ndarray,
    at: np.ndarray,
    a_norm: np.ndarray,
    lam: float,
    lam_g: float,
):
    """Backward pass of the double soft-threshold for one group.

    Chains the upstream coefficient gradient through the outer and the
    inner threshold: returns ``(g_u, g_at)`` where ``g_u`` is the
    gradient w.r.t. the combined field (and hence the shared field's
    contribution) and ``g_at`` the one w.r.t. the raw latent field.
    """
    g_u = jvp_rows(u, u_norm, lam, g_beta)
    g_at = jvp_rows(at, a_norm, lam_g, g_u)
    return g_u, g_at


def cd_sweep(cols: np.ndarray, r: np.ndarray, w: np.ndarray, lam: float) -> float:
    """One cyclic coordinate-descent sweep for the standardized LASSO.

    ``cols`` is the (m, n) array of predictor columns (row ``j`` is
    column ``j`` of the design), assumed centered with mean square 1,
    ``r`` the current residual and ``w`` the coefficients; both are
    updated in place.  Returns the largest absolute coordinate change.
    """
    n = r.shape[0]
    max_delta = 0.0
    for j in range(cols.shape[0]):
        xj = cols[j]
        wj = w[j]
        rho = (xj @ r) / n + wj
        if rho > lam:
            new = rho - lam
        elif rho < -lam:
            new = rho + lam
        else:
            new = 0.0
        delta = new - wj
        if delta != 0.0:
            r -= delta * xj
            w[j] = new
        if abs(delta) > max_delta:
            max_delta = abs(delta)
    return max_delta
