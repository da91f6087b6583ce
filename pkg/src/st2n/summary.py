"""Posterior summarization and evaluation metrics.

``summarize`` makes a single streaming pass over saved chain records,
materializing the coefficient field per record; summaries are pointwise
means, exact-zero inclusion frequencies and equal-tailed intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from st2n.model import CoefficientField, VectorImageDataset, group_indices, materialize_coefficients
from st2n.simulate import SimTruth

__all__ = [
    "PosteriorSummary",
    "summarize",
    "equal_tailed_interval",
    "mse_coefficients",
    "selection_metrics",
    "oos_prediction_mse",
]


@dataclass
class PosteriorSummary:
    dims: tuple
    n_records: int
    mean_beta: np.ndarray        # (G, p, q)
    mean_norm: np.ndarray        # (G, p)
    inclusion_prob: np.ndarray   # (G, p) share of records with ||beta|| > 0
    f_norm_mean: np.ndarray      # (p,)
    psi_mean: np.ndarray         # (p,) NaN where never defined
    b0_mean: np.ndarray          # (G,)
    b_cov_mean: np.ndarray       # (c,)
    covariate_table: list        # rows: (name, mean, lower, upper)
    scalar_draws: dict           # name -> (n_records,) array


def equal_tailed_interval(draws: np.ndarray, level: float = 0.95):
    """Equal-tailed credible interval by linear interpolation of order stats."""
    lo = (1.0 - level) / 2.0
    return (
        float(np.quantile(draws, lo)),
        float(np.quantile(draws, 1.0 - lo)),
    )


def summarize(records, basis: np.ndarray, dims, covariate_names=None) -> PosteriorSummary:
    """Pointwise posterior means and inclusion summaries over saved records."""
    count = 0
    sums = None
    scalars: dict[str, list] = {}
    for rec in records:
        field = materialize_coefficients(rec.state, basis)
        if sums is None:
            G, p, q = field.beta.shape
            sums = {
                "beta": np.zeros((G, p, q)),
                "norm": np.zeros((G, p)),
                "incl": np.zeros((G, p)),
                "f_norm": np.zeros(p),
                "psi": np.zeros(p),
                "psi_count": np.zeros(p),
            }
        sums["beta"] += field.beta
        sums["norm"] += field.norms
        sums["incl"] += field.norms > 0.0
        sums["f_norm"] += np.sqrt((field.f_values * field.f_values).sum(axis=1))
        defined = np.isfinite(field.psi)
        sums["psi"][defined] += field.psi[defined]
        sums["psi_count"] += defined
        st = rec.state
        row = {
            "log_posterior": rec.log_posterior,
            "sigma2": st.sigma2,
            "lambda": st.lambda_shared,
            "a": st.a_shared,
        }
        for g in range(st.n_groups):
            row[f"lambda_{g}"] = float(st.lambda_group[g])
            row[f"a_{g}"] = float(st.a_group[g])
            row[f"b0_{g}"] = float(st.b0[g])
        for c in range(st.b_cov.size):
            row[f"bcov_{c}"] = float(st.b_cov[c])
        for key, val in row.items():
            scalars.setdefault(key, []).append(val)
        count += 1
    if count == 0:
        raise ValueError("cannot summarize an empty chain")
    draws = {k: np.asarray(v) for k, v in scalars.items()}
    G, p, _ = sums["beta"].shape
    psi_mean = np.full(p, np.nan)
    seen = sums["psi_count"] > 0
    psi_mean[seen] = sums["psi"][seen] / sums["psi_count"][seen]

    names = list(covariate_names) if covariate_names else []
    table = []
    for g in range(G):
        vals = draws[f"b0_{g}"]
        lo, hi = equal_tailed_interval(vals)
        table.append((f"b0_{g}", float(vals.mean()), lo, hi))
    n_cov = sum(1 for k in draws if k.startswith("bcov_"))
    for c in range(n_cov):
        vals = draws[f"bcov_{c}"]
        lo, hi = equal_tailed_interval(vals)
        name = names[c] if c < len(names) else f"cov_{c}"
        table.append((name, float(vals.mean()), lo, hi))

    b0_mean = np.array([draws[f"b0_{g}"].mean() for g in range(G)])
    b_cov_mean = np.array([draws[f"bcov_{c}"].mean() for c in range(n_cov)])
    return PosteriorSummary(
        dims=tuple(dims),
        n_records=count,
        mean_beta=sums["beta"] / count,
        mean_norm=sums["norm"] / count,
        inclusion_prob=sums["incl"] / count,
        f_norm_mean=sums["f_norm"] / count,
        psi_mean=psi_mean,
        b0_mean=b0_mean,
        b_cov_mean=b_cov_mean,
        covariate_table=table,
        scalar_draws=draws,
    )


def mse_coefficients(estimate, truth) -> float:
    """Mean squared coefficient error averaged over groups and voxels.

    Accepts a :class:`PosteriorSummary` (its posterior-mean field) or a
    raw ``(G, p, q)`` array for the estimate, and a :class:`SimTruth` or
    raw array for the truth.
    """
    mean_beta = estimate.mean_beta if isinstance(estimate, PosteriorSummary) else estimate
    beta0 = truth.beta0 if isinstance(truth, SimTruth) else truth
    mean_beta = np.asarray(mean_beta, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if mean_beta.shape != beta0.shape:
        raise ValueError("estimate and truth shapes differ")
    G, p, _ = beta0.shape
    diff = mean_beta - beta0
    return float((diff * diff).sum() / (G * p))


def selection_metrics(
    summary: PosteriorSummary, truth: SimTruth, prob_threshold: float = 0.5
):
    """TPR/FPR of thresholded inclusion probabilities against the truth."""
    if not 0.0 < prob_threshold < 1.0:
        raise ValueError("probability threshold must be in (0,1)")
    out = []
    for g in range(summary.inclusion_prob.shape[0]):
        selected = summary.inclusion_prob[g] > prob_threshold
        active = truth.r[g] > 0.0
        tp = np.count_nonzero(selected & active)
        fp = np.count_nonzero(selected & ~active)
        pos = np.count_nonzero(active)
        neg = active.size - pos
        out.append(
            {
                "tpr": tp / pos if pos else float("nan"),
                "fpr": fp / neg if neg else float("nan"),
            }
        )
    return out


def oos_prediction_mse(summary: PosteriorSummary, heldout: VectorImageDataset):
    """Prediction error of the posterior-mean parameters on held-out data.

    Returns per-group errors and the pooled error.
    """
    if tuple(heldout.grid.dims) != tuple(summary.dims):
        raise ValueError(
            f"held-out grid {heldout.grid.dims} does not match training grid {summary.dims}"
        )
    if heldout.n_groups != summary.mean_beta.shape[0]:
        raise ValueError("group count mismatch between summary and held-out data")
    mu = summary.b0_mean[heldout.group_of].astype(float)
    if summary.b_cov_mean.size:
        mu = mu + heldout.X @ summary.b_cov_mean
    scale = 1.0 / np.sqrt(heldout.p)
    flat = heldout.D.reshape(heldout.n, -1)
    gidx = group_indices(heldout.group_of, heldout.n_groups)
    per_group = []
    for g, idx in enumerate(gidx):
        mu[idx] += scale * (flat[idx] @ summary.mean_beta[g].ravel())
    resid = heldout.y - mu
    for idx in gidx:
        r = resid[idx]
        per_group.append(float((r @ r) / idx.size))
    pooled = float((resid @ resid) / heldout.n)
    return {"per_group": per_group, "pooled": pooled}
