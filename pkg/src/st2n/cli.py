"""Batch command line interface.

Subcommands: ``simulate`` writes a dataset bundle, ``fit`` runs chains
against a bundle, ``summarize`` turns a run directory into CSV tables,
``evaluate`` scores a run against simulation truth, and ``baseline``
fits the per-group LASSO comparison.  Exit codes: 0 success, 1 usage
error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from st2n import bundles
from st2n.bundles import BundleError, ChainWriter, StateLayout, TraceWriter
from st2n.fields import make_knots
from st2n.lasso import lasso_cv_path
from st2n.model import Hyper
from st2n.sampler import SamplerConfig, run_chain
from st2n.simulate import gen_case1, gen_case2, gen_toy
from st2n.summary import mse_coefficients, selection_metrics, summarize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

RUN_SCHEMA = 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args) -> int:
    if args.case == "1":
        data, truth = gen_case1(args.n_per_group, args.sigma2, args.seed)
    elif args.case == "2":
        data, truth = gen_case2(args.n_per_group, args.sigma2, args.seed)
    elif args.case == "toy":
        data, truth = gen_toy(args.n_per_group, args.sigma2, args.seed)
    else:  # argparse choices guard this
        raise _UsageError(f"unknown case {args.case}")
    bundles.write_bundle(args.out, data, truth)
    active = (truth.r > 0).mean(axis=1)
    print(f"wrote bundle to {args.out}")
    print(
        f"n={data.n} groups={data.n_groups} p={data.p} q={data.q} "
        f"dims={data.grid.dims} sigma2={truth.sigma2_true}"
    )
    print(
        "active voxel fraction per group: "
        + ", ".join(f"{v:.3f}" for v in active)
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


_CONFIG_FLOATS = {
    "hmc_step_init", "target_accept", "mh_scale_a", "mh_scale_lambda",
    "R", "c1", "c2", "d1", "d2", "sigma_b2", "nu", "bandwidth",
}
_CONFIG_INTS = {"n_iter", "n_burnin", "thin", "leapfrog_steps", "seed", "chains"}


def _load_run_config(path: str | None) -> dict:
    raw: dict[str, str] = {}
    if path:
        raw = bundles.parse_config_text(Path(path).read_text())
    out: dict[str, object] = {}
    for key, val in raw.items():
        if key in _CONFIG_INTS:
            out[key] = int(val)
        elif key in _CONFIG_FLOATS:
            out[key] = float(val)
        elif key == "knots_per_dim":
            out[key] = [int(v) for v in val.split(",")]
        else:
            raise ValueError(f"unknown config key {key!r}")
    return out


def _sampler_config(cfg: dict, seed: int) -> SamplerConfig:
    hyper = Hyper(
        c1=cfg.get("c1", 0.1), c2=cfg.get("c2", 0.1),
        d1=cfg.get("d1", 0.1), d2=cfg.get("d2", 0.1),
        sigma_b2=cfg.get("sigma_b2", 100.0), nu=cfg.get("nu", 4.0),
        R=cfg.get("R", 5.0),
    )
    return SamplerConfig(
        n_iter=cfg.get("n_iter", 10000),
        n_burnin=cfg.get("n_burnin", 5000),
        thin=cfg.get("thin", 1),
        leapfrog_steps=cfg.get("leapfrog_steps", 30),
        hmc_step_init=cfg.get("hmc_step_init", 0.02),
        target_accept=cfg.get("target_accept", 0.65),
        mh_scale_a=cfg.get("mh_scale_a", 0.2),
        mh_scale_lambda=cfg.get("mh_scale_lambda", 0.25),
        seed=seed,
        hyper=hyper,
    )


def chain_seed(base_seed: int, chain_idx: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(chain_idx,))
    return int(ss.generate_state(1, np.uint64)[0])


def _fit_single_chain(data_dir, out_dir, cfg, chain_idx, base_seed):
    """Run one chain end to end; returns (chain_idx, error_or_None)."""
    try:
        data, _ = bundles.read_bundle(data_dir)
        knots, basis = make_knots(
            data.grid,
            knots_per_dim=cfg.get("knots_per_dim"),
            bandwidth=cfg.get("bandwidth"),
        )
        config = _sampler_config(cfg, chain_seed(base_seed, chain_idx))
        layout = StateLayout(L=knots.L, q=data.q, G=data.n_groups, c=data.n_covariates)
        out = Path(out_dir)
        chain_path = out / f"chain_{chain_idx:02d}.bin"
        trace_path = out / f"trace_{chain_idx:02d}.csv"
        with ChainWriter(chain_path, layout) as writer, TraceWriter(
            trace_path, data.n_groups
        ) as trace:
            for record in run_chain(config, data, basis, knots, yield_burnin=True):
                trace.write(record)
                if config.is_recorded(record.iteration):
                    writer.write(record)
        return chain_idx, None
    except Exception:
        return chain_idx, traceback.format_exc()


def _cmd_fit(args) -> int:
    cfg = _load_run_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n_iter is not None:
        cfg["n_iter"] = args.n_iter
    if args.n_burnin is not None:
        cfg["n_burnin"] = args.n_burnin
    if args.chains is not None:
        cfg["chains"] = args.chains
    n_chains = int(cfg.get("chains", 1))
    base_seed = int(cfg.get("seed", 0))
    if n_chains < 1:
        raise _UsageError("need at least one chain")

    data, _ = bundles.read_bundle(args.data)
    knots, basis = make_knots(
        data.grid, knots_per_dim=cfg.get("knots_per_dim"), bandwidth=cfg.get("bandwidth")
    )
    # surface configuration problems before any chain starts
    _sampler_config(cfg, base_seed).validate()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": RUN_SCHEMA,
        "data_dir": str(args.data),
        "n_chains": n_chains,
        "base_seed": base_seed,
        "chain_seeds": [chain_seed(base_seed, i) for i in range(n_chains)],
        "grid_dims": list(data.grid.dims),
        "knots_per_dim": cfg.get("knots_per_dim"),
        "bandwidth": knots.bandwidth,
        "covariate_names": [f"cov_{c}" for c in range(data.n_covariates)],
        "layout": {
            "L": knots.L, "q": data.q, "G": data.n_groups, "c": data.n_covariates
        },
        "config": {
            k: v for k, v in cfg.items() if k not in {"chains", "knots_per_dim"}
        },
        "state_field_order": (
            "beta_knots(L*q), alpha_knots(G*L*q), a_shared, a_group(G), "
            "lambda_shared, lambda_group(G), sigma2, b0(G), b_cov(c), sigma_mat(q*q)"
        ),
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2) + "\n")

    workers = min(n_chains, args.workers) if args.workers else n_chains
    failures = []
    if workers == 1 or n_chains == 1:
        results = [
            _fit_single_chain(args.data, out, cfg, i, base_seed)
            for i in range(n_chains)
        ]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_fit_single_chain, args.data, out, cfg, i, base_seed)
                for i in range(n_chains)
            ]
            results = [f.result() for f in futures]
    for idx, err in results:
        if err is None:
            print(f"chain {idx}: done")
        else:
            failures.append(idx)
            print(f"chain {idx}: FAILED\n{err}", file=sys.stderr)
    return EXIT_RUNTIME if failures else EXIT_OK


# ---------------------------------------------------------------------------
# summarize / evaluate / baseline


def _read_run(run_dir):
    run = Path(run_dir)
    try:
        manifest = json.loads((run / "run.json").read_text())
    except FileNotFoundError as exc:
        raise BundleError(f"not a run directory: {run}") from exc
    lay = manifest["layout"]
    layout = StateLayout(L=lay["L"], q=lay["q"], G=lay["G"], c=lay["c"])
    records = []
    chain_files = sorted(run.glob("chain_*.bin"))
    if not chain_files:
        raise BundleError(f"no chain files in {run}")
    for path in chain_files:
        recs, truncated = bundles.read_chain(path, layout)
        if truncated:
            last = recs[-1].iteration if recs else None
            print(
                f"warning: {path.name} ends in a torn frame; "
                f"last valid iteration {last}",
                file=sys.stderr,
            )
        records.extend(recs)
    if not records:
        raise BundleError(f"run {run} holds no complete records")
    return manifest, layout, records


def _rebuild_basis(manifest):
    from st2n.fields import make_grid

    grid = make_grid(manifest["grid_dims"])
    knots, basis = make_knots(
        grid, knots_per_dim=manifest.get("knots_per_dim"),
        bandwidth=manifest.get("bandwidth"),
    )
    return grid, knots, basis


def _summarize_run(run_dir):
    manifest, layout, records = _read_run(run_dir)
    grid, _, basis = _rebuild_basis(manifest)
    summary = summarize(
        records, basis, grid.dims, covariate_names=manifest.get("covariate_names")
    )
    return manifest, summary


def _cmd_summarize(args) -> int:
    _, summary = _summarize_run(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    G, p = summary.mean_norm.shape
    lines = ["group,voxel,mean_norm,inclusion_prob,f_norm_mean,psi_mean"]
    for g in range(G):
        for j in range(p):
            lines.append(
                f"{g},{j},{_fmt(summary.mean_norm[g, j])},"
                f"{_fmt(summary.inclusion_prob[g, j])},"
                f"{_fmt(summary.f_norm_mean[j])},{_fmt(summary.psi_mean[j])}"
            )
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    lines = ["name,estimate,lower,upper"]
    for name, mean, lo, hi in summary.covariate_table:
        lines.append(f"{name},{_fmt(mean)},{_fmt(lo)},{_fmt(hi)}")
    (out / "covariates.csv").write_text("\n".join(lines) + "\n")
    lines = ["group,voxel,selected"]
    for g in range(G):
        for j in range(p):
            lines.append(f"{g},{j},{int(summary.inclusion_prob[g, j] > 0.5)}")
    (out / "selection_mask.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote summary tables for {summary.n_records} records to {out}")
    return EXIT_OK


def _common_group_size(group_sizes) -> int:
    sizes = set(group_sizes)
    return group_sizes[0] if len(sizes) == 1 else -1


def _cmd_evaluate(args) -> int:
    _, truth = bundles.read_bundle(args.truth)
    if truth is None:
        raise BundleError(f"bundle {args.truth} holds no truth.json")
    meta = json.loads((Path(args.truth) / "meta.json").read_text())
    _, summary = _summarize_run(args.run)
    mse = mse_coefficients(summary, truth)
    metrics = selection_metrics(summary, truth, prob_threshold=0.5)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = _common_group_size(meta["group_sizes"])
    (out / "mse.csv").write_text(
        "method,group_size,sigma2,mse\n"
        f"st2n-gp,{size},{_fmt(truth.sigma2_true)},{_fmt(mse)}\n"
    )
    lines = ["method,group,tpr,fpr"]
    for g, m in enumerate(metrics):
        lines.append(f"st2n-gp,{g},{_fmt(m['tpr'])},{_fmt(m['fpr'])}")
    (out / "selection.csv").write_text("\n".join(lines) + "\n")
    print(f"coefficient mse: {mse:.6f}")
    return EXIT_OK


def _cmd_baseline(args) -> int:
    data, truth = bundles.read_bundle(args.data)
    if truth is None:
        raise BundleError(f"bundle {args.data} holds no truth.json for scoring")
    meta = json.loads((Path(args.data) / "meta.json").read_text())
    scale = 1.0 / np.sqrt(data.p)
    flat = data.D.reshape(data.n, -1) * scale
    beta_hat = np.zeros_like(truth.beta0)
    for g in range(data.n_groups):
        idx = np.nonzero(data.group_of == g)[0]
        cv = lasso_cv_path(flat[idx], data.y[idx], seed=args.seed)
        beta_hat[g] = cv.fit.coef.reshape(data.p, data.q)
        print(
            f"group {g}: lambda={cv.lambda_best:.5g} "
            f"nonzero={np.count_nonzero(cv.fit.coef)}/{cv.fit.coef.size}"
        )
    mse = mse_coefficients(beta_hat, truth.beta0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = _common_group_size(meta["group_sizes"])
    (out / "mse.csv").write_text(
        "method,group_size,sigma2,mse\n"
        f"lasso,{size},{_fmt(truth.sigma2_true)},{_fmt(mse)}\n"
    )
    print(f"lasso coefficient mse: {mse:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="st2n", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated dataset bundle")
    p.add_argument("--case", choices=["1", "2", "toy"], required=True)
    p.add_argument("--n-per-group", type=int, required=True)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="run MCMC chains against a bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel chain workers (default: one per chain)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-iter", type=int, default=None)
    p.add_argument("--n-burnin", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("summarize", help="write posterior summary tables")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("evaluate", help="score a run against simulation truth")
    p.add_argument("--run", required=True)
    p.add_argument("--truth", required=True, help="dataset bundle with truth.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("baseline", help="per-group LASSO baseline with CV")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BundleError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
