"""End-to-end command line checks on small workloads: bundle writing,
fitting, summarizing, evaluating, the baseline, and exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from st2n.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def toy_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "toy"
    rc = run_cli(
        "simulate", "--case", "toy", "--n-per-group", "40",
        "--sigma2", "0.1", "--seed", "3", "--out", str(out),
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def toy_run(toy_bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "toy_fit"
    rc = run_cli(
        "fit", "--data", str(toy_bundle), "--out", str(out),
        "--chains", "1", "--seed", "5", "--n-iter", "120", "--n-burnin", "60",
    )
    assert rc == 0
    return out


class TestSimulate:
    def test_toy_dimensions(self, toy_bundle):
        meta = json.loads((toy_bundle / "meta.json").read_text())
        assert meta["p"] == 25 and meta["q"] == 2 and meta["G"] == 1

    def test_case1_dimensions(self, tmp_path):
        out = tmp_path / "c1"
        rc = run_cli(
            "simulate", "--case", "1", "--n-per-group", "50",
            "--sigma2", "1.0", "--seed", "0", "--out", str(out),
        )
        assert rc == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["n"] == 150 and meta["p"] == 400
        assert meta["q"] == 3 and meta["G"] == 3

    def test_byte_identical_for_same_seed(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            rc = run_cli(
                "simulate", "--case", "toy", "--n-per-group", "9",
                "--sigma2", "0.5", "--seed", "11", "--out", str(out),
            )
            assert rc == 0
            outs.append(out)
        for name in ("meta.json", "predictors.bin", "response.csv", "truth.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_bad_case_is_usage_error(self, tmp_path):
        rc = run_cli("simulate", "--case", "9", "--n-per-group", "5",
                     "--out", str(tmp_path / "x"))
        assert rc == 1


class TestFit:
    def test_run_directory_layout(self, toy_run):
        manifest = json.loads((toy_run / "run.json").read_text())
        assert manifest["layout"]["G"] == 1
        assert (toy_run / "chain_00.bin").exists()
        assert (toy_run / "trace_00.csv").exists()
        trace = (toy_run / "trace_00.csv").read_text().strip().split("\n")
        assert len(trace) == 121  # header + one row per iteration

    def test_missing_bundle_is_data_error(self, tmp_path):
        rc = run_cli("fit", "--data", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "r"))
        assert rc == 2

    def test_bad_config_surfaces_before_compute(self, toy_bundle, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("n_iter = 10\nn_burnin = 20\n")
        out = tmp_path / "r"
        rc = run_cli("fit", "--data", str(toy_bundle), "--config", str(cfg),
                     "--out", str(out))
        assert rc == 3
        assert not (out / "chain_00.bin").exists()

    def test_two_chains_distinct_files(self, toy_bundle, tmp_path):
        out = tmp_path / "two"
        rc = run_cli(
            "fit", "--data", str(toy_bundle), "--out", str(out),
            "--chains", "2", "--workers", "1", "--seed", "5",
            "--n-iter", "40", "--n-burnin", "20",
        )
        assert rc == 0
        c0 = (out / "chain_00.bin").read_bytes()
        c1 = (out / "chain_01.bin").read_bytes()
        assert c0 != c1

    def test_worker_count_does_not_change_bytes(self, toy_bundle, tmp_path):
        blobs = {}
        for workers in (1, 2):
            out = tmp_path / f"w{workers}"
            rc = run_cli(
                "fit", "--data", str(toy_bundle), "--out", str(out),
                "--chains", "2", "--workers", str(workers), "--seed", "9",
                "--n-iter", "30", "--n-burnin", "10",
            )
            assert rc == 0
            blobs[workers] = tuple(
                (out / f"chain_{i:02d}.bin").read_bytes() for i in range(2)
            )
        assert blobs[1] == blobs[2]


class TestSummarize:
    def test_tables_written(self, toy_run, tmp_path):
        out = tmp_path / "summ"
        rc = run_cli("summarize", "--run", str(toy_run), "--out", str(out))
        assert rc == 0
        rows = (out / "summary.csv").read_text().strip().split("\n")
        assert len(rows) - 1 == 25  # p * G voxels
        cov = (out / "covariates.csv").read_text().strip().split("\n")
        assert cov[0] == "name,estimate,lower,upper"
        assert cov[1].startswith("b0_0,")
        mask = (out / "selection_mask.csv").read_text().strip().split("\n")
        assert len(mask) - 1 == 25

    def test_idempotent_bytes(self, toy_run, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert run_cli("summarize", "--run", str(toy_run), "--out", str(out1)) == 0
        assert run_cli("summarize", "--run", str(toy_run), "--out", str(out2)) == 0
        for name in ("summary.csv", "covariates.csv", "selection_mask.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_empty_run_is_data_error(self, tmp_path):
        rc = run_cli("summarize", "--run", str(tmp_path / "void"),
                     "--out", str(tmp_path / "s"))
        assert rc == 2


class TestEvaluateAndBaseline:
    def test_evaluate_writes_mse_schema(self, toy_run, toy_bundle, tmp_path):
        out = tmp_path / "eval"
        rc = run_cli("evaluate", "--run", str(toy_run), "--truth", str(toy_bundle),
                     "--out", str(out))
        assert rc == 0
        lines = (out / "mse.csv").read_text().strip().split("\n")
        assert lines[0] == "method,group_size,sigma2,mse"
        method, size, sigma2, mse = lines[1].split(",")
        assert method == "st2n-gp" and int(size) == 40
        assert float(mse) >= 0.0
        sel = (out / "selection.csv").read_text().strip().split("\n")
        assert sel[0] == "method,group,tpr,fpr"

    def test_evaluate_without_truth_is_data_error(self, toy_run, tmp_path):
        data_dir = tmp_path / "no_truth"
        from st2n.bundles import write_bundle
        from st2n.simulate import gen_toy

        data, _ = gen_toy(10, seed=0)
        write_bundle(data_dir, data, None)
        rc = run_cli("evaluate", "--run", str(toy_run), "--truth", str(data_dir),
                     "--out", str(tmp_path / "e"))
        assert rc == 2

    def test_baseline_schema(self, toy_bundle, tmp_path):
        out = tmp_path / "base"
        rc = run_cli("baseline", "--data", str(toy_bundle), "--out", str(out))
        assert rc == 0
        lines = (out / "mse.csv").read_text().strip().split("\n")
        assert lines[0] == "method,group_size,sigma2,mse"
        assert lines[1].startswith("lasso,40,")


class TestPerfectChainEvaluation:
    def test_synthetic_chain_with_truth_scores_zero(self, tmp_path):
        # hand-build a run whose every record materializes the truth
        from st2n.bundles import ChainWriter, StateLayout, write_bundle
        from st2n.fields import make_knots
        from st2n.model import ModelState
        from st2n.sampler import ChainRecord
        from st2n.simulate import gen_toy

        data, truth = gen_toy(10, seed=2)
        bundle = tmp_path / "bundle"
        write_bundle(bundle, data, truth)
        knots, basis = make_knots(data.grid)
        # knot coefficients reproducing the truth exactly: solve the
        # (overdetermined, exactly representable only approximately)
        # system; instead store zero thresholds and least-squares knots,
        # then overwrite the truth with the materialized field
        coeffs = [
            np.linalg.lstsq(basis, truth.beta0[0][:, k], rcond=None)[0]
            for k in range(data.q)
        ]
        beta_knots = np.stack(coeffs, axis=1)
        state = ModelState(
            beta_knots=beta_knots,
            alpha_knots=np.zeros((1, knots.L, data.q)),
            a_shared=1.0, a_group=np.ones(1), lambda_shared=0.0,
            lambda_group=np.zeros(1), sigma_mat=np.eye(data.q), sigma2=0.1,
            b0=np.zeros(1), b_cov=np.zeros(0),
        )
        from st2n.model import materialize_coefficients

        field = materialize_coefficients(state, basis)
        truth.beta0 = field.beta.copy()
        truth.r = field.norms.copy()
        write_bundle(bundle, data, truth)

        run_dir = tmp_path / "run"
        run_dir.mkdir()
        layout = StateLayout(L=knots.L, q=data.q, G=1, c=0)
        manifest = {
            "schema_version": 1, "layout": {"L": knots.L, "q": data.q, "G": 1, "c": 0},
            "grid_dims": list(data.grid.dims), "knots_per_dim": None,
            "bandwidth": knots.bandwidth, "covariate_names": [],
        }
        (run_dir / "run.json").write_text(json.dumps(manifest))
        with ChainWriter(run_dir / "chain_00.bin", layout) as w:
            for i in range(2):  # power-of-two count keeps the average exact
                w.write(ChainRecord(iteration=i, state=state, log_posterior=0.0,
                                    accepted=np.zeros(layout.n_flags)))
        out = tmp_path / "eval"
        rc = run_cli("evaluate", "--run", str(run_dir), "--truth", str(bundle),
                     "--out", str(out))
        assert rc == 0
        mse = float((out / "mse.csv").read_text().strip().split("\n")[1].split(",")[3])
        assert mse == 0.0
