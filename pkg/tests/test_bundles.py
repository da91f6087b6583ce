"""On-disk formats: bit-exact bundle round trips, frame-atomic chain
files with torn-frame tolerance, and the flat config parser."""

import numpy as np
import pytest

from st2n.bundles import (
    BundleError,
    ChainWriter,
    StateLayout,
    TraceWriter,
    pack_state,
    parse_config_text,
    read_bundle,
    read_chain,
    unpack_state,
    write_bundle,
)
from st2n.sampler import ChainRecord
from st2n.simulate import gen_case1, gen_toy


class TestBundleRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path):
        data, truth = gen_toy(12, sigma2=0.3, seed=3)
        write_bundle(tmp_path / "b", data, truth)
        back, truth2 = read_bundle(tmp_path / "b")
        np.testing.assert_array_equal(back.y, data.y)
        np.testing.assert_array_equal(back.D, data.D)
        np.testing.assert_array_equal(back.group_of, data.group_of)
        np.testing.assert_array_equal(truth2.beta0, truth.beta0)
        np.testing.assert_array_equal(truth2.r, truth.r)
        assert truth2.sigma2_true == truth.sigma2_true
        assert truth2.seed == truth.seed

    def test_round_trip_with_covariates(self, tmp_path):
        data, truth = gen_toy(10, seed=4)
        rng = np.random.default_rng(0)
        data.X = rng.standard_normal((data.n, 2)) * 1e-7  # exercise tiny floats
        write_bundle(tmp_path / "b", data, None, covariate_names=["age", "dose"])
        back, truth2 = read_bundle(tmp_path / "b")
        np.testing.assert_array_equal(back.X, data.X)
        assert truth2 is None

    def test_meta_consistency_checked(self, tmp_path):
        data, truth = gen_toy(8, seed=5)
        write_bundle(tmp_path / "b", data, truth)
        bad = (tmp_path / "b" / "predictors.bin").read_bytes()[:-8]
        (tmp_path / "b" / "predictors.bin").write_bytes(bad)
        with pytest.raises(BundleError):
            read_bundle(tmp_path / "b")

    def test_missing_bundle(self, tmp_path):
        with pytest.raises(BundleError):
            read_bundle(tmp_path / "nothing")

    def test_case1_bundle_shape(self, tmp_path):
        data, truth = gen_case1(4, sigma2=1.0, seed=0)
        write_bundle(tmp_path / "b", data, truth)
        import json

        meta = json.loads((tmp_path / "b" / "meta.json").read_text())
        assert meta["n"] == 12 and meta["p"] == 400 and meta["q"] == 3
        assert meta["G"] == 3 and meta["endianness"] == "little"
        assert (tmp_path / "b" / "predictors.bin").stat().st_size == 8 * 12 * 400 * 3


def _toy_record(layout, seed=0, iteration=17):
    rng = np.random.default_rng(seed)
    from st2n.model import ModelState

    state = ModelState(
        beta_knots=rng.standard_normal((layout.L, layout.q)),
        alpha_knots=rng.standard_normal((layout.G, layout.L, layout.q)),
        a_shared=float(rng.uniform(0.5, 2.0)),
        a_group=rng.uniform(0.5, 2.0, layout.G),
        lambda_shared=float(rng.uniform(0, 1)),
        lambda_group=rng.uniform(0, 1, layout.G),
        sigma_mat=np.eye(layout.q) + 0.1,
        sigma2=float(rng.uniform(0.5, 2.0)),
        b0=rng.standard_normal(layout.G),
        b_cov=rng.standard_normal(layout.c),
    )
    return ChainRecord(
        iteration=iteration, state=state,
        log_posterior=float(rng.standard_normal()),
        accepted=rng.integers(0, 2, layout.n_flags).astype(float),
    )


class TestStateVector:
    def test_pack_unpack_round_trip(self):
        layout = StateLayout(L=6, q=3, G=2, c=2)
        rec = _toy_record(layout, seed=1)
        vec = pack_state(rec.state)
        assert vec.size == layout.state_len
        back = unpack_state(vec, layout)
        np.testing.assert_array_equal(back.beta_knots, rec.state.beta_knots)
        np.testing.assert_array_equal(back.alpha_knots, rec.state.alpha_knots)
        assert back.a_shared == rec.state.a_shared
        np.testing.assert_array_equal(back.lambda_group, rec.state.lambda_group)
        np.testing.assert_array_equal(back.sigma_mat, rec.state.sigma_mat)
        np.testing.assert_array_equal(back.b_cov, rec.state.b_cov)


class TestChainFiles:
    def test_frames_round_trip(self, tmp_path):
        layout = StateLayout(L=4, q=2, G=1, c=0)
        path = tmp_path / "chain.bin"
        recs = [_toy_record(layout, seed=s, iteration=s) for s in range(5)]
        with ChainWriter(path, layout) as writer:
            for rec in recs:
                writer.write(rec)
        back, truncated = read_chain(path, layout)
        assert not truncated
        assert [r.iteration for r in back] == [0, 1, 2, 3, 4]
        for a, b in zip(recs, back):
            assert a.log_posterior == b.log_posterior
            np.testing.assert_array_equal(a.accepted, b.accepted)
            np.testing.assert_array_equal(pack_state(a.state), pack_state(b.state))

    def test_torn_final_frame_reports_valid_prefix(self, tmp_path):
        layout = StateLayout(L=4, q=2, G=1, c=0)
        path = tmp_path / "chain.bin"
        with ChainWriter(path, layout) as writer:
            for s in range(4):
                writer.write(_toy_record(layout, seed=s, iteration=s))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 21])  # tear mid-frame
        back, truncated = read_chain(path, layout)
        assert truncated
        assert [r.iteration for r in back] == [0, 1, 2]

    def test_garbage_length_prefix_rejected(self, tmp_path):
        layout = StateLayout(L=2, q=1, G=1, c=0)
        path = tmp_path / "chain.bin"
        with ChainWriter(path, layout) as writer:
            writer.write(_toy_record(layout, seed=0, iteration=0))
        with open(path, "ab") as fh:
            fh.write(b"\xff" * 64)
        back, truncated = read_chain(path, layout)
        assert truncated and len(back) == 1

    def test_trace_writer_rates(self, tmp_path):
        layout = StateLayout(L=2, q=1, G=1, c=0)
        path = tmp_path / "trace.csv"
        with TraceWriter(path, n_groups=1) as tw:
            for s in range(3):
                rec = _toy_record(layout, seed=s, iteration=s)
                rec.accepted = np.ones(layout.n_flags) * (s % 2)
                tw.write(rec)
        lines = path.read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[0] == "iteration" and "acc_hmc_shared" in header
        assert len(lines) == 4
        last = dict(zip(header, lines[-1].split(",")))
        assert float(last["acc_hmc_shared"]) == pytest.approx(1 / 3)


class TestConfigParse:
    def test_basic_keys_and_comments(self):
        text = """
        # sampler budget
        n_iter = 200
        seed=7   # trailing comment
        bandwidth = 0.25

        """
        cfg = parse_config_text(text)
        assert cfg == {"n_iter": "200", "seed": "7", "bandwidth": "0.25"}

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError):
            parse_config_text("n_iter 200")
