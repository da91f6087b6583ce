"""Backend checks: the compiled extension and the NumPy fallback must
agree with each other and with the scalar reference operators."""

import numpy as np
import pytest

from helpers import st2n_ref
from st2n import _kernels_np
from st2n import kernels

try:
    from st2n import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = [("numpy", _kernels_np)]
if _compiled is not None:
    BACKENDS.append(("compiled", _compiled))


def _random_fields(seed=0, p=257, q=3):
    rng = np.random.default_rng(seed)
    bt = rng.standard_normal((p, q)) * rng.uniform(0.1, 2.0, (p, 1))
    at = rng.standard_normal((p, q)) * rng.uniform(0.1, 2.0, (p, 1))
    v = rng.standard_normal((p, q))
    return bt, at, v


def test_compiled_backend_present():
    # the build ships the extension; the fallback is for degraded installs
    assert _compiled is not None, "compiled kernel extension failed to build"


@pytest.mark.parametrize("name,impl", BACKENDS)
class TestAgainstScalarReference:
    def test_st2n_rows(self, name, impl):
        bt, _, _ = _random_fields(1)
        out, norms = impl.st2n_rows(bt, 0.9)
        for i in range(0, bt.shape[0], 7):
            np.testing.assert_allclose(out[i], st2n_ref(bt[i], 0.9), rtol=1e-14, atol=0)
            assert norms[i] == pytest.approx(np.linalg.norm(bt[i]), rel=1e-14)

    def test_st2n_rows_var(self, name, impl):
        bt, _, _ = _random_fields(2)
        lams = np.abs(np.random.default_rng(3).standard_normal(bt.shape[0]))
        out, _ = impl.st2n_rows_var(bt, lams)
        for i in range(0, bt.shape[0], 11):
            np.testing.assert_allclose(
                out[i], st2n_ref(bt[i], lams[i]), rtol=1e-14, atol=0
            )

    def test_jvp_rows_matches_finite_differences(self, name, impl):
        bt, _, v = _random_fields(4)
        lam = 0.8
        norms = np.linalg.norm(bt, axis=1)
        jv = impl.jvp_rows(bt, norms, lam, v)
        h = 1e-7
        for i in range(0, bt.shape[0], 13):
            if abs(norms[i] - lam) < 1e-3:
                continue
            fd = (st2n_ref(bt[i] + h * v[i], lam) - st2n_ref(bt[i] - h * v[i], lam)) / (
                2 * h
            )
            np.testing.assert_allclose(jv[i], fd, rtol=1e-5, atol=1e-10)

    def test_double_threshold_rows(self, name, impl):
        bt, at, _ = _random_fields(5)
        lam, lam_g = 0.7, 0.4
        beta, u, u_norm, alpha, a_norm = impl.double_threshold_rows(bt, at, lam, lam_g)
        for i in range(0, bt.shape[0], 17):
            alpha_ref = st2n_ref(at[i], lam_g)
            u_ref = bt[i] + alpha_ref
            np.testing.assert_allclose(alpha[i], alpha_ref, rtol=1e-14, atol=0)
            np.testing.assert_allclose(u[i], u_ref, rtol=1e-14, atol=0)
            np.testing.assert_allclose(beta[i], st2n_ref(u_ref, lam), rtol=1e-14, atol=0)

    def test_thresholded_rows_are_positive_zero(self, name, impl):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((100, 3)) * 0.1 - 0.05
        out, norms = impl.st2n_rows(x, 5.0)
        assert np.all(out == 0.0)
        assert not np.any(np.signbit(out))


@pytest.mark.skipif(_compiled is None, reason="extension unavailable")
class TestBackendParity:
    def test_forward_and_backward_agree(self):
        bt, at, v = _random_fields(7, p=311)
        lam, lam_g = 0.6, 0.3
        f_np = _kernels_np.double_threshold_rows(bt, at, lam, lam_g)
        f_cy = _compiled.double_threshold_rows(bt, at, lam, lam_g)
        for a, b in zip(f_np, f_cy):
            np.testing.assert_allclose(a, b, rtol=1e-15, atol=0)
        g_np = _kernels_np.double_threshold_backward(
            v, f_np[1], f_np[2], at, f_np[4], lam, lam_g
        )
        g_cy = _compiled.double_threshold_backward(
            v, f_cy[1], f_cy[2], at, f_cy[4], lam, lam_g
        )
        for a, b in zip(g_np, g_cy):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)

    def test_zero_patterns_identical(self):
        bt, at, _ = _random_fields(8)
        lam, lam_g = 1.1, 0.9
        beta_np = _kernels_np.double_threshold_rows(bt, at, lam, lam_g)[0]
        beta_cy = _compiled.double_threshold_rows(bt, at, lam, lam_g)[0]
        np.testing.assert_array_equal(beta_np == 0.0, beta_cy == 0.0)

    def test_cd_sweep_agrees(self):
        rng = np.random.default_rng(9)
        n, m = 60, 25
        X = rng.standard_normal((n, m))
        X -= X.mean(axis=0)
        X /= np.sqrt((X * X).mean(axis=0))
        cols = np.ascontiguousarray(X.T)
        y = rng.standard_normal(n)
        r1, w1 = y.copy(), np.zeros(m)
        r2, w2 = y.copy(), np.zeros(m)
        for _ in range(5):
            d1 = _kernels_np.cd_sweep(cols, r1, w1, 0.05)
            d2 = _compiled.cd_sweep(cols, r2, w2, 0.05)
            assert d1 == pytest.approx(d2, rel=1e-12, abs=1e-15)
        np.testing.assert_allclose(w1, w2, rtol=1e-12, atol=1e-15)


def test_dispatcher_exports_active_backend():
    assert kernels.BACKEND in {"compiled", "numpy"}
    out, _ = kernels.st2n_rows(np.array([[3.0, 4.0]]), 2.0)
    np.testing.assert_allclose(out, [[1.8, 2.4]], rtol=1e-15)
