"""Benchmark the compiled kernels against the NumPy fallback.

Runs the threshold forward/backward kernels and a full log-posterior
gradient at several problem sizes, then the coordinate-descent sweep.

    python benchmarks/bench_backends.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from st2n import _kernels_np

try:
    from st2n import _kernels as _compiled
except ImportError:
    _compiled = None


def _time(fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return best


def bench_threshold(impl, p, q, repeat):
    rng = np.random.default_rng(0)
    bt = rng.standard_normal((p, q))
    at = rng.standard_normal((p, q))
    g = rng.standard_normal((p, q))
    lam, lam_g = 0.6, 0.4

    def forward():
        impl.double_threshold_rows(bt, at, lam, lam_g)

    beta, u, u_norm, alpha, a_norm = impl.double_threshold_rows(bt, at, lam, lam_g)

    def backward():
        impl.double_threshold_backward(g, u, u_norm, at, a_norm, lam, lam_g)

    return _time(forward, repeat), _time(backward, repeat)


def bench_cd(impl, n, m, repeat):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((n, m))
    X -= X.mean(axis=0)
    X /= np.sqrt((X * X).mean(axis=0))
    cols = np.ascontiguousarray(X.T)
    y = rng.standard_normal(n)

    def sweep():
        r = y.copy()
        w = np.zeros(m)
        for _ in range(10):
            impl.cd_sweep(cols, r, w, 0.02)

    return _time(sweep, repeat)


def bench_gradient(repeat):
    # end-to-end log-posterior gradient at the published simulation scale
    from st2n.fields import KernelCholeskyCache, make_knots
    from st2n.model import Hyper, log_posterior_and_grad
    from st2n.sampler import SamplerConfig, initial_state
    from st2n.simulate import gen_case1

    data, _ = gen_case1(50, sigma2=1.0, seed=0)
    knots, basis = make_knots(data.grid)
    rng = np.random.default_rng(0)
    state = initial_state(SamplerConfig(), data, knots.L, rng)
    cache = KernelCholeskyCache(knots)
    hyper = Hyper()

    def grad():
        log_posterior_and_grad(state, data, basis, cache, hyper)

    grad()
    return _time(grad, repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    impls = [("numpy", _kernels_np)]
    if _compiled is not None:
        impls.append(("compiled", _compiled))
    else:
        print("compiled extension unavailable; benchmarking the fallback only")

    print(f"{'kernel':<34}{'backend':<10}{'best (us)':>12}")
    for p, q in ((400, 3), (4000, 3), (40000, 6)):
        for name, impl in impls:
            fwd, bwd = bench_threshold(impl, p, q, args.repeat)
            print(f"threshold fwd  p={p:<6} q={q:<3}      {name:<10}{fwd * 1e6:>12.1f}")
            print(f"threshold bwd  p={p:<6} q={q:<3}      {name:<10}{bwd * 1e6:>12.1f}")
    for n, m in ((100, 1200), (400, 5000)):
        for name, impl in impls:
            t = bench_cd(impl, n, m, args.repeat)
            print(f"cd 10 sweeps   n={n:<5} m={m:<6}    {name:<10}{t * 1e6:>12.1f}")

    import os

    backend = "numpy" if os.environ.get("ST2N_PURE_PYTHON") else (
        "compiled" if _compiled is not None else "numpy"
    )
    t = bench_gradient(max(3, args.repeat // 4))
    print(f"\nfull log-posterior gradient (active backend: {backend}): "
          f"{t * 1e3:.2f} ms")
    print("re-run with ST2N_PURE_PYTHON=1 to time the gradient on the fallback")


if __name__ == "__main__":
    main()
