"""Compare the jitted kernels against the pure-numpy fallback.

Run twice to see both paths:

    python benchmarks/bench_kernels.py              # jitted (default)
    METAQF_NO_NUMBA=1 python benchmarks/bench_kernels.py

Each benchmark times the public dispatch wrappers, so whichever path the
environment selects is what gets measured. The script also cross-checks the
two implementations against each other before timing.
"""

import argparse
import time

import numpy as np

from metaqf import kernels


def _time(fn, *args, repeats=200, warmup=5):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench(repeats: int):
    rng = np.random.default_rng(0)
    hidden, features, batch = 64, 8, 256

    x = rng.normal(0.0, 1.0, (batch, features))
    h = rng.normal(0.0, 1.0, (batch, hidden))
    c = rng.normal(0.0, 1.0, (batch, hidden))
    w_in = rng.normal(0.0, 0.1, (features, 4 * hidden))
    w_rec = rng.normal(0.0, 0.1, (hidden, 4 * hidden))
    bias = rng.normal(0.0, 0.1, 4 * hidden)

    preds = rng.normal(0.0, 1.0, (batch, 19))
    targets = rng.normal(0.0, 1.0, batch)
    quantiles = np.linspace(0.05, 0.95, 19)

    # correctness cross-check: dispatch vs pure implementation
    got_h, got_c = kernels.lstm_cell(x, h, c, w_in, w_rec, bias)
    ref_h, ref_c = kernels._lstm_cell_impl(x, h, c, w_in, w_rec, bias)
    assert np.allclose(got_h, ref_h, atol=1e-12) and np.allclose(got_c, ref_c, atol=1e-12)
    assert np.allclose(kernels.pinball_terms(preds, targets, quantiles),
                       kernels._pinball_terms_impl(preds, targets, quantiles),
                       atol=1e-12)

    path = "numba jit" if kernels.NUMBA_ENABLED else "pure numpy (METAQF_NO_NUMBA)"
    print(f"active kernel path: {path}")
    print(f"{'kernel':<16}{'mean time':>14}")
    rows = [
        ("sigmoid", kernels.sigmoid, (h,)),
        ("tanh", kernels.tanh, (h,)),
        ("relu", kernels.relu, (h,)),
        ("lstm_cell", kernels.lstm_cell, (x, h, c, w_in, w_rec, bias)),
        ("pinball_terms", kernels.pinball_terms, (preds, targets, quantiles)),
    ]
    for name, fn, args in rows:
        dt = _time(fn, *args, repeats=repeats)
        print(f"{name:<16}{dt * 1e6:>11.1f} us")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    bench(parser.parse_args().repeats)
