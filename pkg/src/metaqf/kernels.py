"""Hot numeric kernels with a numba-jitted fast path.

Set the environment variable ``METAQF_NO_NUMBA=1`` before import to force
the pure-numpy fallback (useful on platforms without a working numba, and
for benchmarking; see benchmarks/bench_kernels.py).
"""

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("METAQF_NO_NUMBA", "").lower() not in ("1", "true", "yes")


def _sigmoid_impl(x):
    return 1.0 / (1.0 + np.exp(-x))


def _tanh_impl(x):
    return np.tanh(x)


def _relu_impl(x):
    return np.maximum(x, 0.0)


def _lstm_cell_impl(x, h, c, w_in, w_rec, b):
    # x: (S, F), h/c: (S, H), w_in: (F, 4H), w_rec: (H, 4H), b: (4H,)
    hid = h.shape[1]
    z = x @ w_in + h @ w_rec + b
    gi = 1.0 / (1.0 + np.exp(-z[:, :hid]))
    gf = 1.0 / (1.0 + np.exp(-z[:, hid:2 * hid]))
    gc = np.tanh(z[:, 2 * hid:3 * hid])
    go = 1.0 / (1.0 + np.exp(-z[:, 3 * hid:]))
    c_new = gf * c + gi * gc
    h_new = go * np.tanh(c_new)
    return h_new, c_new


def _pinball_terms_impl(pred, targets, quantiles):
    # pred: (S, J), targets: (S,), quantiles: (J,) -> per-sample pinball sums (S,)
    n, m = pred.shape
    out = np.zeros(n)
    for i in range(n):
        for j in range(m):
            r = targets[i] - pred[i, j]
            if r >= 0.0:
                out[i] += quantiles[j] * r
            else:
                out[i] -= (1.0 - quantiles[j]) * r
    return out


if NUMBA_ENABLED:
    from numba import njit

    _sigmoid_jit = njit(cache=True)(_sigmoid_impl)
    _tanh_jit = njit(cache=True)(_tanh_impl)
    _relu_jit = njit(cache=True)(_relu_impl)
    _lstm_cell_jit = njit(cache=True)(_lstm_cell_impl)
    _pinball_terms_jit = njit(cache=True)(_pinball_terms_impl)


def sigmoid(x):
    if NUMBA_ENABLED and x.ndim > 0:
        return _sigmoid_jit(np.ascontiguousarray(x))
    return _sigmoid_impl(x)


def tanh(x):
    if NUMBA_ENABLED and x.ndim > 0:
        return _tanh_jit(np.ascontiguousarray(x))
    return _tanh_impl(x)


def relu(x):
    if NUMBA_ENABLED and x.ndim > 0:
        return _relu_jit(np.ascontiguousarray(x))
    return _relu_impl(x)


def lstm_cell(x, h, c, w_in, w_rec, b):
    if NUMBA_ENABLED:
        return _lstm_cell_jit(
            np.ascontiguousarray(x), np.ascontiguousarray(h), np.ascontiguousarray(c),
            np.ascontiguousarray(w_in), np.ascontiguousarray(w_rec),
            np.ascontiguousarray(b),
        )
    return _lstm_cell_impl(x, h, c, w_in, w_rec, b)


def pinball_terms(pred, targets, quantiles):
    if NUMBA_ENABLED:
        return _pinball_terms_jit(
            np.ascontiguousarray(pred), np.ascontiguousarray(targets),
            np.ascontiguousarray(quantiles),
        )
    return _pinball_terms_impl(pred, targets, quantiles)
