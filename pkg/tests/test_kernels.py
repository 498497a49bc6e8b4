"""Kernel dispatch: the jitted fast path and the pure-numpy fallback must
compute the same values, and the LSTM cell must match a hand-written oracle."""

import numpy as np

from metaqf import kernels


def _random_cell_inputs(seed, s=5, f=3, h=4):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(s, f)), rng.normal(size=(s, h)), rng.normal(size=(s, h)),
            rng.normal(size=(f, 4 * h)), rng.normal(size=(h, 4 * h)),
            rng.normal(size=4 * h))


def test_elementwise_dispatch_matches_pure_impl():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 7))
    assert np.allclose(kernels.sigmoid(x), kernels._sigmoid_impl(x), rtol=0, atol=1e-15)
    assert np.allclose(kernels.tanh(x), kernels._tanh_impl(x), rtol=0, atol=1e-15)
    assert np.array_equal(kernels.relu(x), kernels._relu_impl(x))


def test_elementwise_handles_scalars():
    assert kernels.sigmoid(np.asarray(0.0)) == 0.5
    assert kernels.relu(np.asarray(-1.0)) == 0.0


def test_lstm_cell_dispatch_matches_pure_impl():
    args = _random_cell_inputs(1)
    h_fast, c_fast = kernels.lstm_cell(*args)
    h_ref, c_ref = kernels._lstm_cell_impl(*args)
    assert np.allclose(h_fast, h_ref, rtol=0, atol=1e-12)
    assert np.allclose(c_fast, c_ref, rtol=0, atol=1e-12)


def test_lstm_cell_matches_hand_written_oracle():
    # gate layout: [input | forget | cell(tanh) | output] along the 4H axis
    x, h, c, w_in, w_rec, b = _random_cell_inputs(2)
    hid = h.shape[1]
    z = x @ w_in + h @ w_rec + b

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    gi, gf = sig(z[:, :hid]), sig(z[:, hid:2 * hid])
    gc, go = np.tanh(z[:, 2 * hid:3 * hid]), sig(z[:, 3 * hid:])
    c_new = gf * c + gi * gc
    h_new = go * np.tanh(c_new)

    h_out, c_out = kernels.lstm_cell(x, h, c, w_in, w_rec, b)
    assert np.allclose(h_out, h_new, rtol=0, atol=1e-12)
    assert np.allclose(c_out, c_new, rtol=0, atol=1e-12)


def test_pinball_terms_matches_numpy_oracle():
    rng = np.random.default_rng(3)
    pred = rng.normal(size=(8, 5))
    targets = rng.normal(size=8)
    q = np.sort(rng.uniform(0.05, 0.95, size=5))
    r = targets[:, None] - pred
    oracle = (q * np.maximum(0.0, r) + (1 - q) * np.maximum(0.0, -r)).sum(axis=1)
    assert np.allclose(kernels.pinball_terms(pred, targets, q), oracle, rtol=0, atol=1e-12)
