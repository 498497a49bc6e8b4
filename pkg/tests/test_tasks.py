"""Task engine: dataset construction, normalization, mini-batch sampling,
streams, synthetic data, and CSV interchange."""

import numpy as np
import pytest

from metaqf.tasks import (DataError, ForecastTask, NormStats, SeriesBundle,
                          build_dataset, build_full_dataset, build_stream,
                          read_bundle_csv, sample_minibatch, synthetic_bundle,
                          write_bundle_csv)


def _ramp_bundle(n=60):
    """power[i] = i/n on a 5-minute grid (strictly increasing, no gaps)."""
    res = np.timedelta64(300, "s")
    ts = np.datetime64("2021-01-01", "s") + res * np.arange(n)
    return SeriesBundle(timestamps=ts, power={"loc0": np.arange(n) / n}, resolution=res)


IDENTITY_NORM_3F = NormStats(feature_min=np.zeros(3), feature_max=np.ones(3),
                             target_min=0.0, target_max=1.0)


# ---------------------------------------------------------------------------
# bundle and task validation


def test_bundle_rejects_nonuniform_grid():
    ts = np.array(["2021-01-01T00:00", "2021-01-01T00:05", "2021-01-01T00:11"],
                  dtype="datetime64[s]")
    with pytest.raises(DataError):
        SeriesBundle(timestamps=ts, power={"a": np.zeros(3)},
                     resolution=np.timedelta64(300, "s"))


def test_bundle_rejects_length_mismatch():
    ts = np.datetime64("2021-01-01", "s") + np.timedelta64(300, "s") * np.arange(4)
    with pytest.raises(DataError):
        SeriesBundle(timestamps=ts, power={"a": np.zeros(3)},
                     resolution=np.timedelta64(300, "s"))


def test_task_validation():
    with pytest.raises(ValueError):
        ForecastTask("t", "loc0", 0)
    with pytest.raises(ValueError):
        ForecastTask("t", "loc0", 1, statistic="median")


# ---------------------------------------------------------------------------
# dataset construction


def test_constant_series_constant_targets():
    n = 80
    res = np.timedelta64(300, "s")
    ts = np.datetime64("2021-01-01", "s") + res * np.arange(n)
    bundle = SeriesBundle(timestamps=ts, power={"loc0": np.full(n, 0.37)}, resolution=res)
    data = build_dataset(bundle, ForecastTask("t", "loc0", 2), lag_steps=3)
    for split in data.values():
        # degenerate target range -> all normalized targets identical
        assert np.all(split.targets == split.targets[0])
        denorm = split.norm.denormalize_targets(split.targets)
        assert np.allclose(denorm, 0.37, rtol=0, atol=1e-12)


def test_instant_target_indexing():
    # series 0,1,2,... ; tau=2; window ending at t=10 must predict value at t=12
    bundle = _ramp_bundle()
    ds = build_full_dataset(bundle, ForecastTask("t", "loc0", 2), lag_steps=3,
                            norm=IDENTITY_NORM_3F)
    k = int(np.where(ds.t_indices == 10)[0][0])
    assert ds.targets[k] == bundle.power["loc0"][12]


@pytest.mark.parametrize("stat,fn", [("max", np.max), ("min", np.min), ("mean", np.mean)])
def test_horizon_statistics_match_brute_force(stat, fn):
    bundle = synthetic_bundle(1, 120, seed=3)
    tau = 6
    ds = build_full_dataset(bundle, ForecastTask("t", "loc0", tau, statistic=stat),
                            lag_steps=4, norm=IDENTITY_NORM_3F)
    power = bundle.power["loc0"]
    for k in range(ds.size):
        t = int(ds.t_indices[k])
        # half-open horizon (t, t+tau]
        assert ds.targets[k] == pytest.approx(fn(power[t + 1:t + tau + 1]), abs=1e-12)


def test_normalization_round_trip_and_fit_on_train_only(two_task_data):
    for data in two_task_data.values():
        train = data["train"]
        raw = train.norm.denormalize_windows(train.windows)
        again = train.norm.normalize_windows(raw)
        assert np.allclose(again, train.windows, rtol=0, atol=1e-12)
        # constants must be exactly the train-split min/max
        flat = raw.reshape(-1, raw.shape[2])
        assert np.allclose(train.norm.feature_min, flat.min(axis=0), atol=1e-9)
        assert np.allclose(train.norm.feature_max, flat.max(axis=0), atol=1e-9)
        # all splits share the train-fitted constants
        for split in data.values():
            assert split.norm is train.norm or np.array_equal(
                split.norm.feature_min, train.norm.feature_min)


def test_no_lookahead_leakage(two_task_data):
    for data in two_task_data.values():
        tau = data["train"].task.lead_steps
        for split in data.values():
            for k in range(split.size):
                t = int(split.t_indices[k])
                # window covers [t - lag + 1, t]; target sits at/over (t, t + tau]
                assert t < t + tau


def test_gap_samples_dropped():
    bundle = synthetic_bundle(1, 100, seed=4)
    bundle.power["loc0"][50] = np.nan
    ds = build_full_dataset(bundle, ForecastTask("t", "loc0", 2), lag_steps=3,
                            norm=IDENTITY_NORM_3F)
    lag, tau = 3, 2
    for t in ds.t_indices:
        # neither the window [t-lag+1, t] nor the horizon (t, t+tau] touches index 50
        assert not (t - lag + 1 <= 50 <= t + tau)


def test_empty_dataset_errors():
    bundle = synthetic_bundle(1, 100, seed=5)
    with pytest.raises(DataError):
        build_dataset(bundle, ForecastTask("t", "missing", 2), lag_steps=3)
    bundle.power["loc0"][:] = np.nan
    with pytest.raises(DataError):
        build_full_dataset(bundle, ForecastTask("t", "loc0", 2), lag_steps=3,
                           norm=IDENTITY_NORM_3F)


# ---------------------------------------------------------------------------
# mini-batch sampling


def test_minibatch_split_sizes(two_task_data):
    ds = {"a": two_task_data["loc0_t3"]["train"]}
    batch = sample_minibatch(ds, 10, support_fraction=0.5, rng=0)
    assert len(batch.support["a"]) == 5 and len(batch.target["a"]) == 5


def test_minibatch_deterministic_and_disjoint(two_task_data):
    train = {tid: d["train"] for tid, d in two_task_data.items()}
    b1 = sample_minibatch(train, 16, rng=np.random.default_rng(3))
    b2 = sample_minibatch(train, 16, rng=np.random.default_rng(3))
    for tid in train:
        assert np.array_equal(b1.support[tid], b2.support[tid])
        assert np.array_equal(b1.target[tid], b2.target[tid])
        assert not set(b1.support[tid]) & set(b1.target[tid])


def test_minibatch_share_uniform_over_joint():
    # 4 equal-sized tasks; over ~10^4 draws each task's share is 0.25 +/- 0.02
    base = synthetic_bundle(1, 400, seed=6)
    ds0 = build_full_dataset(base, ForecastTask("a", "loc0", 2), lag_steps=3,
                             norm=IDENTITY_NORM_3F)
    datasets = {}
    for name in "abcd":
        import copy
        d = copy.copy(ds0)
        datasets[name] = d
    rng = np.random.default_rng(7)
    counts = {name: 0 for name in datasets}
    draws = 0
    for _ in range(125):
        b = sample_minibatch(datasets, 80, support_fraction=0.5, rng=rng)
        for name in datasets:
            c = len(b.support[name]) + len(b.target[name])
            counts[name] += c
            draws += c
    for name in datasets:
        assert abs(counts[name] / draws - 0.25) < 0.02


def test_minibatch_empty_error():
    with pytest.raises(DataError):
        sample_minibatch({}, 8)


# ---------------------------------------------------------------------------
# streams


def test_stream_twelve_tasks_segment_six():
    bundle = synthetic_bundle(1, 72, seed=8)
    tasks = [ForecastTask(f"t{i}", "loc0", i + 1) for i in range(12)]
    stream = build_stream(tasks, 6, bundle)
    assert len(stream.segments) == 12
    assert all(stop - start == 6 for _, start, stop in stream.segments)
    assert stream.spots == 72


def test_stream_single_task_whole_series():
    bundle = synthetic_bundle(1, 50, seed=9)
    stream = build_stream([ForecastTask("t", "loc0", 2)], 50, bundle)
    assert len(stream.segments) == 1
    assert stream.segments[0][1:] == (0, 50)


def test_stream_schedule_enumeration():
    bundle = synthetic_bundle(1, 100, seed=10)
    tasks = [ForecastTask(f"t{i}", "loc0", 2) for i in range(3)]
    seg = 7
    stream = build_stream(tasks, seg, bundle, start_index=4)
    n_segments = (100 - 4) // seg
    assert len(stream.segments) == n_segments
    prev_stop = 4
    for k, (task, start, stop) in enumerate(stream.segments):
        assert task.task_id == f"t{k % 3}"     # cycles tasks 1..N in order
        assert start == prev_stop and stop - start == seg
        prev_stop = stop


def test_stream_too_short():
    bundle = synthetic_bundle(1, 5, seed=11)
    with pytest.raises(DataError):
        build_stream([ForecastTask("t", "loc0", 2)], 10, bundle)
    with pytest.raises(ValueError):
        build_stream([], 5, bundle)


# ---------------------------------------------------------------------------
# synthetic generator and CSV interchange


def test_synthetic_deterministic_and_bounded():
    a = synthetic_bundle(2, 200, seed=12)
    b = synthetic_bundle(2, 200, seed=12)
    for loc in a.power:
        assert np.array_equal(a.power[loc], b.power[loc])
        assert np.all((a.power[loc] >= 0) & (a.power[loc] <= 1))


def test_synthetic_constant_when_no_amplitude_no_noise():
    b = synthetic_bundle(1, 100, seed=13, diurnal_amp=0, seasonal_amp=0, noise_std=0)
    assert np.all(b.power["loc0"] == b.power["loc0"][0])


def test_synthetic_ar1_autocorrelation():
    b = synthetic_bundle(1, 100_000, seed=14, diurnal_amp=0, seasonal_amp=0,
                         ar_coeff=0.9, noise_std=0.02)
    x = b.power["loc0"] - b.power["loc0"].mean()
    rho = np.dot(x[1:], x[:-1]) / np.dot(x, x)
    assert 0.85 <= rho <= 0.95


def test_csv_round_trip(tmp_path):
    bundle = synthetic_bundle(2, 60, seed=15)
    bundle.extra_features["loc0"] = {"wind": np.random.default_rng(0).uniform(size=60)}
    write_bundle_csv(bundle, tmp_path)
    back = read_bundle_csv(tmp_path)
    assert np.array_equal(back.timestamps, bundle.timestamps)
    for loc in bundle.power:
        assert np.array_equal(back.power[loc], bundle.power[loc])
    assert np.array_equal(back.extra_features["loc0"]["wind"],
                          bundle.extra_features["loc0"]["wind"])


def test_csv_capacity_normalization(tmp_path):
    bundle = synthetic_bundle(1, 30, seed=16)
    write_bundle_csv(bundle, tmp_path)
    back = read_bundle_csv(tmp_path, capacities={"loc0": 2.0})
    assert np.allclose(back.power["loc0"], bundle.power["loc0"] / 2.0, rtol=0, atol=1e-15)


def test_csv_errors(tmp_path):
    with pytest.raises(DataError):
        read_bundle_csv(tmp_path / "empty")
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "x.csv").write_text("time,value\n2021-01-01T00:00:00,1.0\n")
    with pytest.raises(DataError):
        read_bundle_csv(bad)
