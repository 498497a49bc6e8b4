"""Forecast tasks: datasets from raw series, mini-batch sampling, task streams.

Raw series live on a uniform time grid; gaps are explicit NaNs and any
sample whose window or horizon touches a gap is dropped. Normalization
constants are always fit on the training split and reused elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STATISTICS = ("instant", "max", "min", "mean")


class DataError(RuntimeError):
    pass


@dataclass
class SeriesBundle:
    """Aligned per-location power series (normalized by capacity) on one grid."""
    timestamps: np.ndarray                       # datetime64[s], uniform grid
    power: dict[str, np.ndarray]                 # location -> series, NaN marks gaps
    resolution: np.timedelta64
    extra_features: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        diffs = np.diff(self.timestamps)
        if len(diffs) and not np.all(diffs == self.resolution):
            raise DataError("timestamps are not on a uniform grid at the stated resolution")
        for loc, series in self.power.items():
            if len(series) != len(self.timestamps):
                raise DataError(f"series length mismatch for location {loc!r}")

    @property
    def length(self) -> int:
        return len(self.timestamps)

    def slice(self, start: int, stop: int) -> "SeriesBundle":
        return SeriesBundle(
            timestamps=self.timestamps[start:stop],
            power={k: v[start:stop] for k, v in self.power.items()},
            resolution=self.resolution,
            extra_features={loc: {k: v[start:stop] for k, v in feats.items()}
                            for loc, feats in self.extra_features.items()},
        )


@dataclass(frozen=True)
class ForecastTask:
    """(location, lead time, target statistic) with the pinball loss."""
    task_id: str
    location: str
    lead_steps: int
    statistic: str = "instant"

    def __post_init__(self):
        if self.lead_steps < 1:
            raise ValueError("lead_steps must be positive")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}; expected one of {STATISTICS}")


@dataclass
class NormStats:
    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float

    def _rng(self, lo, hi):
        span = hi - lo
        return np.where(span > 0, span, 1.0) if isinstance(span, np.ndarray) \
            else (span if span > 0 else 1.0)

    def normalize_windows(self, windows: np.ndarray) -> np.ndarray:
        return (windows - self.feature_min) / self._rng(self.feature_min, self.feature_max)

    def denormalize_windows(self, windows: np.ndarray) -> np.ndarray:
        return windows * self._rng(self.feature_min, self.feature_max) + self.feature_min

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.target_min) / self._rng(self.target_min, self.target_max)

    def denormalize_targets(self, y: np.ndarray) -> np.ndarray:
        return y * self._rng(self.target_min, self.target_max) + self.target_min

    def to_dict(self) -> dict:
        return {"feature_min": self.feature_min.tolist(),
                "feature_max": self.feature_max.tolist(),
                "target_min": self.target_min, "target_max": self.target_max}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.asarray(d["feature_min"], dtype=np.float64),
                         np.asarray(d["feature_max"], dtype=np.float64),
                         float(d["target_min"]), float(d["target_max"]))


@dataclass
class TaskDataset:
    """(window, target) pairs for one task, already normalized."""
    task: ForecastTask
    windows: np.ndarray          # (S, lag_steps, F)
    targets: np.ndarray          # (S,)
    t_indices: np.ndarray        # (S,) grid index of each window's last lag
    norm: NormStats
    timestamps: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.targets)


@dataclass
class MiniBatchSplit:
    """Per-task disjoint support/target index sets into the task datasets."""
    datasets: dict[str, TaskDataset]
    support: dict[str, np.ndarray]
    target: dict[str, np.ndarray]

    def support_arrays(self, task_id: str):
        ds, idx = self.datasets[task_id], self.support[task_id]
        return ds.windows[idx], ds.targets[idx]

    def target_arrays(self, task_id: str):
        ds, idx = self.datasets[task_id], self.target[task_id]
        return ds.windows[idx], ds.targets[idx]


@dataclass
class TaskStream:
    """Ordered (task, start, stop) grid segments replayed over a test series."""
    segments: list[tuple[ForecastTask, int, int]]
    bundle: SeriesBundle

    @property
    def spots(self) -> int:
        return sum(stop - start for _, start, stop in self.segments)


# ---------------------------------------------------------------------------
# Feature construction


def _time_features(timestamps: np.ndarray) -> np.ndarray:
    secs = timestamps.astype("datetime64[s]").astype(np.int64)
    tod = (secs % 86400) / 86400.0
    days = timestamps.astype("datetime64[D]")
    years = timestamps.astype("datetime64[Y]")
    doy = (days - years.astype("datetime64[D]")).astype(np.int64) / 365.0
    return np.stack([tod, doy], axis=1)


def feature_matrix(bundle: SeriesBundle, location: str,
                   use_time_features: bool = True) -> np.ndarray:
    """Raw (unnormalized) per-spot feature rows: power [, extras] [, tod, doy]."""
    if location not in bundle.power:
        raise DataError(f"bundle has no series for location {location!r}")
    cols = [bundle.power[location]]
    for name in sorted(bundle.extra_features.get(location, {})):
        cols.append(bundle.extra_features[location][name])
    feats = np.stack(cols, axis=1)
    if use_time_features:
        feats = np.concatenate([feats, _time_features(bundle.timestamps)], axis=1)
    return feats


def _raw_samples(bundle: SeriesBundle, task: ForecastTask, lag_steps: int,
                 use_time_features: bool = True):
    feats = feature_matrix(bundle, task.location, use_time_features)
    power = bundle.power[task.location]
    n = bundle.length
    tau = task.lead_steps
    t_indices, windows, targets = [], [], []
    for t in range(lag_steps - 1, n - tau):
        window = feats[t - lag_steps + 1:t + 1]
        horizon = power[t + 1:t + tau + 1]
        if not (np.all(np.isfinite(window)) and np.all(np.isfinite(horizon))):
            continue
        if task.statistic == "instant":
            y = horizon[-1]
        elif task.statistic == "max":
            y = horizon.max()
        elif task.statistic == "min":
            y = horizon.min()
        else:
            y = horizon.mean()
        t_indices.append(t)
        windows.append(window)
        targets.append(y)
    if not windows:
        raise DataError(f"no usable samples for task {task.task_id!r}")
    return (np.asarray(windows, dtype=np.float64), np.asarray(targets, dtype=np.float64),
            np.asarray(t_indices, dtype=np.int64))


def build_dataset(bundle: SeriesBundle, task: ForecastTask, lag_steps: int,
                  splits: tuple[float, float, float] = (0.4, 0.2, 0.4),
                  use_time_features: bool = True) -> dict[str, TaskDataset]:
    """Chronological train/val/test datasets; normalization fit on train only."""
    if lag_steps < 1:
        raise ValueError("lag_steps must be >= 1")
    if abs(sum(splits) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    windows, targets, t_idx = _raw_samples(bundle, task, lag_steps, use_time_features)
    n = bundle.length
    bounds = (int(splits[0] * n), int((splits[0] + splits[1]) * n))
    masks = {
        "train": t_idx < bounds[0],
        "val": (t_idx >= bounds[0]) & (t_idx < bounds[1]),
        "test": t_idx >= bounds[1],
    }
    if not masks["train"].any():
        raise DataError(f"empty training split for task {task.task_id!r}")
    train_w = windows[masks["train"]]
    train_y = targets[masks["train"]]
    norm = NormStats(
        feature_min=train_w.reshape(-1, train_w.shape[2]).min(axis=0),
        feature_max=train_w.reshape(-1, train_w.shape[2]).max(axis=0),
        target_min=float(train_y.min()),
        target_max=float(train_y.max()),
    )
    out = {}
    for name, mask in masks.items():
        out[name] = TaskDataset(
            task=task,
            windows=norm.normalize_windows(windows[mask]),
            targets=norm.normalize_targets(targets[mask]),
            t_indices=t_idx[mask],
            norm=norm,
            timestamps=bundle.timestamps[t_idx[mask]],
        )
    return out


def build_full_dataset(bundle: SeriesBundle, task: ForecastTask, lag_steps: int,
                       norm: NormStats, use_time_features: bool = True) -> TaskDataset:
    """Dataset over the whole bundle with externally supplied normalization
    (used by the stream runner, which must not fit constants on test data)."""
    windows, targets, t_idx = _raw_samples(bundle, task, lag_steps, use_time_features)
    return TaskDataset(
        task=task,
        windows=norm.normalize_windows(windows),
        targets=norm.normalize_targets(targets),
        t_indices=t_idx,
        norm=norm,
        timestamps=bundle.timestamps[t_idx],
    )


def sample_minibatch(datasets: dict[str, TaskDataset], batch_size: int,
                     support_fraction: float = 0.5,
                     rng: np.random.Generator | int = 0) -> MiniBatchSplit:
    """Uniform sample over the joint dataset, split per task into disjoint
    support and target sets. Either side may be empty for a task; the
    trainer skips such tasks for that step."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    sizes = {tid: ds.size for tid, ds in datasets.items()}
    total = sum(sizes.values())
    if total == 0:
        raise DataError("all task datasets are empty")
    batch_size = min(batch_size, total)
    joint = rng.choice(total, size=batch_size, replace=False)
    joint.sort()
    # map joint indices back to (task, local index) in fixed task order
    offsets, acc = {}, 0
    for tid in datasets:
        offsets[tid] = acc
        acc += sizes[tid]
    support: dict[str, np.ndarray] = {}
    target: dict[str, np.ndarray] = {}
    for tid in datasets:
        lo, hi = offsets[tid], offsets[tid] + sizes[tid]
        local = joint[(joint >= lo) & (joint < hi)] - lo
        local = rng.permutation(local)
        k = int(len(local) * support_fraction)
        support[tid] = np.sort(local[:k])
        target[tid] = np.sort(local[k:])
    return MiniBatchSplit(datasets=datasets, support=support, target=target)


def build_stream(tasks: list[ForecastTask], segment_spots: int, bundle: SeriesBundle,
                 start_index: int = 0) -> TaskStream:
    """Schedule cycling tasks 1..N in order, each holding for segment_spots."""
    if not tasks:
        raise ValueError("task list must be non-empty")
    if segment_spots < 1:
        raise ValueError("segment length must be at least one spot")
    available = bundle.length - start_index
    n_segments = available // segment_spots
    if n_segments < 1:
        raise DataError("series too short for a single stream segment")
    segments = []
    for k in range(n_segments):
        task = tasks[k % len(tasks)]
        start = start_index + k * segment_spots
        segments.append((task, start, start + segment_spots))
    return TaskStream(segments=segments, bundle=bundle)


# ---------------------------------------------------------------------------
# Synthetic series and CSV interchange


def synthetic_bundle(n_locations: int, n_steps: int, seed: int = 0,
                     resolution_minutes: int = 5, base_level: float = 0.5,
                     diurnal_amp: float = 0.2, seasonal_amp: float = 0.1,
                     ar_coeff: float = 0.9, noise_std: float = 0.05,
                     start: str = "2020-01-01") -> SeriesBundle:
    """Clipped-to-[0,1] diurnal + seasonal sinusoids with AR(1) noise and
    per-location phase offsets. Stands in for real per-farm series in tests."""
    rng = np.random.default_rng(seed)
    res = np.timedelta64(resolution_minutes * 60, "s")
    t0 = np.datetime64(start, "s")
    timestamps = t0 + res * np.arange(n_steps)
    secs = timestamps.astype(np.int64)
    tod = (secs % 86400) / 86400.0
    doy = (secs % (86400 * 365)) / (86400.0 * 365.0)
    power = {}
    for k in range(n_locations):
        phase_d = rng.uniform(0, 2 * np.pi)
        phase_s = rng.uniform(0, 2 * np.pi)
        noise = np.zeros(n_steps)
        eps = rng.normal(0.0, noise_std, size=n_steps)
        for i in range(1, n_steps):
            noise[i] = ar_coeff * noise[i - 1] + eps[i]
        series = (base_level
                  + diurnal_amp * np.sin(2 * np.pi * tod + phase_d)
                  + seasonal_amp * np.sin(2 * np.pi * doy + phase_s)
                  + noise)
        power[f"loc{k}"] = np.clip(series, 0.0, 1.0)
    return SeriesBundle(timestamps=timestamps, power=power, resolution=res)


def write_bundle_csv(bundle: SeriesBundle, directory) -> list[Path]:
    """One `timestamp,power[,feature...]` CSV per location."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for loc in sorted(bundle.power):
        extras = bundle.extra_features.get(loc, {})
        names = sorted(extras)
        path = directory / f"{loc}.csv"
        with open(path, "w") as fh:
            fh.write(",".join(["timestamp", "power"] + names) + "\n")
            for i, ts in enumerate(bundle.timestamps):
                row = [str(ts), repr(float(bundle.power[loc][i]))]
                row += [repr(float(extras[n][i])) for n in names]
                fh.write(",".join(row) + "\n")
        paths.append(path)
    return paths


def read_bundle_csv(directory, capacities: dict[str, float] | None = None) -> SeriesBundle:
    """Load a directory of per-location CSVs; power divided by capacity."""
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"no CSV files in {directory}")
    capacities = capacities or {}
    timestamps = None
    power: dict[str, np.ndarray] = {}
    extras: dict[str, dict[str, np.ndarray]] = {}
    for path in files:
        loc = path.stem
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header[:2] != ["timestamp", "power"]:
                raise DataError(f"{path}: header must start with 'timestamp,power'")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        ts = np.array([r[0] for r in rows], dtype="datetime64[s]")
        if timestamps is None:
            timestamps = ts
        elif not np.array_equal(ts, timestamps):
            raise DataError(f"{path}: timestamps not aligned across locations")
        cap = float(capacities.get(loc, 1.0))
        power[loc] = np.array([float(r[1]) for r in rows]) / cap
        if len(header) > 2:
            extras[loc] = {name: np.array([float(r[2 + k]) for r in rows])
                           for k, name in enumerate(header[2:])}
    if len(timestamps) < 2:
        raise DataError("series too short")
    resolution = timestamps[1] - timestamps[0]
    return SeriesBundle(timestamps=timestamps, power=power, resolution=resolution,
                        extra_features=extras)
