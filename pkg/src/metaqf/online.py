"""Online incremental learning over a task stream.

At every time spot the runner (re)initializes from the meta-parameters when
the task just changed or the run just started, performs the incremental
update on the newest matured samples with a forgetting factor, and then
issues the forecast for that spot (learn-then-predict).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, forward_quantiles, pinball_loss_graph, predict_batch
from .params import ParameterVector
from .tasks import TaskDataset, TaskStream, build_full_dataset, NormStats


class StreamError(RuntimeError):
    pass


class WarmupError(StreamError):
    """No matured sample is available yet for the current task."""


@dataclass
class OnlineConfig:
    window_size: int = 3        # N_lambda
    forgetting: float = 0.4     # lambda in [0, 1]
    repeats: int = 4            # N_inc
    lr: float = 1e-3            # alpha_on

    def __post_init__(self):
        if self.window_size < 1 or self.repeats < 0:
            raise ValueError("window_size must be >= 1 and repeats >= 0")
        if not 0.0 <= self.forgetting <= 1.0:
            raise ValueError("forgetting factor must lie in [0, 1]")

    @staticmethod
    def lead_time_defaults() -> "OnlineConfig":
        # grid-search result for the lead-time-switching application
        return OnlineConfig(window_size=3, forgetting=0.4, repeats=4, lr=1e-3)

    @staticmethod
    def new_site_defaults() -> "OnlineConfig":
        # grid-search result for the new-wind-farm application
        return OnlineConfig(window_size=3, forgetting=0.6, repeats=4, lr=1e-3)


@dataclass
class OnlineState:
    """Current adapted parameters plus the matured-sample buffer for one task."""
    params: ParameterVector
    task_id: str
    # (sample position in dataset, window-end index i, target index i + tau)
    buffer: list[tuple[int, int, int]] = field(default_factory=list)


def online_loss(params_vars, windows: np.ndarray, targets: np.ndarray, ages: np.ndarray,
                cfg: OnlineConfig, model_config: ModelConfig):
    """(1/N_lambda) * sum_i lambda^age_i * pinball(sample_i); ages count back
    from the newest matured sample (age 0). During warm-up fewer samples may
    be present; the divisor stays N_lambda."""
    if len(targets) == 0:
        raise WarmupError("online loss requires at least one matured sample")
    weights = np.array([cfg.forgetting ** int(a) if a > 0 else 1.0 for a in ages])
    pred = forward_quantiles(params_vars, windows, model_config)
    s, j = pred.shape
    q = np.asarray(model_config.quantiles, dtype=np.float64)
    y = ad.constant(np.repeat(np.asarray(targets, dtype=np.float64)[:, None], j, axis=1))
    r = ad.sub(y, pred)
    per_cell = ad.add(ad.cmul(ad.relu(r), q), ad.cmul(ad.relu(ad.neg(r)), 1.0 - q))
    per_sample = ad.sum_rows(ad.transpose(per_cell))      # (S,)
    return ad.cmul(ad.sum_(ad.cmul(per_sample, weights)), 1.0 / cfg.window_size)


def online_update(params: ParameterVector, windows: np.ndarray, targets: np.ndarray,
                  ages: np.ndarray, cfg: OnlineConfig,
                  model_config: ModelConfig) -> tuple[ParameterVector, bool]:
    """N_inc gradient steps on the same rolling window. On a NaN gradient the
    previous parameters are kept and the second return value is True."""
    current = params
    for _ in range(cfg.repeats):
        pv = current.to_variables()
        names = list(pv)
        loss = online_loss(pv, windows, targets, ages, cfg, model_config)
        if not np.isfinite(loss.value):
            return params, True
        grads = ad.grad(loss, [pv[n] for n in names], warn_detached=False)
        seg = {n: pv[n].value - cfg.lr * g.value for n, g in zip(names, grads)}
        if not all(np.all(np.isfinite(v)) for v in seg.values()):
            return params, True
        current = ParameterVector(seg)
    return current, False


@dataclass
class StreamResult:
    records: list[dict]
    reinit_events: list[dict]
    forecasts: np.ndarray          # (N, |Q|), finalized
    observations: np.ndarray       # (N,)
    per_spot_seconds: list[float]
    nan_events: int = 0
    # one (spot index, newest target grid index used by that spot's update)
    # pair per executed update, for external leakage audits
    update_audit: list[tuple[int, int]] = field(default_factory=list)


def run_stream(theta_meta: ParameterVector, stream: TaskStream,
               model_config: ModelConfig, cfg: OnlineConfig,
               norms: dict[str, NormStats]) -> StreamResult:
    """Replay a task stream with incremental online learning.

    ``norms`` maps task id to normalization constants fit on offline
    training data. Every issued forecast is recorded together with its
    matured observation (taken from the replayed series) for evaluation.
    """
    task_datasets: dict[str, TaskDataset] = {}
    sample_at: dict[str, dict[int, int]] = {}
    for task, _, _ in stream.segments:
        if task.task_id in task_datasets:
            continue
        if task.task_id not in norms:
            raise StreamError(f"no normalization constants for task {task.task_id!r}")
        ds = build_full_dataset(stream.bundle, task, model_config.lag_steps,
                                norms[task.task_id])
        task_datasets[task.task_id] = ds
        sample_at[task.task_id] = {int(t): k for k, t in enumerate(ds.t_indices)}

    state: OnlineState | None = None
    records: list[dict] = []
    reinits: list[dict] = []
    spot_times: list[float] = []
    forecasts, observations = [], []
    nan_events = 0
    audit: list[tuple[int, int]] = []

    for task, start, stop in stream.segments:
        tau = task.lead_steps
        ds = task_datasets[task.task_id]
        lookup = sample_at[task.task_id]
        for t in range(start, stop):
            t0 = time.perf_counter()
            if state is None or state.task_id != task.task_id:
                # run start / task switch: the next update departs from the
                # meta point; within a task the adapted parameters carry over
                reason = "start" if state is None else "task_switch"
                state = OnlineState(params=theta_meta.copy(), task_id=task.task_id)
                reinits.append({"spot": t, "task_id": task.task_id, "reason": reason})

            # matured pairs: window end i in [t - tau - N + 1, t - tau]
            rows = []
            for i in range(t - tau - cfg.window_size + 1, t - tau + 1):
                k = lookup.get(i)
                if k is not None:
                    rows.append((k, t - tau - i))
            if rows:
                idx = np.array([k for k, _ in rows])
                ages = np.array([a for _, a in rows])
                # leakage guard: every target timestamp must be <= t
                assert all(int(ds.t_indices[k]) + tau <= t for k in idx)
                audit.append((t, int(max(ds.t_indices[k] for k in idx)) + tau))
                new_params, failed = online_update(
                    state.params, ds.windows[idx], ds.targets[idx], ages, cfg, model_config)
                state.params = new_params
                nan_events += int(failed)
                state.buffer = [(int(k), int(ds.t_indices[k]), int(ds.t_indices[k]) + tau)
                                for k in idx]

            k_now = lookup.get(t)
            record = {
                "timestamp": str(stream.bundle.timestamps[t]),
                "task_id": task.task_id,
                "lead_time": tau,
            }
            if k_now is not None:
                raw = predict_batch(state.params, ds.windows[k_now][None], model_config,
                                    finalize=True)[0]
                record["quantiles"] = raw.tolist()
                record["observation"] = float(ds.targets[k_now])
                forecasts.append(raw)
                observations.append(float(ds.targets[k_now]))
            records.append(record)
            spot_times.append(time.perf_counter() - t0)

    return StreamResult(
        records=records,
        reinit_events=reinits,
        forecasts=np.asarray(forecasts) if forecasts else np.zeros((0, model_config.num_quantiles)),
        observations=np.asarray(observations),
        per_spot_seconds=spot_times,
        nan_events=nan_events,
        update_audit=audit,
    )
