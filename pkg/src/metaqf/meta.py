"""Offline meta-training: per-task inner adaptation, weighted meta-loss,
first/second-order outer updates, threshold-triggered mode switch, early stop.

The first-order mode treats each task's adapted parameters as constants of
the meta-parameters (the cross-derivative term is dropped); the second-order
mode differentiates through every inner update.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .model import ModelConfig, dataset_loss
from .params import ParameterVector
from .tasks import MiniBatchSplit, TaskDataset, sample_minibatch

FIRST_ORDER = "first_order"
SECOND_ORDER = "second_order"


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log or []


@dataclass
class MetaConfig:
    inner_steps: int = 4          # paper-default M
    inner_lr: float = 5e-3
    outer_lr: float = 1e-3
    # None resolves to 0.5 x first-epoch average meta-loss
    second_order_threshold: float | None = None
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 32
    support_fraction: float = 0.5
    seed: int = 0
    outer_optimizer: str = "adam"   # "adam" | "sgd"

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.outer_optimizer not in ("adam", "sgd"):
            raise ValueError("outer_optimizer must be 'adam' or 'sgd'")


@dataclass
class InnerTrajectory:
    """Adapted parameter sequence for one task; params[0] is the meta point."""
    task_id: str
    params: list[dict[str, Variable]]
    support_losses: list[float] = field(default_factory=list)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: ParameterVector, grads: ParameterVector) -> ParameterVector:
        return theta - grads * self.lr


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: ParameterVector | None = None
        self.v: ParameterVector | None = None
        self.t = 0

    def step(self, theta: ParameterVector, grads: ParameterVector) -> ParameterVector:
        if self.m is None:
            self.m = grads.zeros_like()
            self.v = grads.zeros_like()
        self.t += 1
        new = {}
        for name, g in grads:
            m = self.beta1 * self.m.segments[name] + (1 - self.beta1) * g
            v = self.beta2 * self.v.segments[name] + (1 - self.beta2) * g * g
            self.m.segments[name] = m
            self.v.segments[name] = v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            new[name] = theta.segments[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return ParameterVector(new)


def make_optimizer(cfg: MetaConfig):
    return Adam(cfg.outer_lr) if cfg.outer_optimizer == "adam" else SGD(cfg.outer_lr)


def inner_adapt(theta_vars: Mapping[str, Variable], support_windows: np.ndarray,
                support_targets: np.ndarray, model_config: ModelConfig,
                inner_steps: int, inner_lr: float, differentiable: bool,
                task_id: str = "") -> InnerTrajectory:
    """M gradient-descent steps on the support pinball loss.

    With ``differentiable`` the whole trajectory stays connected to the
    starting variables; otherwise each step starts from fresh leaves.
    """
    if len(support_targets) == 0:
        raise ValueError("inner_adapt requires a non-empty support set")
    current = dict(theta_vars)
    trajectory = InnerTrajectory(task_id=task_id, params=[current])
    for m in range(inner_steps):
        loss = dataset_loss(current, support_windows, support_targets, model_config)
        if not np.isfinite(loss.value):
            raise TrainingDivergedError(
                f"NaN support loss in inner step {m + 1} of task {task_id!r}")
        trajectory.support_losses.append(loss.item())
        names = list(current)
        grads = ad.grad(loss, [current[n] for n in names], warn_detached=False)
        if differentiable:
            current = {n: ad.sub(current[n], ad.cmul(g, inner_lr))
                       for n, g in zip(names, grads)}
        else:
            current = {n: ad.parameter(current[n].value - inner_lr * g.value)
                       for n, g in zip(names, grads)}
        trajectory.params.append(current)
    return trajectory


def weighted_meta_loss(trajectories: list[InnerTrajectory],
                       target_sets: dict[str, tuple[np.ndarray, np.ndarray]],
                       inner_steps: int, model_config: ModelConfig) -> Variable:
    """sum_n sum_{m=1..M} (m/M) * target loss at the m-th adapted parameters.

    With M = 0 this degenerates to the plain target loss at the meta point.
    """
    if not trajectories:
        raise ValueError("no adaptable tasks in this batch")
    total: Variable | None = None
    for traj in trajectories:
        windows, targets = target_sets[traj.task_id]
        if inner_steps == 0:
            term = dataset_loss(traj.params[0], windows, targets, model_config)
            total = term if total is None else ad.add(total, term)
            continue
        for m in range(1, inner_steps + 1):
            term = ad.cmul(dataset_loss(traj.params[m], windows, targets, model_config),
                           m / inner_steps)
            total = term if total is None else ad.add(total, term)
    return total


def meta_gradient(theta: ParameterVector, batch: MiniBatchSplit,
                  model_config: ModelConfig, cfg: MetaConfig,
                  mode: str) -> tuple[ParameterVector, float]:
    """Meta-gradient and meta-loss value for one mini-batch in either mode.

    Tasks with an empty support or target side are skipped for this step.
    """
    if mode not in (FIRST_ORDER, SECOND_ORDER):
        raise ValueError(f"unknown mode {mode!r}")
    # with a zero inner rate the modes coincide exactly; use one code path so
    # the results are bit-identical
    if cfg.inner_lr == 0.0 and cfg.inner_steps > 0:
        mode = FIRST_ORDER
    theta_vars = {n: ad.parameter(v.copy()) for n, v in theta.segments.items()}
    names = list(theta_vars)

    trajectories = []
    target_sets = {}
    for tid in batch.datasets:
        if len(batch.support[tid]) == 0 or len(batch.target[tid]) == 0:
            continue
        sw, st = batch.support_arrays(tid)
        trajectories.append(inner_adapt(theta_vars, sw, st, model_config,
                                        cfg.inner_steps, cfg.inner_lr,
                                        differentiable=(mode == SECOND_ORDER),
                                        task_id=tid))
        target_sets[tid] = batch.target_arrays(tid)
    if not trajectories:
        raise ValueError("every task in the batch was skipped (empty support or target)")

    if mode == SECOND_ORDER or cfg.inner_steps == 0:
        loss = weighted_meta_loss(trajectories, target_sets, cfg.inner_steps, model_config)
        if not np.isfinite(loss.value):
            raise TrainingDivergedError("NaN meta-loss")
        grads = ad.grad(loss, [theta_vars[n] for n in names], warn_detached=False)
        gseg = {n: g.value.copy() for n, g in zip(names, grads)}
        loss_value = loss.item()
    else:
        # first order: d/d(theta_m) only, accumulated at the adapted points,
        # taking theta_m as constant in theta
        gseg = {n: np.zeros_like(v) for n, v in theta.segments.items()}
        loss_value = 0.0
        for traj in trajectories:
            windows, targets = target_sets[traj.task_id]
            for m in range(1, cfg.inner_steps + 1):
                term = dataset_loss(traj.params[m], windows, targets, model_config)
                if not np.isfinite(term.value):
                    raise TrainingDivergedError("NaN meta-loss")
                w = m / cfg.inner_steps
                loss_value += w * term.item()
                grads = ad.grad(term, [traj.params[m][n] for n in names],
                                warn_detached=False)
                for n, g in zip(names, grads):
                    gseg[n] += w * g.value
    meta_grad = ParameterVector(gseg)
    if not all(np.all(np.isfinite(v)) for _, v in meta_grad):
        raise TrainingDivergedError("NaN in meta-gradient")
    return meta_grad, float(loss_value)


def meta_step(theta: ParameterVector, batch: MiniBatchSplit, model_config: ModelConfig,
              cfg: MetaConfig, mode: str, optimizer=None) -> tuple[ParameterVector, float]:
    """One outer update of the meta-parameters."""
    optimizer = optimizer or SGD(cfg.outer_lr)
    grads, loss = meta_gradient(theta, batch, model_config, cfg, mode)
    return optimizer.step(theta, grads), loss


@dataclass
class TrainResult:
    theta: ParameterVector
    log: list[dict]
    switch_epoch: int | None
    stop_reason: str


def evaluate_meta_loss(theta: ParameterVector, batch: MiniBatchSplit,
                       model_config: ModelConfig, cfg: MetaConfig) -> float:
    """Meta-loss of a batch without updating (first-order trajectory)."""
    _, loss = meta_gradient(theta, batch, model_config, cfg, FIRST_ORDER)
    return loss


def train(theta0: ParameterVector, task_data: dict[str, dict[str, TaskDataset]],
          model_config: ModelConfig, cfg: MetaConfig) -> TrainResult:
    """Iterate sample -> inner adapt -> weighted meta-loss -> outer update.

    Starts first-order and switches permanently to second-order once the
    epoch-average training meta-loss drops below the threshold. Stops when
    the training average has been below the validation meta-loss for
    ``patience`` successive epochs, or at ``max_epochs``.
    """
    rng = np.random.default_rng(cfg.seed)
    train_sets = {tid: d["train"] for tid, d in task_data.items()}
    val_sets = {tid: d["val"] for tid, d in task_data.items()}
    joint_size = sum(d.size for d in train_sets.values())
    n_batches = max(1, math.ceil(joint_size / cfg.batch_size))

    theta = theta0.copy()
    optimizer = make_optimizer(cfg)
    mode = FIRST_ORDER
    threshold = cfg.second_order_threshold
    switch_epoch: int | None = None
    log: list[dict] = []
    initial_avg: float | None = None
    below_count = 0
    stop_reason = "max_epochs"

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for _ in range(n_batches):
            batch = sample_minibatch(train_sets, cfg.batch_size, cfg.support_fraction, rng)
            theta, loss = meta_step(theta, batch, model_config, cfg, mode, optimizer)
            losses.append(loss)
        train_avg = float(np.mean(losses))

        val_batch = sample_minibatch(val_sets, cfg.batch_size, cfg.support_fraction,
                                     np.random.default_rng(cfg.seed + 7919 * epoch))
        val_loss = evaluate_meta_loss(theta, val_batch, model_config, cfg)
        log.append({"epoch": epoch, "mode": mode, "train_meta_loss": train_avg,
                    "val_meta_loss": val_loss,
                    "wall_ms": (time.perf_counter() - t0) * 1000.0})

        if initial_avg is None:
            initial_avg = train_avg
            if threshold is None:
                threshold = 0.5 * initial_avg
        if train_avg > 1e3 * max(initial_avg, 1e-30):
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch} (loss {train_avg:g})", log=log)

        if mode == FIRST_ORDER and train_avg < threshold:
            mode = SECOND_ORDER
            switch_epoch = epoch + 1

        below_count = below_count + 1 if train_avg < val_loss else 0
        if below_count >= cfg.patience:
            stop_reason = "early_stop"
            break

    return TrainResult(theta=theta, log=log, switch_epoch=switch_epoch,
                       stop_reason=stop_reason)
