"""Comparison methods: single-task training with validation selection,
multi-task averaging in the output space (pooled gradients), and multi-task
averaging in the parameter space (mean of per-task models).

All three produce a plain ParameterVector, so the online stream runner
consumes them unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .meta import Adam, SGD, TrainingDivergedError
from .model import ModelConfig, dataset_loss, dataset_loss_value, init_params
from .params import ParameterVector
from .tasks import TaskDataset, sample_minibatch


class BaselineKind(Enum):
    SINGLE_TASK = "single"
    MTAO = "mtao"
    MTAP = "mtap"


@dataclass
class BaselineConfig:
    lr: float = 1e-3
    max_epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"     # "adam" | "sgd"

    def make_optimizer(self):
        return Adam(self.lr) if self.optimizer == "adam" else SGD(self.lr)


def pooled_gradient(theta: ParameterVector, train_sets: dict[str, TaskDataset],
                    batch_indices: dict[str, np.ndarray],
                    model_config: ModelConfig) -> tuple[ParameterVector, float]:
    """Gradient of the summed per-task mean pinball losses over one batch."""
    pv = theta.to_variables()
    names = list(pv)
    total = None
    for tid, idx in batch_indices.items():
        if len(idx) == 0:
            continue
        ds = train_sets[tid]
        term = dataset_loss(pv, ds.windows[idx], ds.targets[idx], model_config)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("batch contained no samples")
    if not np.isfinite(total.value):
        raise TrainingDivergedError("NaN loss in baseline training")
    grads = ad.grad(total, [pv[n] for n in names], warn_detached=False)
    return ParameterVector({n: g.value.copy() for n, g in zip(names, grads)}), total.item()


def _train_plain(train_sets: dict[str, TaskDataset], model_config: ModelConfig,
                 cfg: BaselineConfig, theta0: ParameterVector | None = None) -> ParameterVector:
    """Mini-batch pinball training on pooled batches; per-task gradients are
    summed each step (no inner loop). One task reduces to conventional training."""
    theta = (theta0 or init_params(model_config, cfg.seed)).copy()
    rng = np.random.default_rng(cfg.seed)
    optimizer = cfg.make_optimizer()
    joint = sum(d.size for d in train_sets.values())
    n_batches = max(1, math.ceil(joint / cfg.batch_size))
    for _ in range(cfg.max_epochs):
        for _ in range(n_batches):
            batch = sample_minibatch(train_sets, cfg.batch_size, support_fraction=0.0,
                                     rng=rng)
            if all(len(idx) == 0 for idx in batch.target.values()):
                continue
            gseg, _ = pooled_gradient(theta, train_sets, batch.target, model_config)
            theta = optimizer.step(theta, gseg)
    return theta


@dataclass
class SingleTaskResult:
    models: dict[str, ParameterVector]
    validation_losses: dict[str, float]
    best_task: str
    theta: ParameterVector


def train_single_task(task_data: dict[str, dict[str, TaskDataset]],
                      model_config: ModelConfig, cfg: BaselineConfig) -> SingleTaskResult:
    """Conventional per-task training; selects the model with the lowest
    validation pinball loss."""
    if not task_data:
        raise ValueError("empty task set")
    models, val_losses = {}, {}
    for tid, splits in task_data.items():
        models[tid] = _train_plain({tid: splits["train"]}, model_config, cfg)
        val = splits["val"]
        val_losses[tid] = dataset_loss_value(models[tid], val.windows, val.targets,
                                             model_config)
    best = min(val_losses, key=val_losses.get)
    return SingleTaskResult(models=models, validation_losses=val_losses,
                            best_task=best, theta=models[best])


def train_mtao(task_data: dict[str, dict[str, TaskDataset]], model_config: ModelConfig,
               cfg: BaselineConfig) -> ParameterVector:
    """One model on pooled mini-batches with summed per-task gradients."""
    if not task_data:
        raise ValueError("empty task set")
    return _train_plain({tid: d["train"] for tid, d in task_data.items()},
                        model_config, cfg)


def train_mtap(task_data: dict[str, dict[str, TaskDataset]], model_config: ModelConfig,
               cfg: BaselineConfig) -> ParameterVector:
    """Elementwise mean of sequentially trained per-task models. Each model
    starts from the same seed initialization."""
    if not task_data:
        raise ValueError("empty task set")
    models = []
    for tid, splits in task_data.items():
        try:
            models.append(_train_plain({tid: splits["train"]}, model_config, cfg))
        except Exception as exc:
            raise RuntimeError(f"individual training failed for task {tid!r}") from exc
    return ParameterVector.mean(models)
