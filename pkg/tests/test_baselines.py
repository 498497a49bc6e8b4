"""Comparison methods: single-task selection, pooled-gradient training, and
parameter-space averaging, with the exact identities relating them."""

import numpy as np
import pytest

from metaqf import autodiff as ad
from metaqf.baselines import (BaselineConfig, pooled_gradient, train_mtao,
                              train_mtap, train_single_task)
from metaqf.model import dataset_loss, init_params
from metaqf.params import ParameterVector
from metaqf.tasks import TaskDataset


def _plain_cfg(**over):
    base = dict(lr=1e-3, max_epochs=2, batch_size=16, seed=0, optimizer="sgd")
    base.update(over)
    return BaselineConfig(**base)


def test_single_task_one_task_selected_trivially(tiny_cfg, two_task_data):
    tid = "loc0_t3"
    res = train_single_task({tid: two_task_data[tid]}, tiny_cfg, _plain_cfg())
    assert res.best_task == tid
    assert res.theta.equal(res.models[tid])


def test_single_task_selects_argmin_validation(tiny_cfg, two_task_data):
    res = train_single_task(two_task_data, tiny_cfg, _plain_cfg())
    assert set(res.models) == set(two_task_data)
    best = min(res.validation_losses, key=res.validation_losses.get)
    assert res.best_task == best
    # argmin is invariant under positive rescaling of all validation losses
    scaled = {k: 7.3 * v for k, v in res.validation_losses.items()}
    assert min(scaled, key=scaled.get) == best


def test_empty_task_set_errors(tiny_cfg):
    for fn in (train_single_task, train_mtao, train_mtap):
        with pytest.raises(ValueError):
            fn({}, tiny_cfg, _plain_cfg())


def test_pooled_gradient_two_identical_tasks_doubles(tiny_cfg, two_task_data):
    theta = init_params(tiny_cfg, 1)
    ds = two_task_data["loc0_t3"]["train"]
    idx = np.arange(6)
    g1, l1 = pooled_gradient(theta, {"a": ds}, {"a": idx}, tiny_cfg)
    g2, l2 = pooled_gradient(theta, {"a": ds, "b": ds}, {"a": idx, "b": idx}, tiny_cfg)
    assert l2 == pytest.approx(2 * l1, rel=1e-12)
    assert g2.allclose(g1 * 2.0, rtol=0, atol=1e-14)


def test_pooled_gradient_matches_direct_gradient(tiny_cfg, two_task_data):
    theta = init_params(tiny_cfg, 2)
    train_sets = {tid: d["train"] for tid, d in two_task_data.items()}
    idx = {tid: np.arange(5) for tid in train_sets}
    pooled, _ = pooled_gradient(theta, train_sets, idx, tiny_cfg)

    pv = theta.to_variables()
    total = None
    for tid, ds in train_sets.items():
        term = dataset_loss(pv, ds.windows[:5], ds.targets[:5], tiny_cfg)
        total = term if total is None else ad.add(total, term)
    names = list(pv)
    grads = ad.grad(total, [pv[n] for n in names], warn_detached=False)
    oracle = ParameterVector({n: g.value for n, g in zip(names, grads)})
    assert pooled.allclose(oracle, rtol=0, atol=1e-14)


def test_mtao_single_task_reduces_to_single_task_training(tiny_cfg, two_task_data):
    # plain-descent mode: the two code paths must coincide bit-exactly
    tid = "loc1_t6"
    data = {tid: two_task_data[tid]}
    cfg = _plain_cfg()
    mtao = train_mtao(data, tiny_cfg, cfg)
    single = train_single_task(data, tiny_cfg, cfg).models[tid]
    assert mtao.equal(single)


def test_summed_gradient_descent_converges_to_average_optimum():
    # toy: tasks with losses (theta-1)^2 and (theta+1)^2; the summed-gradient
    # scheme the pooled trainer uses must settle at the average optimum 0
    theta = np.asarray(0.7)
    for _ in range(200):
        v = ad.parameter(theta)
        la = ad.mul(ad.sub(v, 1.0), ad.sub(v, 1.0))
        lb = ad.mul(ad.add(v, 1.0), ad.add(v, 1.0))
        (g,) = ad.grad(ad.add(la, lb), [v])
        theta = v.value - 0.05 * g.value
    assert abs(float(theta)) < 1e-3


def test_mtap_identical_models_fixed_point(tiny_cfg, two_task_data):
    # two tasks with identical data -> identical per-task models -> mean equals them
    ds = two_task_data["loc0_t3"]
    data = {"a": ds, "b": ds}
    cfg = _plain_cfg()
    mtap = train_mtap(data, tiny_cfg, cfg)
    single = train_single_task({"a": ds}, tiny_cfg, cfg).models["a"]
    assert mtap.equal(single)


def test_mtap_is_exact_mean_and_permutation_invariant(tiny_cfg, two_task_data):
    cfg = _plain_cfg()
    res = train_single_task(two_task_data, tiny_cfg, cfg)
    mtap = train_mtap(two_task_data, tiny_cfg, cfg)
    assert mtap.equal(ParameterVector.mean(res.models.values()))
    swapped = dict(reversed(list(two_task_data.items())))
    mtap2 = train_mtap(swapped, tiny_cfg, cfg)
    # averaging order differs, so exact equality up to float addition order
    assert mtap.allclose(mtap2, rtol=0, atol=1e-15)


def test_mtap_failure_names_task(tiny_cfg, two_task_data):
    good = two_task_data["loc0_t3"]
    bad_train = good["train"]
    poisoned = TaskDataset(task=bad_train.task,
                           windows=np.full_like(bad_train.windows, np.nan),
                           targets=bad_train.targets, t_indices=bad_train.t_indices,
                           norm=bad_train.norm, timestamps=bad_train.timestamps)
    data = {"ok": good, "broken": {"train": poisoned, "val": good["val"]}}
    with pytest.raises(RuntimeError, match="broken"):
        train_mtap(data, tiny_cfg, _plain_cfg())


def test_baselines_deterministic(tiny_cfg, two_task_data):
    cfg = _plain_cfg(optimizer="adam")
    assert train_mtao(two_task_data, tiny_cfg, cfg).equal(
        train_mtao(two_task_data, tiny_cfg, cfg))
