"""Command-line entry point.

Verbs: ``synth``, ``meta-train``, ``baseline-train``, ``stream``, ``eval``.
Runs are driven by a JSON config file (see README for the schema);
command-line flags override config values. Exit codes: 0 success,
1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, train_mtao, train_mtap, train_single_task
from .evaluation import MetricReport, compute_report, reports_to_csv
from .meta import MetaConfig, TrainingDivergedError, train
from .model import ModelConfig, init_params
from .online import OnlineConfig, run_stream
from .params import CheckpointError, ParameterVector
from .tasks import (DataError, ForecastTask, build_dataset, build_stream,
                    read_bundle_csv, synthetic_bundle, write_bundle_csv)


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc


def _resolution_minutes(bundle) -> float:
    return float(bundle.resolution / np.timedelta64(60, "s"))


def _parse_task(spec: dict, resolution_minutes: float) -> ForecastTask:
    if "lead_steps" in spec:
        lead = int(spec["lead_steps"])
    elif "lead_hours" in spec:
        lead = int(round(float(spec["lead_hours"]) * 60.0 / resolution_minutes))
    else:
        raise ConfigError(f"task {spec.get('id')!r} needs lead_steps or lead_hours")
    return ForecastTask(task_id=str(spec["id"]), location=str(spec["location"]),
                        lead_steps=lead, statistic=spec.get("statistic", "instant"))


def _load_bundle(config: dict):
    data_dir = config.get("data_dir")
    if not data_dir:
        raise ConfigError("config is missing 'data_dir'")
    p = Path(data_dir)
    if not p.exists():
        raise ConfigError(f"data path does not exist: {p}")
    return read_bundle_csv(p, config.get("capacities"))


def _model_config(config: dict) -> ModelConfig:
    d = config.get("model", {})
    kwargs = {}
    for key in ("num_layers", "hidden_size", "input_feature_count", "lag_steps"):
        if key in d:
            kwargs[key] = int(d[key])
    if "quantiles" in d:
        kwargs["quantiles"] = tuple(float(q) for q in d["quantiles"])
    return ModelConfig(**kwargs)


def _meta_config(config: dict) -> MetaConfig:
    d = dict(config.get("meta", {}))
    d.setdefault("seed", config.get("seed", 0))
    return MetaConfig(**d)


def _online_config(config: dict) -> OnlineConfig:
    return OnlineConfig(**config.get("online", {}))


def _baseline_config(config: dict) -> BaselineConfig:
    d = dict(config.get("baseline", {}))
    d.setdefault("seed", config.get("seed", 0))
    return BaselineConfig(**d)


def _task_datasets(config: dict, bundle, model_cfg: ModelConfig, key: str):
    res = _resolution_minutes(bundle)
    specs = config.get(key, [])
    if not specs:
        raise ConfigError(f"config is missing '{key}'")
    tasks = [_parse_task(s, res) for s in specs]
    splits = tuple(config.get("splits", (0.4, 0.2, 0.4)))
    return {t.task_id: build_dataset(bundle, t, model_cfg.lag_steps, splits) for t in tasks}, tasks


def _write_resolved(out_dir: Path, config: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(json.dumps(config, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    bundle = synthetic_bundle(
        n_locations=args.locations, n_steps=args.steps, seed=args.seed,
        resolution_minutes=args.resolution, diurnal_amp=args.diurnal,
        seasonal_amp=args.seasonal, ar_coeff=args.ar, noise_std=args.noise)
    paths = write_bundle_csv(bundle, args.out)
    print(f"wrote {len(paths)} series to {args.out}")
    return 0


def cmd_meta_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.epochs is not None:
        config.setdefault("meta", {})["max_epochs"] = args.epochs
    bundle = _load_bundle(config)
    model_cfg = _model_config(config)
    meta_cfg = _meta_config(config)
    datasets, _ = _task_datasets(config, bundle, model_cfg, "offline_tasks")

    theta0 = init_params(model_cfg, meta_cfg.seed)
    result = train(theta0, datasets, model_cfg, meta_cfg)

    out = Path(args.out)
    _write_resolved(out, config)
    result.theta.save(out / "checkpoint.json", config=model_cfg.to_dict())
    with open(out / "train_log.jsonl", "w") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec) + "\n")
    summary = {"switch_epoch": result.switch_epoch, "stop_reason": result.stop_reason,
               "epochs": len(result.log)}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"meta-training done: {len(result.log)} epochs, "
          f"stop={result.stop_reason}, switch_epoch={result.switch_epoch}")
    return 0


def cmd_baseline_train(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    bundle = _load_bundle(config)
    model_cfg = _model_config(config)
    base_cfg = _baseline_config(config)
    datasets, _ = _task_datasets(config, bundle, model_cfg, "offline_tasks")

    if args.kind == "single":
        res = train_single_task(datasets, model_cfg, base_cfg)
        theta = res.theta
        extra = {"best_task": res.best_task, "validation_losses": res.validation_losses}
    elif args.kind == "mtao":
        theta = train_mtao(datasets, model_cfg, base_cfg)
        extra = {}
    else:
        theta = train_mtap(datasets, model_cfg, base_cfg)
        extra = {}

    out = Path(args.out)
    _write_resolved(out, config)
    theta.save(out / "checkpoint.json", config=model_cfg.to_dict())
    (out / "train_summary.json").write_text(json.dumps({"kind": args.kind, **extra}, indent=2))
    print(f"baseline '{args.kind}' trained")
    return 0


def cmd_stream(args) -> int:
    config = _load_config(args.config)
    bundle = _load_bundle(config)
    model_cfg = _model_config(config)
    online_cfg = _online_config(config)

    theta, ckpt_cfg = ParameterVector.load(args.checkpoint)
    if ckpt_cfg and ModelConfig.from_dict(ckpt_cfg).to_dict() != model_cfg.to_dict():
        raise ConfigError("checkpoint model config does not match run config")

    res = _resolution_minutes(bundle)
    stream_cfg = config.get("stream", {})
    if "segment_spots" in stream_cfg:
        seg = int(stream_cfg["segment_spots"])
    elif "t_T_hours" in stream_cfg:
        spots = float(stream_cfg["t_T_hours"]) * 60.0 / res
        if abs(spots - round(spots)) > 1e-9:
            raise ConfigError("t_T is not a multiple of the series resolution")
        seg = int(round(spots))
    else:
        raise ConfigError("config is missing 'stream.segment_spots' or 'stream.t_T_hours'")

    specs = config.get("online_tasks", [])
    if not specs:
        raise ConfigError("config is missing 'online_tasks'")
    tasks = [_parse_task(s, res) for s in specs]
    splits = tuple(config.get("splits", (0.4, 0.2, 0.4)))

    # normalization fit on the offline training split of each online task
    norms = {}
    for t in tasks:
        norms[t.task_id] = build_dataset(bundle, t, model_cfg.lag_steps, splits)["train"].norm

    test_start = int((splits[0] + splits[1]) * bundle.length)
    max_tau = max(t.lead_steps for t in tasks)
    start = test_start + model_cfg.lag_steps + max_tau + online_cfg.window_size
    stream = build_stream(tasks, seg, bundle, start_index=start)
    result = run_stream(theta, stream, model_cfg, online_cfg, norms)

    out = Path(args.out)
    _write_resolved(out, config)
    with open(out / "forecasts.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec) + "\n")
    with open(out / "reinits.jsonl", "w") as fh:
        for rec in result.reinit_events:
            fh.write(json.dumps(rec) + "\n")
    report = compute_report(result.forecasts, result.observations, model_cfg.quantiles)
    report.save_json(out / "metrics.json")
    reports_to_csv({(args.method, f"seg={seg}"): report}, out / "metrics.csv")
    print(f"stream done: {len(result.records)} spots, "
          f"{len(result.reinit_events)} reinitializations, "
          f"skill={report.avg_skill:.4f}")
    return 0


def cmd_eval(args) -> int:
    reports: dict[tuple[str, str], MetricReport] = {}
    labels = args.label or [Path(f).parent.name for f in args.forecasts]
    if len(labels) != len(args.forecasts):
        raise ConfigError("--label must be given once per forecasts file")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = {}
    for label, fpath in zip(labels, args.forecasts):
        p = Path(fpath)
        if not p.exists():
            raise ConfigError(f"forecast file not found: {p}")
        preds, obs = [], []
        grid = None
        with open(p) as fh:
            for line in fh:
                rec = json.loads(line)
                if "quantiles" in rec and "observation" in rec:
                    preds.append(rec["quantiles"])
                    obs.append(rec["observation"])
                    grid = grid or len(rec["quantiles"])
        if not preds:
            raise ConfigError(f"{p} holds no scored forecasts")
        quantiles = tuple((j + 1) / (grid + 1) for j in range(grid)) if grid != 19 \
            else tuple(round(0.05 * j, 2) for j in range(1, 20))
        report = compute_report(np.asarray(preds), np.asarray(obs), quantiles)
        reports[(label, "all")] = report
        merged[label] = report.to_dict()
    (out / "metrics.json").write_text(json.dumps(merged, indent=2, sort_keys=True))
    reports_to_csv(reports, out / "metrics.csv")
    print(f"evaluated {len(reports)} run(s) -> {out / 'metrics.csv'}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaqf",
                                     description="Meta-learned quantile forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic per-location series CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--locations", type=int, default=1)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=5, help="minutes per step")
    p.add_argument("--diurnal", type=float, default=0.2)
    p.add_argument("--seasonal", type=float, default=0.1)
    p.add_argument("--ar", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("meta-train", help="offline meta-training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("baseline-train", help="train a comparison method")
    p.add_argument("--kind", required=True, choices=["single", "mtao", "mtap"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_baseline_train)

    p = sub.add_parser("stream", help="replay a task stream with online learning")
    p.add_argument("--method", required=True, choices=["meta", "single", "mtao", "mtap"])
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", help="compute metrics from forecast JSONL files")
    p.add_argument("--forecasts", nargs="+", required=True)
    p.add_argument("--label", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
