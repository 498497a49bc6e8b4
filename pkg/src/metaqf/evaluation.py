"""Probabilistic forecast metrics over a completed stream run.

Conventions: the unit step H(0) = 1 (ties count as coverage). Interval
endpoints q_j/2 that fall between quantile grid levels are obtained by
linear interpolation; beyond the grid edges the edge segment is
extrapolated linearly (a "nearest" mode snaps to the closest grid level
instead).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import DEFAULT_QUANTILES


def _validate(preds: np.ndarray, obs: np.ndarray | None, quantiles) -> tuple:
    preds = np.asarray(preds, dtype=np.float64)
    q = np.asarray(quantiles, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[1] != len(q):
        raise ValueError(f"forecasts must be (N, {len(q)}), got {preds.shape}")
    if obs is not None:
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (preds.shape[0],):
            raise ValueError("observations must align with forecasts")
    return preds, obs, q


def reliability(preds: np.ndarray, obs: np.ndarray,
                quantiles: Sequence[float] = DEFAULT_QUANTILES) -> float:
    """Mean absolute gap between nominal levels and empirical coverage."""
    preds, obs, q = _validate(preds, obs, quantiles)
    coverage = (preds >= obs[:, None]).mean(axis=0)
    return float(np.mean(np.abs(q - coverage)))


def _levels_at(preds: np.ndarray, grid: np.ndarray, levels: np.ndarray,
               mode: str) -> np.ndarray:
    """Quantile values at off-grid levels, per row: (N, len(levels))."""
    if mode == "nearest":
        idx = np.abs(grid[None, :] - levels[:, None]).argmin(axis=1)
        return preds[:, idx]
    if mode != "interp":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    out = np.empty((preds.shape[0], len(levels)))
    for k, lv in enumerate(levels):
        if lv <= grid[0]:
            lo, hi = 0, 1
        elif lv >= grid[-1]:
            lo, hi = len(grid) - 2, len(grid) - 1
        else:
            hi = int(np.searchsorted(grid, lv))
            lo = hi - 1
        w = (lv - grid[lo]) / (grid[hi] - grid[lo])
        out[:, k] = preds[:, lo] * (1.0 - w) + preds[:, hi] * w
    return out


def sharpness(preds: np.ndarray, quantiles: Sequence[float] = DEFAULT_QUANTILES,
              mode: str = "interp") -> float:
    """Mean width of the (q_j/2, 1 - q_j/2) prediction intervals."""
    preds, _, q = _validate(preds, None, quantiles)
    lower = _levels_at(preds, q, q / 2.0, mode)
    upper = _levels_at(preds, q, 1.0 - q / 2.0, mode)
    return float(np.mean(upper - lower))


def skill_score(preds: np.ndarray, obs: np.ndarray,
                quantiles: Sequence[float] = DEFAULT_QUANTILES) -> float:
    """Non-positive composite of calibration and width; 0 only when perfect."""
    preds, obs, q = _validate(preds, obs, quantiles)
    indicator = (preds >= obs[:, None]).astype(np.float64)
    addends = (indicator - q[None, :]) * (obs[:, None] - preds)
    return float(addends.sum(axis=1).mean())


def mae(preds: np.ndarray, obs: np.ndarray,
        quantiles: Sequence[float] = DEFAULT_QUANTILES) -> float:
    """Mean absolute error of the median forecast."""
    preds, obs, q = _validate(preds, obs, quantiles)
    medians = np.where(np.isclose(q, 0.5))[0]
    if len(medians) == 0:
        raise ValueError("quantile grid has no 0.5 level")
    return float(np.mean(np.abs(obs - preds[:, medians[0]])))


@dataclass
class MetricReport:
    avg_deviation_pct: float      # reliability, in percent
    avg_pi_width: float           # sharpness, normalized power units
    avg_skill: float
    mae: float
    sample_count: int
    quantiles: tuple

    def to_dict(self) -> dict:
        return {
            "avg_deviation_pct": self.avg_deviation_pct,
            "avg_pi_width": self.avg_pi_width,
            "avg_skill": self.avg_skill,
            "mae": self.mae,
            "sample_count": self.sample_count,
            "quantiles": list(self.quantiles),
        }

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def from_dict(d: dict) -> "MetricReport":
        return MetricReport(
            avg_deviation_pct=d["avg_deviation_pct"], avg_pi_width=d["avg_pi_width"],
            avg_skill=d["avg_skill"], mae=d["mae"],
            sample_count=d["sample_count"], quantiles=tuple(d["quantiles"]))


def compute_report(preds: np.ndarray, obs: np.ndarray,
                   quantiles: Sequence[float] = DEFAULT_QUANTILES,
                   sharpness_mode: str = "interp") -> MetricReport:
    preds, obs, q = _validate(preds, obs, quantiles)
    if preds.shape[0] == 0:
        raise ValueError("no forecast/observation pairs to evaluate")
    return MetricReport(
        avg_deviation_pct=100.0 * reliability(preds, obs, q),
        avg_pi_width=sharpness(preds, q, mode=sharpness_mode),
        avg_skill=skill_score(preds, obs, q),
        mae=mae(preds, obs, q),
        sample_count=preds.shape[0],
        quantiles=tuple(float(x) for x in q),
    )


def reports_to_csv(reports: dict[tuple[str, str], MetricReport], path):
    """Method x setting table: one row per method, metric columns per setting
    (the layout of the paper-style comparison tables)."""
    settings = sorted({s for _, s in reports})
    methods = sorted({m for m, _ in reports})
    metrics = [("avg_deviation_pct", "b_tau_pct"), ("avg_pi_width", "pi_width"),
               ("avg_skill", "skill"), ("mae", "mae")]
    with open(path, "w") as fh:
        header = ["method"]
        for _, label in metrics:
            header.extend(f"{label}[{s}]" for s in settings)
        fh.write(",".join(header) + "\n")
        for m in methods:
            row = [m]
            for field_name, _ in metrics:
                for s in settings:
                    rep = reports.get((m, s))
                    row.append("" if rep is None else repr(getattr(rep, field_name)))
            fh.write(",".join(row) + "\n")
