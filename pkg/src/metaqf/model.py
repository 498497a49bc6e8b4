"""Quantile forecast network: stacked LSTM layers with residual connections
and a fully connected quantile head, plus the pinball loss.

Two forward implementations exist on purpose: a graph-based one used for
training (`forward_quantiles`, differentiable) and a plain array one used
for inference (`predict_batch`, backed by the jitted LSTM-cell kernel).
Tests assert that the two agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Variable
from .params import ParameterVector

DEFAULT_QUANTILES = tuple(round(0.05 * j, 2) for j in range(1, 20))


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden_size: int = 32
    input_feature_count: int = 3
    quantiles: tuple = DEFAULT_QUANTILES
    lag_steps: int = 12

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_size < 1 or self.lag_steps < 1:
            raise ValueError("num_layers, hidden_size and lag_steps must be positive")
        if self.input_feature_count < 1:
            raise ValueError("input_feature_count must be positive")
        q = self.quantiles
        if not q or any(not (0.0 < x < 1.0) for x in q) or any(
                q[i] >= q[i + 1] for i in range(len(q) - 1)):
            raise ValueError("quantiles must be strictly increasing and inside (0, 1)")

    @property
    def num_quantiles(self) -> int:
        return len(self.quantiles)

    @staticmethod
    def paper_default(input_feature_count: int = 3, resolution_minutes: int = 5) -> "ModelConfig":
        # grid-searched full-scale configuration: 16 layers, hidden 64, 8 h lag
        return ModelConfig(num_layers=16, hidden_size=64,
                           input_feature_count=input_feature_count,
                           lag_steps=8 * 60 // resolution_minutes)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_size": self.hidden_size,
            "input_feature_count": self.input_feature_count,
            "quantiles": list(self.quantiles),
            "lag_steps": self.lag_steps,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            num_layers=int(d["num_layers"]),
            hidden_size=int(d["hidden_size"]),
            input_feature_count=int(d["input_feature_count"]),
            quantiles=tuple(float(q) for q in d["quantiles"]),
            lag_steps=int(d["lag_steps"]),
        )


@dataclass
class InputWindow:
    """lag_steps x feature matrix, min-max normalized; timestamp of last lag."""
    values: np.ndarray
    timestamp: np.datetime64 | None = None


@dataclass
class QuantileForecast:
    values: np.ndarray
    quantiles: tuple
    lead_time: int | None = None
    issue_time: np.datetime64 | None = None


def segment_shapes(config: ModelConfig) -> dict[str, tuple]:
    h, f, j = config.hidden_size, config.input_feature_count, config.num_quantiles
    shapes: dict[str, tuple] = {}
    for layer in range(config.num_layers):
        in_dim = f if layer == 0 else h
        shapes[f"lstm{layer}.w_in"] = (in_dim, 4 * h)
        shapes[f"lstm{layer}.w_rec"] = (h, 4 * h)
        shapes[f"lstm{layer}.bias"] = (4 * h,)
    if f != h:
        shapes["lstm0.w_res"] = (f, h)
    shapes["head.w"] = (h, j)
    shapes["head.b"] = (j,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> ParameterVector:
    """Weights uniform in [-1/sqrt(H), 1/sqrt(H)], biases zero, per-seed deterministic."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(config.hidden_size)
    segments = {}
    for name, shape in segment_shapes(config).items():
        if name.endswith(("bias", ".b")):
            segments[name] = np.zeros(shape)
        else:
            segments[name] = rng.uniform(-bound, bound, size=shape)
    return ParameterVector(segments)


def _check_window_shape(windows: np.ndarray, config: ModelConfig):
    if windows.ndim != 3 or windows.shape[1] != config.lag_steps \
            or windows.shape[2] != config.input_feature_count:
        raise ad.ShapeMismatchError(
            "forward", windows.shape,
            ("batch", config.lag_steps, config.input_feature_count))


def forward_quantiles(pv: Mapping[str, Variable], windows: np.ndarray,
                      config: ModelConfig) -> Variable:
    """Differentiable forward pass over a batch of windows -> (S, |Q|) raw outputs.

    Residual connections add each layer's input to its output at every time
    step; the first layer uses a linear projection when the feature count
    differs from the hidden size. The head reads the last time step.
    """
    windows = np.asarray(windows, dtype=np.float64)
    _check_window_shape(windows, config)
    s, t_steps, f = windows.shape
    h = config.hidden_size

    seq = [ad.constant(np.ascontiguousarray(windows[:, t, :])) for t in range(t_steps)]
    for layer in range(config.num_layers):
        in_dim = f if layer == 0 else h
        w_in = pv[f"lstm{layer}.w_in"]
        w_rec = pv[f"lstm{layer}.w_rec"]
        bias = pv[f"lstm{layer}.bias"]
        hid = ad.constant(np.zeros((s, h)))
        cell = ad.constant(np.zeros((s, h)))
        out = []
        for x_t in seq:
            z = ad.add_bias(ad.add(ad.matmul(x_t, w_in), ad.matmul(hid, w_rec)), bias)
            gi = ad.sigmoid(ad.slice_cols(z, 0, h))
            gf = ad.sigmoid(ad.slice_cols(z, h, 2 * h))
            gc = ad.tanh(ad.slice_cols(z, 2 * h, 3 * h))
            go = ad.sigmoid(ad.slice_cols(z, 3 * h, 4 * h))
            cell = ad.add(ad.mul(gf, cell), ad.mul(gi, gc))
            hid = ad.mul(go, ad.tanh(cell))
            if in_dim == h:
                res = x_t
            else:
                res = ad.matmul(x_t, pv["lstm0.w_res"])
            out.append(ad.add(hid, res))
        seq = out
    return ad.add_bias(ad.matmul(seq[-1], pv["head.w"]), pv["head.b"])


def predict_batch(params: ParameterVector, windows: np.ndarray, config: ModelConfig,
                  finalize: bool = True) -> np.ndarray:
    """Plain-array forward pass (no graph); optionally sorts quantiles."""
    windows = np.asarray(windows, dtype=np.float64)
    _check_window_shape(windows, config)
    s, t_steps, f = windows.shape
    h = config.hidden_size

    seq = [windows[:, t, :] for t in range(t_steps)]
    for layer in range(config.num_layers):
        in_dim = f if layer == 0 else h
        w_in = params[f"lstm{layer}.w_in"]
        w_rec = params[f"lstm{layer}.w_rec"]
        bias = params[f"lstm{layer}.bias"]
        hid = np.zeros((s, h))
        cell = np.zeros((s, h))
        out = []
        for x_t in seq:
            hid, cell = kernels.lstm_cell(x_t, hid, cell, w_in, w_rec, bias)
            res = x_t if in_dim == h else x_t @ params["lstm0.w_res"]
            out.append(hid + res)
        seq = out
    raw = seq[-1] @ params["head.w"] + params["head.b"]
    if finalize:
        raw = np.sort(raw, axis=1)
    return raw


def predict(params: ParameterVector, window: InputWindow, config: ModelConfig,
            lead_time: int | None = None) -> QuantileForecast:
    """Forecast one window; output quantiles are sorted (non-crossing)."""
    values = predict_batch(params, window.values[None, :, :], config, finalize=True)[0]
    return QuantileForecast(values=values, quantiles=config.quantiles,
                            lead_time=lead_time, issue_time=window.timestamp)


def pinball_loss(forecast, observation: float, quantiles: Sequence[float]) -> float:
    """Sum over quantile levels of the pinball loss for one observation."""
    values = forecast.values if isinstance(forecast, QuantileForecast) else np.asarray(forecast)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(quantiles),):
        raise ad.ShapeMismatchError("pinball_loss", values.shape, (len(quantiles),))
    if not np.isfinite(observation):
        raise ValueError("observation must be finite")
    q = np.asarray(quantiles, dtype=np.float64)
    r = observation - values
    return float(np.sum(q * np.maximum(0.0, r) + (1.0 - q) * np.maximum(0.0, -r)))


def pinball_loss_graph(pred: Variable, targets: np.ndarray,
                       quantiles: Sequence[float]) -> Variable:
    """Mean over samples of the per-sample pinball sum, as a graph scalar."""
    targets = np.asarray(targets, dtype=np.float64)
    s, j = pred.shape
    if targets.shape != (s,) or j != len(quantiles):
        raise ad.ShapeMismatchError("pinball_loss_graph", pred.shape, targets.shape)
    q = np.asarray(quantiles, dtype=np.float64)
    y = ad.constant(np.repeat(targets[:, None], j, axis=1))
    r = ad.sub(y, pred)
    per_cell = ad.add(ad.cmul(ad.relu(r), q), ad.cmul(ad.relu(ad.neg(r)), 1.0 - q))
    return ad.cmul(ad.sum_(per_cell), 1.0 / s)


def dataset_loss(pv: Mapping[str, Variable], windows: np.ndarray, targets: np.ndarray,
                 config: ModelConfig) -> Variable:
    """Mean pinball loss of the model on (windows, targets)."""
    pred = forward_quantiles(pv, windows, config)
    return pinball_loss_graph(pred, targets, config.quantiles)


def dataset_loss_value(params: ParameterVector, windows: np.ndarray, targets: np.ndarray,
                       config: ModelConfig) -> float:
    """Same quantity as `dataset_loss` but on the plain forward path."""
    pred = predict_batch(params, windows, config, finalize=False)
    per_sample = kernels.pinball_terms(pred, np.asarray(targets, dtype=np.float64),
                                       np.asarray(config.quantiles, dtype=np.float64))
    return float(per_sample.mean())
