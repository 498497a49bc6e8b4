"""Meta-learned probabilistic quantile forecasting with online adaptation."""

from .model import (DEFAULT_QUANTILES, InputWindow, ModelConfig, QuantileForecast,
                    init_params, pinball_loss, predict)
from .params import ParameterVector
from .tasks import ForecastTask, SeriesBundle, TaskStream, synthetic_bundle
from .meta import MetaConfig, train
from .online import OnlineConfig, run_stream
from .evaluation import MetricReport, compute_report

__all__ = [
    "DEFAULT_QUANTILES", "ForecastTask", "InputWindow", "MetaConfig", "MetricReport",
    "ModelConfig", "OnlineConfig", "ParameterVector", "QuantileForecast",
    "SeriesBundle", "TaskStream", "compute_report", "init_params", "pinball_loss",
    "predict", "run_stream", "synthetic_bundle", "train",
]

__version__ = "0.1.0"
