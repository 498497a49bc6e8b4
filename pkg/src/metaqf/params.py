"""Flat, ordered collection of named model weight segments.

Checkpoint files are JSON: ``{"format_version": 1, "config": {...},
"segments": {name: {"shape": [...], "data": [flat float64 values]}}}``.
Segment order is preserved; round-tripping is exact (floats are stored via
``float.hex``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .autodiff import Variable, parameter

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class ParameterVector:
    """Ordered named segments of float64 arrays."""

    def __init__(self, segments: Mapping[str, np.ndarray]):
        self.segments = {k: np.asarray(v, dtype=np.float64) for k, v in segments.items()}

    def __iter__(self):
        return iter(self.segments.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.segments[name]

    @property
    def names(self) -> list[str]:
        return list(self.segments)

    @property
    def total_length(self) -> int:
        return sum(v.size for v in self.segments.values())

    def copy(self) -> "ParameterVector":
        return ParameterVector({k: v.copy() for k, v in self.segments.items()})

    def _check_compatible(self, other: "ParameterVector"):
        if self.names != other.names or any(
                self.segments[k].shape != other.segments[k].shape for k in self.segments):
            raise ValueError("parameter vectors have different segment layouts")

    def __add__(self, other: "ParameterVector") -> "ParameterVector":
        self._check_compatible(other)
        return ParameterVector({k: v + other.segments[k] for k, v in self.segments.items()})

    def __sub__(self, other: "ParameterVector") -> "ParameterVector":
        self._check_compatible(other)
        return ParameterVector({k: v - other.segments[k] for k, v in self.segments.items()})

    def __mul__(self, scalar: float) -> "ParameterVector":
        return ParameterVector({k: v * float(scalar) for k, v in self.segments.items()})

    __rmul__ = __mul__

    def zeros_like(self) -> "ParameterVector":
        return ParameterVector({k: np.zeros_like(v) for k, v in self.segments.items()})

    def to_flat(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0)
        return np.concatenate([v.reshape(-1) for v in self.segments.values()])

    def from_flat(self, flat: np.ndarray) -> "ParameterVector":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.total_length:
            raise ValueError(f"expected {self.total_length} values, got {flat.size}")
        out, k = {}, 0
        for name, v in self.segments.items():
            out[name] = flat[k:k + v.size].reshape(v.shape).copy()
            k += v.size
        return ParameterVector(out)

    def to_variables(self, requires_grad: bool = True) -> dict[str, Variable]:
        return {k: Variable(v.copy(), requires_grad=requires_grad)
                for k, v in self.segments.items()}

    @staticmethod
    def from_variables(vars_: Mapping[str, Variable]) -> "ParameterVector":
        return ParameterVector({k: v.value.copy() for k, v in vars_.items()})

    @staticmethod
    def mean(vectors: Iterable["ParameterVector"]) -> "ParameterVector":
        vectors = list(vectors)
        if not vectors:
            raise ValueError("mean of no parameter vectors")
        acc = vectors[0].copy()
        for v in vectors[1:]:
            acc = acc + v
        return acc * (1.0 / len(vectors))

    def allclose(self, other: "ParameterVector", rtol=1e-12, atol=0.0) -> bool:
        self._check_compatible(other)
        return all(np.allclose(v, other.segments[k], rtol=rtol, atol=atol)
                   for k, v in self.segments.items())

    def equal(self, other: "ParameterVector") -> bool:
        self._check_compatible(other)
        return all(np.array_equal(v, other.segments[k]) for k, v in self.segments.items())

    # -- checkpoint io ------------------------------------------------------

    def save(self, path, config: dict | None = None):
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "config": config or {},
            "segments": {
                name: {
                    "shape": list(v.shape),
                    "data": [x.hex() for x in v.reshape(-1).tolist()],
                }
                for name, v in self.segments.items()
            },
        }
        Path(path).write_text(json.dumps(doc))

    @staticmethod
    def load(path) -> tuple["ParameterVector", dict]:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version in {path}")
        segments = {}
        for name, seg in doc["segments"].items():
            data = np.array([float.fromhex(x) for x in seg["data"]], dtype=np.float64)
            segments[name] = data.reshape(seg["shape"])
        return ParameterVector(segments), doc.get("config", {})


def as_parameter_variables(pv: ParameterVector) -> dict[str, Variable]:
    return {k: parameter(v.copy()) for k, v in pv.segments.items()}
