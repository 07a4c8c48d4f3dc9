"""Sampled trajectories and the weighted state/signal norms."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]


def _frozen(a: ArrayLike) -> FloatArray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped state samples over ``[0, t_f]``.

    ``states`` has shape ``(len(times), n)``. Both arrays are read-only.
    """

    times: FloatArray
    states: FloatArray

    def __post_init__(self) -> None:
        times = _frozen(self.times)
        states = _frozen(self.states)
        if times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        if states.ndim == 1:
            states = _frozen(states.reshape(-1, 1))
        if states.ndim != 2:
            raise ValueError("states must be a (samples, n) array")
        if len(times) < 2:
            raise ValueError("a trajectory needs at least two samples")
        if len(times) != len(states):
            raise ValueError(f"{len(times)} timestamps but {len(states)} states")
        if times[0] != 0.0:
            raise ValueError(f"times must start at 0, got {times[0]}")
        if not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def t_f(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return len(self.times)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.states, other.states)

    def coordinate(self, i: int) -> FloatArray:
        return self.states[:, i]

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize as ``t,x1,...,xn`` CSV; returns the text and optionally writes it."""
        buf = io.StringIO()
        header = ",".join(["t"] + [f"x{i + 1}" for i in range(self.dim)])
        buf.write(header + "\n")
        for t, row in zip(self.times, self.states):
            buf.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def parse_csv(cls, text: str) -> "Trajectory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        if header[0] != "t" or header[1:] != [f"x{i + 1}" for i in range(len(header) - 1)]:
            raise ValueError(f"unexpected trajectory header: {lines[0]!r}")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(times=data[:, 0], states=data[:, 1:])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        return cls.parse_csv(Path(path).read_text())


@dataclass(frozen=True, eq=False)
class WeightedNorm:
    """Weighted Euclidean norm ``sqrt(sum_i w_i x_i^2)`` on R^n."""

    weights: FloatArray

    def __post_init__(self) -> None:
        w = _frozen(self.weights)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a non-empty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if not np.any(w > 0):
            raise ValueError("at least one weight must be positive")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightedNorm):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self) -> int:
        return hash(self.weights.tobytes())

    def __call__(self, x: ArrayLike) -> float:
        return weighted_norm(x, self)

    def __repr__(self) -> str:
        return f"WeightedNorm({self.weights.tolist()})"


def weighted_norm(x: ArrayLike, nrm: WeightedNorm) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (nrm.dim,):
        raise ValueError(f"vector of shape {x.shape} does not match norm dimension {nrm.dim}")
    return float(np.sqrt(np.dot(nrm.weights, x * x)))


def pointwise_deviation(a: Trajectory, b: Trajectory, nrm: WeightedNorm) -> FloatArray:
    """Weighted norm of ``a(t) - b(t)`` at every shared sample."""
    if a.dim != nrm.dim or b.dim != nrm.dim:
        raise ValueError(f"trajectory dimensions ({a.dim}, {b.dim}) do not match norm dimension {nrm.dim}")
    if not np.array_equal(a.times, b.times):
        raise ValueError("trajectories are sampled on different time grids; resample explicitly first")
    diff = a.states - b.states
    return np.sqrt((diff * diff) @ nrm.weights)


def sup_deviation(a: Trajectory, b: Trajectory, nrm: WeightedNorm) -> float:
    """Sampled sup-norm distance ``max_t ||a(t) - b(t)||``."""
    return float(np.max(pointwise_deviation(a, b, nrm)))
