"""Probabilistic certificate and its empirical validation on the true system."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from ._util import decode_float, dump_json, encode_float, pmap
from .bayesopt import FalsificationResult
from .calibrate import AccuracyProfile, coverage_level
from .signals import FloatArray
from .stl import RobustnessMeasure, Spec, format_spec, predicate_coordinates, robustness, satisfies
from .systems import ControllerSpec, DivergenceError, ScenarioConfig, TrueModel, derive_seed, simulate_true


class NormMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Certificate:
    certified: bool
    probability: float | None
    h_star: float
    L: float
    epsilon: float
    lam: float
    margin: float
    spec_text: str
    norm_weights: tuple[float, ...]
    assumptions: tuple[str, ...]
    accuracy_profile_ref: str | None = None
    falsification_ref: str | None = None
    created_at: str | None = None

    def __post_init__(self) -> None:
        if self.certified != (self.probability is not None):
            raise ValueError("probability must be present exactly when certified")

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "probability": self.probability,
            "h_star": encode_float(self.h_star),
            "L": self.L,
            "epsilon": encode_float(self.epsilon),
            "lambda": self.lam,
            "margin": encode_float(self.margin),
            "spec_text": self.spec_text,
            "norm_weights": list(self.norm_weights),
            "assumptions": list(self.assumptions),
            "accuracy_profile_ref": self.accuracy_profile_ref,
            "falsification_ref": self.falsification_ref,
            "created_at": self.created_at,
        }

    def write_json(self, path: str | Path) -> str:
        return dump_json(self.to_dict(), path)

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        return cls(
            certified=bool(data["certified"]),
            probability=data["probability"],
            h_star=decode_float(data["h_star"]),
            L=float(data["L"]),
            epsilon=decode_float(data["epsilon"]),
            lam=float(data["lambda"]),
            margin=decode_float(data["margin"]),
            spec_text=data["spec_text"],
            norm_weights=tuple(data["norm_weights"]),
            assumptions=tuple(data["assumptions"]),
            accuracy_profile_ref=data.get("accuracy_profile_ref"),
            falsification_ref=data.get("falsification_ref"),
            created_at=data.get("created_at"),
        )


def _assumptions(ap: AccuracyProfile) -> tuple[str, ...]:
    notes = [
        f"epsilon is the empirical {1 - ap.lam:g}-quantile of {ap.N} sampled sup-norm deviations "
        f"({'configurations drawn uniformly' if ap.mode == 'sampled' else 'one fixed configuration'}), "
        "not a guarantee uniform over every configuration",
        "h_star is the best minimum found by Bayesian optimization and is assumed to be the global minimum",
        "suprema over time are taken over the sample grid"
        + (f" with step {ap.dt:g} s" if ap.dt is not None else ""),
    ]
    if ap.disturbance:
        notes.append(f"true-system disturbance model: {ap.disturbance}")
    if ap.divergences:
        notes.append(f"{ap.divergences} calibration pair(s) diverged and were counted as infinite deviation")
    return tuple(notes)


def certify(
    fr: FalsificationResult,
    ap: AccuracyProfile,
    m: RobustnessMeasure,
    *,
    accuracy_profile_ref: str | None = None,
    falsification_ref: str | None = None,
    created_at: str | None = None,
) -> Certificate:
    """Certified iff ``h_star >= L * epsilon`` (exact comparison); then P[satisfy] >= 1 - lambda.

    The profile must be calibrated in the same norm the measure is Lipschitz in.
    """
    if ap.norm != m.norm:
        raise NormMismatchError(
            f"accuracy profile norm {ap.norm.weights.tolist()} differs from the robustness measure norm "
            f"{m.norm.weights.tolist()}"
        )
    bound = m.lipschitz * ap.epsilon
    ok = bool(fr.h_star >= bound)
    probability = float(coverage_level(ap.lam)) if ok else None
    return Certificate(
        certified=ok,
        probability=probability,
        h_star=fr.h_star,
        L=m.lipschitz,
        epsilon=ap.epsilon,
        lam=ap.lam,
        margin=fr.h_star - bound,
        spec_text=format_spec(m.spec),
        norm_weights=tuple(ap.norm.weights.tolist()),
        assumptions=_assumptions(ap),
        accuracy_profile_ref=accuracy_profile_ref,
        falsification_ref=falsification_ref,
        created_at=created_at,
    )


@dataclass(frozen=True)
class ValidationReport:
    K: int
    seeds: tuple[int, ...]
    robustness: tuple[float, ...]
    satisfied: tuple[bool, ...]
    d_star: tuple[float, ...]
    divergences: int = 0
    trace_coordinate: int | None = None
    trace_times: tuple[float, ...] = ()
    traces: tuple[tuple[float, ...], ...] = field(default=(), repr=False)

    @property
    def rate(self) -> float:
        return sum(self.satisfied) / self.K

    @property
    def min_robustness(self) -> float:
        return min(self.robustness)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "seeds": list(self.seeds),
            "robustness": [encode_float(v) for v in self.robustness],
            "satisfied": list(self.satisfied),
            "rate": self.rate,
            "min_robustness": encode_float(self.min_robustness),
            "d_star": list(self.d_star),
            "divergences": self.divergences,
            "trace_coordinate": self.trace_coordinate,
            "trace_times": list(self.trace_times),
            "traces": [list(t) for t in self.traces],
        }

    def write_json(self, path: str | Path) -> str:
        return dump_json(self.to_dict(), path)

    @classmethod
    def from_dict(cls, data: dict) -> "ValidationReport":
        return cls(
            K=int(data["K"]),
            seeds=tuple(data["seeds"]),
            robustness=tuple(decode_float(v) for v in data["robustness"]),
            satisfied=tuple(bool(v) for v in data["satisfied"]),
            d_star=tuple(data["d_star"]),
            divergences=int(data.get("divergences", 0)),
            trace_coordinate=data.get("trace_coordinate"),
            trace_times=tuple(data.get("trace_times", ())),
            traces=tuple(tuple(t) for t in data.get("traces", ())),
        )

    @classmethod
    def read_json(cls, path: str | Path) -> "ValidationReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _trial(
    k: int,
    true_sys: TrueModel,
    ctrl: ControllerSpec,
    cfg: ScenarioConfig,
    d: FloatArray,
    spec: Spec,
    m: RobustnessMeasure,
    seed: int,
    coord: int | None,
    keep: int,
) -> tuple[float, bool, bool, tuple[float, ...] | None]:
    try:
        s = simulate_true(true_sys, ctrl, cfg, d, derive_seed(seed, k))
    except DivergenceError:
        return -math.inf, False, True, None
    trace = tuple(s.coordinate(coord).tolist()) if coord is not None and k < keep else None
    return robustness(m, s), satisfies(spec, s), False, trace


def validate_empirically(
    true_sys: TrueModel,
    ctrl: ControllerSpec,
    cfg: ScenarioConfig,
    d_star: ArrayLike,
    spec: Spec,
    m: RobustnessMeasure,
    K: int,
    seed: int,
    *,
    jobs: int = 1,
    keep_traces: int = 7,
) -> ValidationReport:
    """Run ``K`` seeded true-system rollouts at ``d_star``.

    Satisfaction comes from the boolean monitor, robustness from ``m``. A
    divergent rollout counts as a violation with robustness -inf. The first
    ``keep_traces`` trials keep the time series of the spec's first coordinate.
    """
    if K < 1:
        raise ValueError("K must be positive")
    d = np.asarray(d_star, dtype=np.float64)
    coords = predicate_coordinates(spec)
    coord = coords[0] if coords else None
    worker = partial(
        _trial, true_sys=true_sys, ctrl=ctrl, cfg=cfg, d=d, spec=spec, m=m, seed=seed, coord=coord, keep=keep_traces
    )
    results = pmap(worker, range(K), jobs)
    return ValidationReport(
        K=K,
        seeds=tuple(derive_seed(seed, k) for k in range(K)),
        robustness=tuple(r[0] for r in results),
        satisfied=tuple(r[1] for r in results),
        d_star=tuple(d.tolist()),
        divergences=sum(r[2] for r in results),
        trace_coordinate=coord,
        trace_times=tuple(cfg.times.tolist()) if coord is not None else (),
        traces=tuple(r[3] for r in results if r[3] is not None),
    )
