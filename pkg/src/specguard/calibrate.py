"""Monte-Carlo accuracy calibration of the nominal model against the true system."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

from ._util import decode_float, dump_json, encode_float, pmap
from .bayesopt import EnvSpace
from .signals import WeightedNorm, sup_deviation
from .systems import (
    ControllerSpec,
    DivergenceError,
    NominalModel,
    ScenarioConfig,
    TrueModel,
    derive_seed,
    simulate_nominal,
    simulate_true,
)


def _exact(q: float | Fraction) -> Fraction:
    # decimal literal as written, so 1 - 0.05 is exactly 19/20
    return q if isinstance(q, Fraction) else Fraction(repr(float(q)))


def order_statistic_rank(n: int, q: float | Fraction) -> int:
    """1-based rank ``ceil(q * n)`` clamped into ``[1, n]``."""
    return min(max(math.ceil(_exact(q) * n), 1), n)


def empirical_quantile(samples: ArrayLike, q: float | Fraction) -> float:
    """The ``ceil(q * N)``-th smallest sample (1-indexed)."""
    values = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if len(values) == 0:
        raise ValueError("empirical quantile of an empty sample")
    if not 0 < _exact(q) < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    return float(values[order_statistic_rank(len(values), q) - 1])


def coverage_level(lam: float) -> Fraction:
    """``1 - lambda`` computed exactly from the decimal value of lambda."""
    lam_exact = _exact(lam)
    if not 0 < lam_exact < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    return 1 - lam_exact


@dataclass(frozen=True)
class AccuracyProfile:
    """Empirical ``(epsilon, t_f, lambda, norm)``-accuracy of a nominal model.

    ``epsilon`` is an empirical quantile of sampled sup-norm deviations, not
    a bound that holds uniformly over every configuration.
    """

    epsilon: float
    lam: float
    t_f: float
    norm: WeightedNorm
    samples: tuple[float, ...]
    divergences: int = 0
    mode: str = "sampled"
    dt: float | None = None
    seed: int | None = None
    disturbance: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(sorted(float(v) for v in self.samples)))
        if not self.samples:
            raise ValueError("an accuracy profile needs at least one sample")
        coverage_level(self.lam)

    @property
    def N(self) -> int:
        return len(self.samples)

    @property
    def variance_bound(self) -> float:
        return 1.0 / self.N

    @property
    def coverage(self) -> float:
        """Fraction of retained samples at or below epsilon."""
        return sum(v <= self.epsilon for v in self.samples) / self.N

    def to_dict(self) -> dict:
        return {
            "epsilon": encode_float(self.epsilon),
            "lambda": self.lam,
            "t_f": self.t_f,
            "N": self.N,
            "norm_weights": self.norm.weights.tolist(),
            "samples_sorted": [encode_float(v) for v in self.samples],
            "divergences": self.divergences,
            "variance_bound": self.variance_bound,
            "mode": self.mode,
            "dt": self.dt,
            "seed": self.seed,
            "disturbance": self.disturbance,
            "estimator": f"empirical {order_statistic_rank(self.N, coverage_level(self.lam))}-th order statistic "
            f"of {self.N} sampled sup-norm deviations",
        }

    def write_json(self, path: str | Path) -> str:
        return dump_json(self.to_dict(), path)

    @classmethod
    def from_dict(cls, data: dict) -> "AccuracyProfile":
        return cls(
            epsilon=decode_float(data["epsilon"]),
            lam=float(data["lambda"]),
            t_f=float(data["t_f"]),
            norm=WeightedNorm(np.array(data["norm_weights"], dtype=np.float64)),
            samples=tuple(decode_float(v) for v in data["samples_sorted"]),
            divergences=int(data.get("divergences", 0)),
            mode=data.get("mode", "sampled"),
            dt=data.get("dt"),
            seed=data.get("seed"),
            disturbance=data.get("disturbance", ""),
        )

    @classmethod
    def read_json(cls, path: str | Path) -> "AccuracyProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def profile_from_samples(
    samples: Sequence[float], lam: float, norm: WeightedNorm, t_f: float, **meta
) -> AccuracyProfile:
    samples = [float(v) for v in samples]
    eps = empirical_quantile(samples, coverage_level(lam))
    divergences = meta.pop("divergences", sum(math.isinf(v) for v in samples))
    return AccuracyProfile(eps, lam, t_f, norm, tuple(samples), divergences=divergences, **meta)


def _pair_deviation(
    job: tuple[int, np.ndarray],
    nominal: NominalModel,
    true_sys: TrueModel,
    ctrl: ControllerSpec,
    cfg: ScenarioConfig,
    nrm: WeightedNorm,
    seed: int,
) -> float:
    k, d = job
    try:
        a = simulate_nominal(nominal, ctrl, cfg, d)
        b = simulate_true(true_sys, ctrl, cfg, d, derive_seed(seed, k, 1))
    except DivergenceError:
        return math.inf
    return sup_deviation(a, b, nrm)


def calibration_configs(space: EnvSpace, N: int, seed: int, fixed_d: ArrayLike | None = None) -> list[np.ndarray]:
    """Configuration of each calibration pair: ``fixed_d`` or a uniform draw from stream ``(seed, k)``."""
    if fixed_d is not None:
        d = np.asarray(fixed_d, dtype=np.float64)
        if not space.contains(d):
            raise ValueError(f"fixed configuration {d.tolist()} is outside the space")
        return [d] * N
    return [space.sample(np.random.default_rng([seed, k, 0])) for k in range(N)]


def estimate_accuracy(
    nominal: NominalModel,
    true_sys: TrueModel,
    ctrl: ControllerSpec,
    cfg: ScenarioConfig,
    space: EnvSpace,
    nrm: WeightedNorm,
    N: int,
    lam: float,
    seed: int,
    *,
    fixed_d: ArrayLike | None = None,
    jobs: int = 1,
) -> AccuracyProfile:
    """Estimate epsilon as the ``(1 - lambda)`` empirical quantile of ``N`` paired deviations.

    Pair ``k`` simulates both systems at the same configuration (drawn
    uniformly unless ``fixed_d`` is given) from the same initial state; the
    true system's disturbance stream is derived from ``(seed, k)``, so the
    result does not depend on ``jobs``. Divergent pairs count as +inf.
    """
    if N < 1:
        raise ValueError("N must be positive")
    coverage_level(lam)
    configs = calibration_configs(space, N, seed, fixed_d)
    worker = partial(_pair_deviation, nominal=nominal, true_sys=true_sys, ctrl=ctrl, cfg=cfg, nrm=nrm, seed=seed)
    deviations = pmap(worker, list(enumerate(configs)), jobs)
    return profile_from_samples(
        deviations,
        lam,
        nrm,
        cfg.t_f,
        mode="fixed" if fixed_d is not None else "sampled",
        dt=cfg.dt,
        seed=seed,
        disturbance=true_sys.disturbance,
    )
