"""Closed-loop simulation: nominal and disturbed models, controllers, fixed-step RK4."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike

from .signals import FloatArray, Trajectory

DIVERGENCE_BOUND = 1e9

VectorField = Callable[[FloatArray, FloatArray, FloatArray], FloatArray]
DisturbedField = Callable[[FloatArray, FloatArray, FloatArray, FloatArray], FloatArray]
Policy = Callable[[float, FloatArray, FloatArray], FloatArray]
Sampler = Callable[[np.random.Generator], FloatArray]


class DivergenceError(RuntimeError):
    """A rollout left the finite state region; ``prefix`` holds the samples before it."""

    def __init__(self, message: str, prefix: Trajectory | None, step: int):
        super().__init__(message)
        self.prefix = prefix
        self.step = step


@dataclass(frozen=True)
class ControllerSpec:
    """State feedback ``u = U(t, x, d)`` clamped into the box ``[lower, upper]``.

    The time argument lets a policy follow time-scheduled references that are
    part of the environment configuration (e.g. a goal switch at time T).
    """

    policy: Policy
    lower: FloatArray
    upper: FloatArray
    name: str = "controller"

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo > hi):
            raise ValueError("control bounds must be matching vectors with lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def m(self) -> int:
        return len(self.lower)

    def __call__(self, t: float, x: FloatArray, d: FloatArray) -> FloatArray:
        u = np.asarray(self.policy(t, x, d), dtype=np.float64)
        return np.minimum(np.maximum(u, self.lower), self.upper)


@dataclass(frozen=True)
class NominalModel:
    field: VectorField
    n: int
    m: int
    name: str = "nominal"


@dataclass(frozen=True)
class TrueModel:
    """Disturbed dynamics ``f(x, u, d, w)`` with a per-step disturbance sampler.

    ``sampler`` draws ``w`` from the generator once per integration step;
    ``w`` is held constant across the step.
    """

    field: DisturbedField
    sampler: Sampler
    n: int
    m: int
    name: str = "true"
    disturbance: str = "unspecified"


@dataclass(frozen=True)
class ScenarioConfig:
    x0: FloatArray
    t_f: float
    dt: float = 0.01

    def __post_init__(self) -> None:
        x0 = np.array(self.x0, dtype=np.float64)
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        if not self.t_f > 0:
            raise ValueError("horizon t_f must be positive")
        if not 0 < self.dt <= self.t_f:
            raise ValueError("step dt must satisfy 0 < dt <= t_f")
        ratio = self.t_f / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"t_f / dt = {ratio} is not an integer")

    @property
    def steps(self) -> int:
        return int(round(self.t_f / self.dt))

    @property
    def times(self) -> FloatArray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class Rollout:
    trajectory: Trajectory
    inputs: FloatArray = field(repr=False)


def _rk4_step(f: Callable[[FloatArray], FloatArray], x: FloatArray, h: float) -> FloatArray:
    k1 = f(x)
    k2 = f(x + (0.5 * h) * k1)
    k3 = f(x + (0.5 * h) * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _integrate(
    rhs: Callable[[FloatArray, FloatArray, FloatArray | None], FloatArray],
    ctrl: ControllerSpec,
    cfg: ScenarioConfig,
    d: FloatArray,
    n: int,
    draw: Callable[[], FloatArray] | None,
) -> Rollout:
    if len(cfg.x0) != n:
        raise ValueError(f"initial state has dimension {len(cfg.x0)}, model expects {n}")
    steps, h = cfg.steps, cfg.dt
    times = cfg.times
    states = np.empty((steps + 1, n))
    inputs = np.empty((steps, ctrl.m))
    x = np.array(cfg.x0, dtype=np.float64)
    states[0] = x
    for k in range(steps):
        u = ctrl(times[k], x, d)
        inputs[k] = u
        w = draw() if draw is not None else None
        x = _rk4_step(lambda z: rhs(z, u, w), x, h)
        if not (np.all(np.isfinite(x)) and np.max(np.abs(x)) <= DIVERGENCE_BOUND):
            prefix = Trajectory(times[: k + 1], states[: k + 1]) if k >= 1 else None
            raise DivergenceError(f"state diverged at t = {times[k + 1]:.6g}", prefix, k + 1)
        states[k + 1] = x
    return Rollout(Trajectory(times, states), inputs)


def rollout_nominal(model: NominalModel, ctrl: ControllerSpec, cfg: ScenarioConfig, d: ArrayLike) -> Rollout:
    d = np.asarray(d, dtype=np.float64)
    f = model.field
    return _integrate(lambda x, u, w: f(x, u, d), ctrl, cfg, d, model.n, None)


def rollout_true(
    model: TrueModel, ctrl: ControllerSpec, cfg: ScenarioConfig, d: ArrayLike, seed: int
) -> Rollout:
    d = np.asarray(d, dtype=np.float64)
    rng = np.random.default_rng(seed)
    f, sampler = model.field, model.sampler
    return _integrate(lambda x, u, w: f(x, u, d, w), ctrl, cfg, d, model.n, lambda: sampler(rng))


def simulate_nominal(model: NominalModel, ctrl: ControllerSpec, cfg: ScenarioConfig, d: ArrayLike) -> Trajectory:
    """Deterministic closed-loop trajectory of the nominal model."""
    return rollout_nominal(model, ctrl, cfg, d).trajectory


def simulate_true(
    model: TrueModel, ctrl: ControllerSpec, cfg: ScenarioConfig, d: ArrayLike, seed: int
) -> Trajectory:
    """Closed-loop trajectory of the disturbed model; equal seeds give identical output."""
    return rollout_true(model, ctrl, cfg, d, seed).trajectory


def derive_seed(master: int, *path: int) -> int:
    """Independent 32-bit seed for sub-stream ``path`` of ``master``."""
    return int(np.random.SeedSequence([int(master), *map(int, path)]).generate_state(1)[0])


# --------------------------------------------------------------------------- registry

_MODEL_REGISTRY: dict[str, Callable[..., object]] = {}


def register(name: str, factory: Callable[..., object]) -> None:
    _MODEL_REGISTRY[name] = factory


def resolve(name: str, **kwargs) -> object:
    try:
        factory = _MODEL_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_MODEL_REGISTRY)) or "none"
        raise KeyError(f"unknown model {name!r} (registered: {known})") from None
    return factory(**kwargs)


def registered() -> list[str]:
    return sorted(_MODEL_REGISTRY)


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))
