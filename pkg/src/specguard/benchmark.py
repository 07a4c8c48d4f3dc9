"""Segway goal-switching benchmark.

A planar wheeled inverted pendulum drives toward goal cell G1 on a 5 x 5
grid of 1 m cells, switches to goal G2 at time T, and must keep its tilt
within 0.7 rad. The environment configuration is ``d = [G1, G2, T]`` in R^5.

State layout ``[x, y, tilt, heading, v, tilt_rate, heading_rate]``. The
heading coordinate is called ``heading`` here to keep it apart from the
name used for specifications.

The nominal and "true" models share the same vector field; the true model
adds a piecewise-constant uniform disturbance on the forward and tilt
accelerations. This disturbance is a stand-in for the unknown environment
noise of the physical platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bayesopt import ContinuousDim, EnvSpace, IntegerDim
from .signals import FloatArray, WeightedNorm
from .stl import Spec, parse_spec
from .systems import ControllerSpec, NominalModel, ScenarioConfig, TrueModel, register

STATE_NAMES = ("x", "y", "tilt", "heading", "v", "tilt_rate", "heading_rate")
TILT = 2
SPEC_TEXT = "always (abs(x[2]) <= 0.7)"
ALPHA_WEIGHTS = (1e-6, 1e-6, 1.0, 1e-6, 1e-6, 1e-6, 1e-6)

# disturbance magnitudes (m/s^2 on forward accel, rad/s^2 on tilt accel)
PRESETS = {"default": 1.5, "stress": 12.0}


@dataclass(frozen=True)
class SegwayParams:
    gravity: float = 9.81
    pendulum_length: float = 0.6  # m, wheel axle to centre of mass
    cell_size: float = 1.0  # m
    grid: int = 5
    # forward loop a = k_tilt*tilt + k_rate*tilt_rate + k_vel*(v - v_ref): LQR gains for the
    # linearization about upright with Q = diag(1, 0.1, 4), R = 1
    k_tilt: float = 29.362
    k_rate: float = 7.264
    k_vel: float = 2.0
    # waypoint guidance
    v_max: float = 2.5  # m/s
    k_dist: float = 1.5  # 1/s
    arrive_radius: float = 0.1  # m
    k_heading: float = 4.0
    k_heading_rate: float = 3.0
    a_max: float = 8.0  # m/s^2
    yaw_acc_max: float = 6.0  # rad/s^2
    t_f: float = 10.0
    dt: float = 0.01


@dataclass(frozen=True)
class SegwayScenario:
    params: SegwayParams
    disturbance_magnitude: float
    spec_text: str = SPEC_TEXT

    @property
    def spec(self) -> Spec:
        return parse_spec(self.spec_text)

    @property
    def norm(self) -> WeightedNorm:
        return WeightedNorm(np.array(ALPHA_WEIGHTS))

    @property
    def space(self) -> EnvSpace:
        return segway_env_space(self.params)


def cell_center(cell: tuple[float, float], params: SegwayParams = SegwayParams()) -> tuple[float, float]:
    """Metric centre of grid cell ``(i, j)`` with ``i, j`` in 1..grid."""
    return ((cell[0] - 0.5) * params.cell_size, (cell[1] - 0.5) * params.cell_size)


class SegwayDynamics:
    """Vector fields of the Segway; instances are picklable."""

    def __init__(self, params: SegwayParams = SegwayParams(), disturbance_magnitude: float = 0.0):
        if disturbance_magnitude < 0:
            raise ValueError("disturbance magnitude must be non-negative")
        self.params = params
        self.magnitude = float(disturbance_magnitude)

    def _rates(self, x: FloatArray, a: float, yaw_acc: float, w_v: float, w_tilt: float) -> FloatArray:
        _, _, tilt, heading, v, tilt_rate, heading_rate = x.tolist()
        p = self.params
        tilt_acc = (p.gravity * math.sin(tilt) - a * math.cos(tilt)) / p.pendulum_length
        return np.array([
            v * math.cos(heading),
            v * math.sin(heading),
            tilt_rate,
            heading_rate,
            a + w_v,
            tilt_acc + w_tilt,
            yaw_acc,
        ])

    def nominal(self, x: FloatArray, u: FloatArray, d: FloatArray) -> FloatArray:
        return self._rates(x, u[0], u[1], 0.0, 0.0)

    def true(self, x: FloatArray, u: FloatArray, d: FloatArray, w: FloatArray) -> FloatArray:
        return self._rates(x, u[0], u[1], w[0], w[1])

    def sample(self, rng: np.random.Generator) -> FloatArray:
        return rng.uniform(-self.magnitude, self.magnitude, size=2)


class WaypointController:
    """Track goal G1 until time T, then G2, with an LQR balance loop.

    Guidance sets a forward speed reference proportional to the goal distance
    (scaled by the cosine of the heading error, so a goal behind the vehicle
    is approached in reverse while turning) and a PD heading command.
    """

    def __init__(self, params: SegwayParams = SegwayParams()):
        self.params = params

    def reference(self, t: float, d: FloatArray) -> tuple[float, float]:
        goal = (d[0], d[1]) if t < d[4] else (d[2], d[3])
        return cell_center(goal, self.params)

    def __call__(self, t: float, x: FloatArray, d: FloatArray) -> FloatArray:
        p = self.params
        px, py, tilt, heading, v, tilt_rate, heading_rate = x.tolist()
        gx, gy = self.reference(t, d)
        dx, dy = gx - px, gy - py
        dist = math.hypot(dx, dy)
        err = 0.0
        if dist > p.arrive_radius:
            err = math.atan2(math.sin(math.atan2(dy, dx) - heading), math.cos(math.atan2(dy, dx) - heading))
        v_ref = min(p.k_dist * dist, p.v_max) * math.cos(err)
        a = p.k_tilt * tilt + p.k_rate * tilt_rate + p.k_vel * (v - v_ref)
        yaw_acc = p.k_heading * err - p.k_heading_rate * heading_rate
        return np.array([a, yaw_acc])


def segway_env_space(params: SegwayParams = SegwayParams()) -> EnvSpace:
    cells = tuple(range(1, params.grid + 1))
    return EnvSpace(
        (
            IntegerDim(cells, "G1_i"),
            IntegerDim(cells, "G1_j"),
            IntegerDim(cells, "G2_i"),
            IntegerDim(cells, "G2_j"),
            ContinuousDim(0.0, params.t_f, "T"),
        )
    )


def segway_models(
    disturbance_magnitude: float = PRESETS["default"], params: SegwayParams = SegwayParams()
) -> tuple[NominalModel, TrueModel, ControllerSpec, ScenarioConfig]:
    dyn = SegwayDynamics(params, disturbance_magnitude)
    nominal = NominalModel(dyn.nominal, n=7, m=2, name="segway-nominal")
    true_sys = TrueModel(
        dyn.true,
        dyn.sample,
        n=7,
        m=2,
        name="segway-true",
        disturbance=f"uniform[-{disturbance_magnitude:g}, {disturbance_magnitude:g}] on forward and tilt "
        "accelerations, redrawn every step (stand-in for the unknown environment noise)",
    )
    ctrl = ControllerSpec(
        WaypointController(params),
        lower=np.array([-params.a_max, -params.yaw_acc_max]),
        upper=np.array([params.a_max, params.yaw_acc_max]),
        name="segway-waypoint",
    )
    cfg = ScenarioConfig(np.zeros(7), params.t_f, params.dt)
    return nominal, true_sys, ctrl, cfg


def preset_magnitude(preset: str) -> float:
    try:
        return PRESETS[preset]
    except KeyError:
        raise KeyError(f"unknown preset {preset!r} (known: {', '.join(PRESETS)})") from None


register("segway-nominal", lambda preset="default": segway_models(preset_magnitude(preset))[0])
register("segway-true", lambda preset="default": segway_models(preset_magnitude(preset))[1])
register("segway-waypoint", lambda preset="default": segway_models(preset_magnitude(preset))[2])
register("segway-space", lambda preset="default": segway_env_space())
