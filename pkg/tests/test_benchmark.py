import numpy as np
import pytest

from specguard.benchmark import (
    ALPHA_WEIGHTS,
    PRESETS,
    SPEC_TEXT,
    SegwayParams,
    SegwayScenario,
    WaypointController,
    cell_center,
    segway_env_space,
    segway_models,
)
from specguard.signals import WeightedNorm, sup_deviation, weighted_norm
from specguard.stl import build_measure, parse_spec, robustness, satisfies
from specguard.systems import resolve, rollout_nominal, simulate_nominal, simulate_true

NORM = WeightedNorm(np.array(ALPHA_WEIGHTS))


def test_space_membership():
    space = segway_env_space()
    assert space.p == 5
    assert space.contains([4, 5, 1, 2, 4.885])
    assert space.contains([3, 3, 1, 1, 0.0])
    assert not space.contains([3, 3, 1, 1, 10.5])
    assert not space.contains([0, 3, 1, 1, 5.0])
    assert not space.contains([2.5, 3, 1, 1, 5.0])


def test_scenario_descriptor():
    sc = SegwayScenario(SegwayParams(), PRESETS["default"])
    assert sc.spec == parse_spec("always (abs(x[2]) <= 0.7)")
    assert sc.norm == NORM
    assert sc.space.names == ["G1_i", "G1_j", "G2_i", "G2_j", "T"]


def test_cell_centres():
    assert cell_center((1, 1)) == (0.5, 0.5)
    assert cell_center((5, 2)) == (4.5, 1.5)


def test_zero_magnitude_twin_has_no_deviation():
    nominal, true_sys, ctrl, cfg = segway_models(0.0)
    d = [4, 5, 1, 2, 4.885]
    assert sup_deviation(simulate_nominal(nominal, ctrl, cfg, d), simulate_true(true_sys, ctrl, cfg, d, 9), NORM) == 0.0


def test_benign_configuration_satisfies():
    nominal, _, ctrl, cfg = segway_models(0.0)
    s = simulate_nominal(nominal, ctrl, cfg, [1, 1, 1, 1, 0.5])
    assert satisfies(parse_spec(SPEC_TEXT), s)
    assert robustness(build_measure(parse_spec(SPEC_TEXT), NORM), s) > 0.5


def test_aggressive_configuration_is_less_robust():
    nominal, _, ctrl, cfg = segway_models(0.0)
    m = build_measure(parse_spec(SPEC_TEXT), NORM)
    benign = robustness(m, simulate_nominal(nominal, ctrl, cfg, [1, 1, 1, 1, 0.5]))
    aggressive = robustness(m, simulate_nominal(nominal, ctrl, cfg, [5, 5, 2, 1, 3.2]))
    assert aggressive < benign


def test_reference_switches_at_first_sample_past_T():
    nominal, _, ctrl, cfg = segway_models(0.0)
    guide = WaypointController()
    d = np.array([4, 5, 1, 2, 4.885])
    refs = [guide.reference(t, d) for t in cfg.times[:-1]]
    switch = next(k for k, r in enumerate(refs) if r == cell_center((1, 2)))
    assert switch == int(np.argmax(cfg.times >= 4.885))
    assert all(r == cell_center((4, 5)) for r in refs[:switch])
    assert all(r == cell_center((1, 2)) for r in refs[switch:])


def test_inputs_stay_in_bounds():
    nominal, _, ctrl, cfg = segway_models(0.0)
    r = rollout_nominal(nominal, ctrl, cfg, [5, 5, 1, 1, 2.0])
    assert np.all(np.abs(r.inputs[:, 0]) <= SegwayParams().a_max)
    assert np.all(np.abs(r.inputs[:, 1]) <= SegwayParams().yaw_acc_max)


def test_alpha_norm_is_tilt_plus_small_correction():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.normal(scale=10, size=7)
        gap = weighted_norm(x, NORM) - abs(x[2])
        assert 0.0 <= gap <= 1e-3 * np.linalg.norm(x) + 1e-15


def test_presets_registered():
    assert resolve("segway-true", preset="stress").disturbance.startswith("uniform[-12")
    assert resolve("segway-space").p == 5
    with pytest.raises(KeyError, match="unknown preset"):
        resolve("segway-true", preset="gale")


def test_different_seeds_give_different_true_runs():
    _, true_sys, ctrl, cfg = segway_models()
    d = [2, 3, 4, 1, 5.0]
    a, b = simulate_true(true_sys, ctrl, cfg, d, 1), simulate_true(true_sys, ctrl, cfg, d, 2)
    assert sup_deviation(a, b, NORM) > 0
