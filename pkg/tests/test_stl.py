import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import random_predicate, random_pwl_trajectory, random_reach_avoid
from oracles import brute_robustness, interval_distance
from specguard.signals import Trajectory, WeightedNorm, sup_deviation, weighted_norm
from specguard.stl import (
    FALSE,
    TRUE,
    Always,
    And,
    Eventually,
    Halfspace,
    Interval,
    Not,
    NotReachAvoidError,
    Or,
    Pred,
    SpecSyntaxError,
    Until,
    build_measure,
    format_spec,
    holds,
    is_certifiable,
    parse_spec,
    predicate_coordinates,
    reach_avoid_form,
    robustness,
    satisfies,
    signed_distance,
)

ALPHA = WeightedNorm(np.array([1e-6, 1e-6, 1.0, 1e-6, 1e-6, 1e-6, 1e-6]))
TILT_SPEC = "always (abs(x[2]) <= 0.7)"


def const_traj(x, samples=5):
    return Trajectory(np.arange(samples) * 0.1, np.tile(np.asarray(x, dtype=float), (samples, 1)))


def tilt_traj(thetas):
    states = np.zeros((len(thetas), 7))
    states[:, 2] = thetas
    return Trajectory(np.arange(len(thetas)) * 0.01, states)


# --------------------------------------------------------------------------- parsing


def test_parse_tilt_spec():
    assert parse_spec(TILT_SPEC) == Always(Pred(Interval(2, lo=-0.7, hi=0.7)))


def test_parse_eventually():
    assert parse_spec("eventually (x[0] >= 1.0)") == Eventually(Pred(Interval(0, lo=1.0)))


def test_syntax_error_at_end_of_input():
    with pytest.raises(SpecSyntaxError, match="end of input") as info:
        parse_spec("always (x[0] <=")
    assert (info.value.line, info.value.column) == (1, 16)


def test_syntax_error_reports_line_and_column():
    with pytest.raises(SpecSyntaxError) as info:
        parse_spec("always (\n  x[0] <= )")
    assert info.value.line == 2


def test_unknown_identifier():
    with pytest.raises(SpecSyntaxError, match="unknown identifier 'y'"):
        parse_spec("always (y[0] <= 1)")


def test_chained_and_linear_predicates():
    assert parse_spec("always (-1 < x[1] <= 2)") == Always(Pred(Interval(1, lo=-1.0, hi=2.0, lo_strict=True)))
    assert parse_spec("eventually (2*x[0] - x[1] >= 1)") == Eventually(Pred(Halfspace((2.0, -1.0), 1.0)))
    outside = parse_spec("eventually (abs(x[0]) > 3)").arg.pred
    assert [holds(outside, np.array([v])) for v in (-3.5, -3.0, 0.0, 3.0, 3.5)] == [True, False, False, False, True]


def test_boolean_fragment_precedence():
    spec = parse_spec("x[0] > 0 or x[1] > 0 and not x[2] > 0 until x[3] > 0")
    assert isinstance(spec, Until)
    assert isinstance(spec.left, Or) and isinstance(spec.left.right, And)
    assert isinstance(spec.left.right.right, Not)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_format_parse_round_trip(seed):
    rng = np.random.default_rng(seed)
    spec = random_reach_avoid(rng, 4)
    if rng.integers(2):
        spec = Or(And(spec, Pred(random_predicate(rng, 4))), Until(TRUE, Not(Pred(random_predicate(rng, 4)))))
    text = format_spec(spec)
    back = parse_spec(text)
    assert format_spec(back) == text
    # asymmetric outside intervals print as a negated interval, so compare meaning as well
    for _ in range(5):
        s = random_pwl_trajectory(rng, 4)
        assert satisfies(back, s) == satisfies(spec, s)


def test_symmetric_specs_round_trip_structurally():
    for text in [TILT_SPEC, "eventually (abs(x[0]) > 3.0)", "(x[0] > 1.0) until (-1.0 <= x[1] < 2.0)"]:
        assert format_spec(parse_spec(text)) == text
        assert parse_spec(format_spec(parse_spec(text))) == parse_spec(text)


# --------------------------------------------------------------------------- signed distance


def test_tilt_measurement_is_margin_to_bound():
    x = np.zeros(7)
    x[2] = 0.2
    p = Interval(2, lo=-0.7, hi=0.7)
    assert signed_distance(p, x, ALPHA) == pytest.approx(0.5, abs=1e-15)
    x[2] = 0.7
    assert signed_distance(p, x, ALPHA) == 0.0


def test_halfline_distance_by_hand():
    x = np.array([0.25, 3.0])
    assert signed_distance(Interval(0, lo=1.0), x, WeightedNorm(np.array([1.0, 1.0]))) == -0.75


def test_literals_are_constants():
    assert signed_distance(TRUE, np.zeros(2), ALPHA) == 1.0
    assert signed_distance(FALSE, np.zeros(2), ALPHA) == -1.0


def test_zero_weight_on_predicate_coordinate_rejected():
    with pytest.raises(ValueError, match="zero"):
        signed_distance(Interval(0, hi=1.0), np.zeros(2), WeightedNorm(np.array([0.0, 1.0])))


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_interval_distance_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 3.0, size=3)
    lo, hi = np.sort(rng.uniform(-2, 2, size=2))
    p = Interval(1, lo=float(lo), hi=float(hi))
    x = rng.uniform(-3, 3, size=3)
    assert signed_distance(p, x, WeightedNorm(w)) == pytest.approx(interval_distance(x[1], lo, hi, w[1]), abs=1e-12)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_halfspace_distance_reaches_the_plane(seed):
    # the weighted-norm projection onto {a.y = b} is x - (a.x - b) W^-1 a / (a' W^-1 a)
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 3.0, size=3)
    a, b = rng.normal(size=3), float(rng.normal())
    x = rng.normal(size=3)
    nrm = WeightedNorm(w)
    h = signed_distance(Halfspace(tuple(a), b), x, nrm)
    proj = x - (a @ x - b) * (a / w) / (a @ (a / w))
    assert a @ proj == pytest.approx(b, abs=1e-9)
    assert abs(h) == pytest.approx(weighted_norm(x - proj, nrm), rel=1e-9, abs=1e-12)
    assert (h >= 0) == (a @ x >= b)


@settings(max_examples=500)
@given(st.integers(0, 2**32 - 1))
def test_signed_distance_is_one_lipschitz(seed):
    rng = np.random.default_rng(seed)
    nrm = WeightedNorm(rng.uniform(0.05, 4.0, size=3))
    p = random_predicate(rng, 3)
    x, y = rng.uniform(-2, 2, size=(2, 3))
    assert abs(signed_distance(p, x, nrm) - signed_distance(p, y, nrm)) <= weighted_norm(x - y, nrm) * (1 + 1e-12)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_sign_of_distance_matches_truth_off_boundary(seed):
    rng = np.random.default_rng(seed)
    p = random_predicate(rng, 3)
    x = rng.uniform(-2, 2, size=3)
    h = signed_distance(p, x, WeightedNorm(np.ones(3)))
    if abs(h) > 1e-9:
        assert (h > 0) == holds(p, x)


# --------------------------------------------------------------------------- measures


def test_build_measure_modes():
    m = build_measure(parse_spec(TILT_SPEC), ALPHA)
    assert (m.mode, m.lipschitz) == ("min", 1.0)
    m = build_measure(parse_spec("eventually (x[0] >= 1)"), WeightedNorm(np.ones(2)))
    assert (m.mode, m.lipschitz) == ("max", 1.0)


@pytest.mark.parametrize(
    "text",
    ["always (x[0] > 0 and x[1] > 0)", "x[0] > 0 until x[1] > 0", "always (eventually (x[0] > 0))", "x[0] > 0"],
)
def test_non_reach_avoid_rejected(text):
    spec = parse_spec(text)
    assert not is_certifiable(spec)
    with pytest.raises(NotReachAvoidError, match="not a reach-avoid"):
        build_measure(spec, WeightedNorm(np.ones(2)))


def test_expanded_forms_are_certifiable():
    assert reach_avoid_form(parse_spec("true until x[0] > 0"))[0] == "eventually"
    assert reach_avoid_form(parse_spec("not (true until not x[0] > 0)"))[0] == "always"


def test_robustness_examples():
    m = build_measure(parse_spec(TILT_SPEC), ALPHA)
    x = np.zeros(7)
    x[2] = 0.1
    assert robustness(m, const_traj(x)) == pytest.approx(0.6, abs=1e-15)
    assert robustness(m, tilt_traj([0.0, 0.3, 0.7, 0.1])) == 0.0


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_robustness_matches_brute_fold(seed):
    rng = np.random.default_rng(seed)
    spec = random_reach_avoid(rng, 3)
    nrm = WeightedNorm(rng.uniform(0.1, 2.0, size=3))
    m = build_measure(spec, nrm)
    s = Trajectory(np.arange(50) * 0.1, rng.uniform(-2, 2, size=(50, 3)))
    assert robustness(m, s) == pytest.approx(brute_robustness(m.h, s.states, m.mode), rel=1e-12, abs=1e-15)


def test_dimension_mismatch():
    m = build_measure(parse_spec(TILT_SPEC), ALPHA)
    with pytest.raises(ValueError, match="dimension"):
        robustness(m, const_traj(np.zeros(3)))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_negation_duality(seed):
    rng = np.random.default_rng(seed)
    p = Pred(random_predicate(rng, 2))
    nrm = WeightedNorm(rng.uniform(0.1, 2, size=2))
    s = random_pwl_trajectory(rng, 2)
    always = robustness(build_measure(Always(p), nrm), s)
    eventually_not = robustness(build_measure(Eventually(Not(p)), nrm), s)
    assert always == -eventually_not


# --------------------------------------------------------------------------- monitor


def test_monitor_examples():
    spec = parse_spec(TILT_SPEC)
    assert satisfies(spec, tilt_traj([0.0, 0.5, -0.69]))
    assert not satisfies(spec, tilt_traj([0.0, 0.9, 0.1]))
    ramp = Trajectory(np.linspace(0, 2, 21), np.linspace(0, 2, 21)[:, None])
    assert satisfies(parse_spec("eventually (x[0] >= 1.0)"), ramp)


def _until_by_definition(left, right):
    n = len(left)
    return any(right[k] and all(left[j] for j in range(k)) for k in range(n))


@settings(max_examples=200)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=2, max_size=12))
def test_until_matches_definition(bits):
    # coordinate 0 encodes the left operand, coordinate 1 the right one
    states = np.array([[1.0 if a else -1.0, 1.0 if b else -1.0] for a, b in bits])
    s = Trajectory(np.arange(len(bits)) * 0.1, states)
    spec = parse_spec("x[0] > 0 until x[1] > 0")
    assert satisfies(spec, s) == _until_by_definition([a for a, _ in bits], [b for _, b in bits])


def test_negation_is_evaluated_at_the_same_time():
    # x[0] is false at t = 0 and true at the final sample; "not" must use t = 0
    s = Trajectory(np.array([0.0, 1.0]), np.array([[-1.0], [1.0]]))
    assert satisfies(parse_spec("not x[0] > 0"), s)


@settings(max_examples=300)
@given(st.integers(0, 2**32 - 1))
def test_sign_consistency_sample(seed):
    rng = np.random.default_rng(seed)
    spec = random_reach_avoid(rng, 3)
    s = random_pwl_trajectory(rng, 3)
    rho = robustness(build_measure(spec, WeightedNorm(np.ones(3))), s)
    if abs(rho) >= 1e-9:
        assert (rho >= 0) == satisfies(spec, s)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_robustness_lipschitz_sample(seed):
    rng = np.random.default_rng(seed)
    nrm = WeightedNorm(rng.uniform(0.1, 2, size=3))
    m = build_measure(random_reach_avoid(rng, 3), nrm)
    a = random_pwl_trajectory(rng, 3)
    b = Trajectory(a.times, a.states + rng.normal(scale=rng.uniform(0.01, 1), size=a.states.shape))
    assert abs(robustness(m, a) - robustness(m, b)) <= m.lipschitz * sup_deviation(a, b, nrm)


def test_predicate_coordinates():
    assert predicate_coordinates(parse_spec("always (abs(x[2]) <= 0.7)")) == [2]
    assert predicate_coordinates(parse_spec("x[3] > 0 until 2*x[0] - x[1] >= 0")) == [0, 1, 3]


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        Interval(0, lo=1.0, hi=0.0)
    with pytest.raises(ValueError):
        Interval(0)
    assert math.isinf(Interval(0, lo=0.0).hi)
