import json

import numpy as np
import pytest

from specguard.bayesopt import Evaluation, FalsificationResult
from specguard.benchmark import ALPHA_WEIGHTS, SPEC_TEXT, segway_env_space, segway_models
from specguard.calibrate import profile_from_samples
from specguard.certify import Certificate, NormMismatchError, ValidationReport, certify, validate_empirically
from specguard.signals import WeightedNorm, sup_deviation
from specguard.stl import build_measure, parse_spec, robustness
from specguard.systems import ControllerSpec, ScenarioConfig, TrueModel, derive_seed, simulate_nominal, simulate_true

ALPHA = WeightedNorm(np.array(ALPHA_WEIGHTS))
SPEC = parse_spec(SPEC_TEXT)
MEASURE = build_measure(SPEC, ALPHA)
FIXTURE_D = (4.0, 5.0, 1.0, 2.0, 4.885)


def falsification(h_star, d=FIXTURE_D):
    return FalsificationResult.from_history([Evaluation(0, d, h_star, h_star)], 1, ["G1_i", "G1_j", "G2_i", "G2_j", "T"])


def profile_with_epsilon(eps, lam=0.05, norm=ALPHA):
    # 20 samples with the 19th order statistic at eps
    samples = [eps * k / 19 for k in range(1, 20)] + [10 * eps]
    return profile_from_samples(samples, lam, norm, 10.0, dt=0.01)


def test_stored_fixture_certifies():
    ap = profile_with_epsilon(0.125)
    assert ap.epsilon == 0.125
    cert = certify(falsification(0.225), ap, MEASURE)
    assert cert.certified and cert.probability == 0.95
    assert cert.margin == pytest.approx(0.1)


def test_insufficient_margin_does_not_certify():
    cert = certify(falsification(0.1), profile_with_epsilon(0.125), MEASURE)
    assert not cert.certified and cert.probability is None


def test_boundary_is_inclusive():
    cert = certify(falsification(0.125), profile_with_epsilon(0.125), MEASURE)
    assert cert.certified and cert.margin == 0.0


def test_norm_mismatch_names_both_norms():
    other = WeightedNorm(np.ones(7))
    with pytest.raises(NormMismatchError, match=r"1e-06.*1\.0"):
        certify(falsification(0.3), profile_with_epsilon(0.1, norm=other), MEASURE)


def test_probability_present_iff_certified():
    with pytest.raises(ValueError):
        Certificate(False, 0.95, 0.1, 1.0, 0.2, 0.05, -0.1, SPEC_TEXT, ALPHA_WEIGHTS, ())
    with pytest.raises(ValueError):
        Certificate(True, None, 0.3, 1.0, 0.2, 0.05, 0.1, SPEC_TEXT, ALPHA_WEIGHTS, ())


def test_certificate_json_fields(tmp_path):
    cert = certify(falsification(0.225), profile_with_epsilon(0.125), MEASURE, accuracy_profile_ref="sha256:ab")
    cert.write_json(tmp_path / "c.json")
    data = json.loads((tmp_path / "c.json").read_text())
    assert set(data) == {
        "certified", "probability", "h_star", "L", "epsilon", "lambda", "margin", "spec_text",
        "norm_weights", "assumptions", "accuracy_profile_ref", "falsification_ref", "created_at",
    }
    assert data["assumptions"] and data["spec_text"] == SPEC_TEXT
    assert Certificate.from_dict(data) == cert


def test_certify_is_pure():
    args = (falsification(0.2), profile_with_epsilon(0.15), MEASURE)
    assert certify(*args) == certify(*args)


def test_zero_disturbance_validation_matches_nominal():
    nominal, true_sys, ctrl, cfg = segway_models(0.0)
    d = [5.0, 5.0, 3.0, 3.0, 3.2]
    h = robustness(MEASURE, simulate_nominal(nominal, ctrl, cfg, d))
    report = validate_empirically(true_sys, ctrl, cfg, d, SPEC, MEASURE, K=5, seed=1)
    assert report.rate == 1.0
    assert report.min_robustness >= h


def test_seven_trials_at_worst_case_satisfy():
    _, true_sys, ctrl, cfg = segway_models()
    report = validate_empirically(true_sys, ctrl, cfg, [5.0, 5.0, 3.0, 3.0, 3.17], SPEC, MEASURE, K=7, seed=0)
    assert report.rate == 1.0
    assert len(report.traces) == 7 and report.trace_coordinate == 2
    assert report.seeds == tuple(derive_seed(0, k) for k in range(7))


def test_rate_invariant_and_round_trip(tmp_path):
    _, true_sys, ctrl, cfg = segway_models(12.0)
    report = validate_empirically(true_sys, ctrl, cfg, FIXTURE_D, SPEC, MEASURE, K=6, seed=3, keep_traces=2)
    assert report.rate == sum(report.satisfied) / report.K
    assert all((r >= 0) == s for r, s in zip(report.robustness, report.satisfied) if abs(r) > 1e-9)
    report.write_json(tmp_path / "v.json")
    assert ValidationReport.read_json(tmp_path / "v.json") == report


def _blow_up(x, u, d, w):
    return np.array([1e12])


def _draw(rng):
    return rng.uniform(size=1)


def test_divergence_counts_as_violation():
    true_sys = TrueModel(_blow_up, _draw, 1, 1)
    spec = parse_spec("always (x[0] <= 1)")
    m = build_measure(spec, WeightedNorm(np.ones(1)))
    ctrl = ControllerSpec(lambda t, x, d: np.zeros(1), np.zeros(1), np.zeros(1))
    report = validate_empirically(true_sys, ctrl, ScenarioConfig([0.0], 1.0, 0.1), [0.0], spec, m, K=3, seed=0)
    assert report.rate == 0.0 and report.divergences == 3
    assert report.min_robustness == float("-inf")


def test_proof_chain_inequality_spot_check():
    nominal, true_sys, ctrl, cfg = segway_models()
    rng = np.random.default_rng(11)
    space = segway_env_space()
    for k in range(10):
        d = space.sample(rng)
        a = simulate_nominal(nominal, ctrl, cfg, d)
        b = simulate_true(true_sys, ctrl, cfg, d, k)
        assert robustness(MEASURE, a) - robustness(MEASURE, b) <= MEASURE.lipschitz * sup_deviation(a, b, ALPHA)
