"""Confidence, risk, safety flag, and the render-policy cascade."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomcodec.atoms import Atom, AtomType, Value
from atomcodec.scoring import (
    ConfidenceSignals,
    ConfidenceWeights,
    PolicyConfig,
    PolicyThresholds,
    RenderDecision,
    RiskWeights,
    confidence,
    decide,
    load_policy,
    render_policy,
    risk,
    safety_flag,
)


def atom(criticality=3, safety=False, type_=AtomType.CONSTRAINT, subject="external_libraries"):
    return Atom(
        type=type_,
        subject=subject,
        predicate="allowed",
        value=Value.of_bool(False),
        criticality=criticality,
        safety=safety,
    )


def test_confidence_bounds_and_known_point():
    assert confidence(ConfidenceSignals(1, 1, 1, 1, 1)) == pytest.approx(1.0)
    assert confidence(ConfidenceSignals(0, 0, 0, 0, 0)) == 0.0
    assert confidence(ConfidenceSignals(1, 1, 0, 1, 1)) == pytest.approx(0.80)


def test_confidence_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        ConfidenceWeights(w_span=0.9, w_agree=0.9, w_roundtrip=0, w_schema=0, w_anchor=0)
    with pytest.raises(ValueError):
        ConfidenceWeights(w_span=-0.1, w_agree=0.5, w_roundtrip=0.3, w_schema=0.2, w_anchor=0.1)


unit = st.floats(0, 1, allow_nan=False)


@given(st.tuples(unit, unit, unit, unit, unit), st.tuples(unit, unit, unit, unit, unit))
def test_confidence_monotone_in_each_signal(lo, hi):
    paired = [(min(a, b), max(a, b)) for a, b in zip(lo, hi)]
    low = ConfidenceSignals(*(p[0] for p in paired))
    high = ConfidenceSignals(*(p[1] for p in paired))
    assert confidence(low) <= confidence(high) + 1e-12


def test_risk_known_points():
    assert risk(atom(criticality=1), conf=1.0) == pytest.approx(0.05)
    assert risk(atom(criticality=5), conf=0.5) == pytest.approx(0.375)
    assert risk(atom(criticality=5, safety=True), conf=0.0, ambiguity=1.0) == 1.0


def test_risk_clamped():
    heavy = RiskWeights(2.0, 2.0, 2.0, 2.0)
    assert risk(atom(criticality=5, safety=True), conf=0.0, rw=heavy, ambiguity=1.0) == 1.0


@given(unit, unit, st.integers(1, 5), st.integers(1, 5), st.booleans())
def test_risk_monotonicity(conf, ambiguity, c1, c2, safety):
    lo_c, hi_c = min(c1, c2), max(c1, c2)
    assert risk(atom(lo_c, safety), conf, ambiguity=ambiguity) <= risk(
        atom(hi_c, safety), conf, ambiguity=ambiguity
    ) + 1e-12
    assert risk(atom(c1, safety), conf, ambiguity=ambiguity) >= risk(
        atom(c1, safety), min(conf + 0.1, 1.0), ambiguity=ambiguity
    ) - 1e-12


def test_safety_flag_type_membership():
    boundary = atom(type_=AtomType.SAFETY_BOUNDARY, safety=True, subject="payload_details")
    result = safety_flag(boundary)
    assert result.flagged
    assert "atom_type" in result.fired


def test_safety_flag_privacy_subject():
    assert safety_flag(atom(subject="private_data_retention")).flagged


def test_safety_flag_human_tag_only():
    result = safety_flag(atom(), {"human_policy_tag": lambda a: True})
    assert result.flagged
    assert result.fired == ("human_policy_tag",)


def test_safety_flag_all_false_reports_missing():
    result = safety_flag(atom(), {"source_policy_match": lambda a: False})
    assert not result.flagged
    assert "safety_classifier_match" in result.missing_checkers
    assert "source_policy_match" not in result.missing_checkers


# -- policy cascade -----------------------------------------------------------


def test_policy_safety_always_canonical_plus_span():
    a = atom(safety=True, criticality=1)
    assert render_policy(a, conf=1.0, risk_score=0.0) == RenderDecision.CANONICAL_PLUS_SPAN


def test_policy_low_conf_high_crit_preserves_raw():
    assert decide(False, conf=0.49, risk_score=0.2, criticality=3) == (
        RenderDecision.PRESERVE_RAW_MESSAGE
    )


def test_policy_mid_conf_gets_span():
    assert decide(False, conf=0.69, risk_score=0.2, criticality=1) == (
        RenderDecision.CORE_WITH_SPAN
    )


def test_policy_min_allowed_example():
    assert decide(False, conf=0.95, risk_score=0.10, criticality=2) == (
        RenderDecision.MIN_ALLOWED
    )


def test_policy_high_risk_forces_span():
    assert decide(False, conf=0.95, risk_score=0.71, criticality=2) == (
        RenderDecision.CANONICAL_PLUS_SPAN
    )


def test_policy_default_core():
    assert decide(False, conf=0.95, risk_score=0.40, criticality=4) == RenderDecision.CORE


def test_min_allowed_unreachable_for_guarded_inputs():
    grid = [i / 100 for i in range(101)]
    for conf in grid:
        for risk_score in grid:
            for criticality in range(1, 6):
                for safety in (False, True):
                    decision = decide(safety, conf, risk_score, criticality)
                    if decision == RenderDecision.MIN_ALLOWED:
                        assert not safety
                        assert criticality <= 2
                        assert conf >= 0.70
                        assert risk_score < 0.25


@given(st.booleans(), unit, unit, st.integers(1, 5))
def test_policy_totality(safety, conf, risk_score, criticality):
    decision = decide(safety, conf, risk_score, criticality)
    assert isinstance(decision, RenderDecision)


def test_thresholds_validated():
    with pytest.raises(ValueError):
        PolicyThresholds(theta_min=0.8, theta_max=0.7)
    with pytest.raises(ValueError):
        PolicyThresholds(conf_low=0.9, conf_span=0.7)


def test_policy_config_roundtrip(tmp_path):
    path = tmp_path / "policy.json"
    path.write_text(
        '{"thresholds": {"theta_min": 0.2, "theta_max": 0.8, "conf_low": 0.4, "conf_span": 0.6},'
        ' "risk_weights": {"rho_criticality": 0.4, "rho_safety": 0.3,'
        ' "rho_inverse_confidence": 0.2, "rho_ambiguity": 0.1}}',
        encoding="utf-8",
    )
    cfg = load_policy(path)
    assert cfg.thresholds.theta_min == 0.2
    assert cfg.risk_weights.rho_criticality == 0.4
    echo = cfg.echo()
    assert echo["thresholds"]["theta_max"] == 0.8
    assert echo["confidence_weights"]["w_span"] == 0.30
    assert load_policy(None) == PolicyConfig()
