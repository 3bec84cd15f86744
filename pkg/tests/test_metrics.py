"""Recall metrics, the error taxonomy, and deployment proxies."""

from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomcodec import ccl
from atomcodec.atoms import Atom, AtomType, Modality, Value, atom_id
from atomcodec.ccl import ccl_to_atoms, parse_ccl
from atomcodec.lexicon import load_lexicon
from atomcodec.metrics import (
    ErrorKind,
    ErrorRecord,
    EvalReport,
    GoldAnnotation,
    MetricsError,
    ROW_HEADER,
    build_report,
    car,
    classify_errors,
    commitment_density,
    deployment_proxies,
    recoverable,
    war,
)
from atomcodec.scoring import RenderDecision
from atomcodec.tokens import lexical_tokens

from .reference_texts import EPIDEMIC_CORE

FIXTURES = Path(ccl.__file__).parent / "fixtures"


def _atom(subject, value=True, **kw):
    base = dict(
        type=AtomType.CONSTRAINT,
        subject=subject,
        predicate="allowed",
        value=Value.of_bool(value) if isinstance(value, bool) else value,
    )
    base.update(kw)
    return Atom(**base)


def _gold(n=12, **kw):
    return GoldAnnotation(tuple(_atom(f"subject_{i}") for i in range(n)), **kw)


@pytest.fixture(scope="module")
def epidemic_lex():
    return load_lexicon(FIXTURES / "epidemic" / "lexicon.json")


@pytest.fixture(scope="module")
def epidemic_atoms(epidemic_lex):
    return ccl_to_atoms(parse_ccl(EPIDEMIC_CORE), epidemic_lex)


# -- recall -------------------------------------------------------------------


def test_car_all_recovered():
    gold = _gold(12)
    assert car(gold, gold.atoms) == 1.0


def test_car_partial():
    gold = _gold(12)
    assert car(gold, gold.atoms[:8]) == pytest.approx(8 / 12, abs=1e-9)


def test_car_empty_gold_is_an_error():
    with pytest.raises(MetricsError):
        car(GoldAnnotation(()), [])


def test_car_against_decoded_packet(epidemic_lex, epidemic_atoms):
    gold = GoldAnnotation(tuple(epidemic_atoms))
    assert car(gold, epidemic_atoms) == 1.0


def test_war_weighted_losses():
    a, b = _atom("heavy"), _atom("light")
    gold = GoldAnnotation((a, b), weights={atom_id(a): 5.0, atom_id(b): 1.0})
    assert war(gold, [b]) == pytest.approx(1 / 6)
    assert war(gold, [a]) == pytest.approx(5 / 6)
    assert war(gold, [a, b]) == 1.0


@given(st.lists(st.booleans(), min_size=1, max_size=12))
def test_war_equals_car_under_uniform_weights(mask):
    atoms = tuple(_atom(f"s{i}") for i in range(len(mask)))
    gold = GoldAnnotation(atoms)
    recovered = [a for a, keep in zip(atoms, mask) if keep]
    assert war(gold, recovered) == pytest.approx(car(gold, recovered))


@given(st.lists(st.booleans(), min_size=2, max_size=10), st.integers(0, 9))
def test_adding_recovered_atom_never_hurts(mask, extra):
    atoms = tuple(_atom(f"s{i}") for i in range(len(mask)))
    gold = GoldAnnotation(
        atoms, weights={atom_id(a): i + 1.0 for i, a in enumerate(atoms)}
    )
    recovered = [a for a, keep in zip(atoms, mask) if keep]
    grown = recovered + [atoms[extra % len(atoms)]]
    assert car(gold, grown) >= car(gold, recovered)
    assert war(gold, grown) >= war(gold, recovered)
    assert commitment_density(gold, grown, 40) >= commitment_density(gold, recovered, 40)


def test_commitment_density_arithmetic():
    gold = _gold(10)
    assert commitment_density(gold, gold.atoms, 50) == pytest.approx(0.2)
    assert commitment_density(gold, [], 50) == 0.0
    with pytest.raises(MetricsError):
        commitment_density(gold, gold.atoms, 0)


def test_recoverable_with_allowed_omissions():
    gold = _gold(3)
    assert recoverable(gold.atoms, gold)
    assert not recoverable(gold.atoms[:2], gold)
    assert recoverable(gold.atoms[:2], gold, allowed_omissions=[atom_id(gold.atoms[2])])
    with pytest.raises(MetricsError):
        recoverable(gold.atoms, gold, allowed_omissions=[atom_id(_atom("stranger"))])


# -- gold annotations -----------------------------------------------------------


def test_gold_annotation_validation():
    base = _gold(2)
    with pytest.raises(MetricsError):
        GoldAnnotation(base.atoms, weights={atom_id(_atom("x")): 1.0})
    with pytest.raises(MetricsError):
        GoldAnnotation(base.atoms, weights={atom_id(base.atoms[0]): 0.0})
    with pytest.raises(MetricsError):
        GoldAnnotation(base.atoms, status={atom_id(base.atoms[0]): "undecided"})


def test_gold_json_roundtrip():
    a, b = _atom("kept"), _atom("dropped_choice")
    gold = GoldAnnotation(
        (a, b), weights={atom_id(a): 4.0}, status={atom_id(b): "rejected"}
    )
    again = GoldAnnotation.from_json(gold.to_json())
    assert again == gold
    assert again.active_atoms == (a,)
    assert again.marked_atoms == (b,)
    assert again.weight_of(atom_id(a)) == 4.0
    assert again.weight_of(atom_id(b)) == 1.0


def test_rejected_atoms_leave_recall_denominator():
    a, b = _atom("kept"), _atom("dropped_choice")
    gold = GoldAnnotation((a, b), status={atom_id(b): "rejected"})
    assert car(gold, [a]) == 1.0


# -- error taxonomy --------------------------------------------------------------


def _as_gold(atoms, **kw):
    return GoldAnnotation(tuple(atoms), **kw)


def _swap(atoms, subject, **changes):
    return [replace(a, **changes) if a.subject == subject else a for a in atoms]


def test_no_errors_when_recovered_equals_gold(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    assert classify_errors(gold, epidemic_atoms, epidemic_lex) == ()


def test_injection_remove_assets(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = [a for a in epidemic_atoms if a.subject != "external_assets"]
    errors = classify_errors(gold, recovered, epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.OMISSION]
    assert not errors[0].conflict
    assert errors[0].display == "omission"
    assert car(gold, recovered) < 1.0


def test_injection_count_mutation(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = _swap(epidemic_atoms, "agent_count", value=Value.of_int(200))
    errors = classify_errors(gold, recovered, epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.MUTATION]
    assert errors[0].conflict
    assert errors[0].display == "mutation"
    assert car(gold, recovered) < 1.0


def test_injection_libs_polarity_flip(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = _swap(epidemic_atoms, "external_libraries", value=Value.of_bool(True))
    errors = classify_errors(gold, recovered, epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.POLARITY_FLIP]
    assert errors[0].conflict
    assert errors[0].display == "polarity/value conflict"
    assert car(gold, recovered) < 1.0


def test_injection_output_contract_conflict(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = _swap(epidemic_atoms, "answer_format", value=Value.of_enum("explanation"))
    errors = classify_errors(gold, recovered, epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.MUTATION]
    assert errors[0].conflict
    assert errors[0].display == "output-contract conflict"
    assert car(gold, recovered) < 1.0


def test_injection_delete_reset(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = [a for a in epidemic_atoms if a.subject != "reset_control"]
    errors = classify_errors(gold, recovered, epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.OMISSION]
    assert not errors[0].conflict
    assert car(gold, recovered) < 1.0


def test_safety_omission_is_erasure():
    boundary = _atom(
        "defensive_scope",
        type=AtomType.SAFETY_BOUNDARY,
        scope="session",
        criticality=5,
        safety=True,
    )
    gold = _as_gold([boundary, _atom("other")])
    errors = classify_errors(gold, [_atom("other")])
    assert [e.kind for e in errors] == [ErrorKind.SAFETY_BOUNDARY_ERASURE]
    assert errors[0].display == "safety-boundary erasure"


def test_weakening_by_modality_downgrade():
    strict = _atom("deadline", modality=Modality.MUST)
    gold = _as_gold([strict])
    relaxed = replace(strict, modality=Modality.MAY)
    errors = classify_errors(gold, [relaxed])
    assert [e.kind for e in errors] == [ErrorKind.WEAKENING]
    assert "must -> may" in errors[0].note


def test_weakening_by_declared_generalization(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = _swap(epidemic_atoms, "movement_model", value=Value.of_enum("any_movement"))
    errors = classify_errors(gold, recovered, epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.WEAKENING]
    # without the lexicon's generalization pairs the same change is a mutation
    errors = classify_errors(gold, recovered)
    assert [e.kind for e in errors] == [ErrorKind.MUTATION]


def test_scope_error():
    right = _atom("reset_scope", scope="task")
    gold = _as_gold([right])
    displaced = replace(right, scope="chart_only")
    errors = classify_errors(gold, [displaced])
    assert [e.kind for e in errors] == [ErrorKind.SCOPE_ERROR]
    assert "chart_only" in errors[0].note
    assert errors[0].display == "scope error"


def test_temporal_decision_error():
    rejected = _atom("svg_renderer", type=AtomType.DECISION, predicate="selected")
    gold = GoldAnnotation(
        (rejected, _atom("kept")), status={atom_id(rejected): "rejected"}
    )
    errors = classify_errors(gold, [rejected, _atom("kept")])
    assert [e.kind for e in errors] == [ErrorKind.TEMPORAL_DECISION_ERROR]
    assert "rejected decision resurfaced" in errors[0].note
    # silence about a rejected decision is correct behavior
    assert classify_errors(gold, [_atom("kept")]) == ()


def test_hallucinated_commitment(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    invented = _atom("webgl_renderer", type=AtomType.OUTPUT_CONTRACT, predicate="required")
    errors = classify_errors(gold, list(epidemic_atoms) + [invented], epidemic_lex)
    assert [e.kind for e in errors] == [ErrorKind.HALLUCINATED_COMMITMENT]
    assert errors[0].gold_id is None
    assert errors[0].found == invented
    assert errors[0].display == "hallucinated commitment"


def test_error_record_invariants():
    with pytest.raises(ValueError):
        ErrorRecord(ErrorKind.OMISSION)
    with pytest.raises(ValueError):
        ErrorRecord(ErrorKind.HALLUCINATED_COMMITMENT)
    with pytest.raises(ValueError):
        ErrorRecord(
            ErrorKind.HALLUCINATED_COMMITMENT,
            gold_id=atom_id(_atom("x")),
            found=_atom("x"),
        )


def test_at_most_one_record_per_gold_atom(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    mangled = _swap(
        _swap(epidemic_atoms, "agent_count", value=Value.of_int(1)),
        "external_assets",
        value=Value.of_bool(True),
    )
    mangled = [a for a in mangled if a.subject != "reset_control"]
    errors = classify_errors(gold, mangled, epidemic_lex)
    assert len(errors) == 3
    assert len({e.gold_id for e in errors}) == 3


# -- report -----------------------------------------------------------------------


def test_report_for_faithful_packet(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    tokens = lexical_tokens(EPIDEMIC_CORE)
    report = build_report(
        "ccl_core",
        gold,
        epidemic_atoms,
        tokens,
        external_token_counts={"cl100k_base": 115, "o200k_base": 117},
        lexicon=epidemic_lex,
    )
    assert report.car == report.war == report.atom_recall == 1.0
    assert report.atom_precision == 1.0
    assert report.conflict_rate == 0.0
    assert report.errors == ()
    assert report.cd == pytest.approx(len(epidemic_atoms) / tokens)
    assert report.to_row() == f"ccl_core,{tokens},115,117,1.00,1.00,1.00,1.00,0.00"
    assert ROW_HEADER.split(",")[:4] == [
        "method", "lexical_tokens", "cl100k_tokens", "o200k_tokens",
    ]


def test_report_flags_conflicts(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    recovered = _swap(epidemic_atoms, "agent_count", value=Value.of_int(200))
    report = build_report("mangled", gold, recovered, 100, lexicon=epidemic_lex)
    assert report.car < 1.0
    assert report.conflict_rate == pytest.approx(1 / len(recovered))
    assert report.count_error_rate == pytest.approx(1 / len(gold.active_atoms))
    assert report.polarity_error_rate == 0.0
    assert report.to_row().startswith("mangled,100,-,-,")


def test_report_rates_validated():
    with pytest.raises(ValueError):
        EvalReport("m", 10, car=1.2)
    with pytest.raises(ValueError):
        EvalReport("m", 10, cd=-0.1)


def test_missing_external_counts_render_as_dash(epidemic_atoms, epidemic_lex):
    gold = _as_gold(epidemic_atoms)
    report = build_report("bare", gold, epidemic_atoms, 99, lexicon=epidemic_lex)
    assert report.to_row() == "bare,99,-,-,1.00,1.00,1.00,1.00,0.00"


# -- proxies -----------------------------------------------------------------------


def test_self_consistency_of_deterministic_extractor(epidemic_atoms):
    report = deployment_proxies([epidemic_atoms, epidemic_atoms])
    assert report.self_consistency == 1.0
    assert report.cross_agreement is None
    assert report.schema_failures == 0
    assert report.low_confidence_count == 0
    assert not report.suggests_fallback


def test_divergent_passes_lower_consistency(epidemic_atoms):
    report = deployment_proxies([epidemic_atoms, epidemic_atoms[:-2]])
    assert report.self_consistency < 1.0
    assert report.suggests_fallback


def test_schema_failures_counted():
    broken = _atom("bad", criticality=9)
    report = deployment_proxies([[broken, _atom("fine")]])
    assert report.schema_failures == 1


def test_low_confidence_counted():
    shaky = _atom("shaky", confidence=0.3)
    report = deployment_proxies([[shaky, _atom("solid")]])
    assert report.low_confidence_count == 1
    assert report.suggests_fallback


def test_high_risk_coverage_tracks_decisions():
    risky = _atom(
        "network_calls",
        type=AtomType.SAFETY_BOUNDARY,
        scope="session",
        criticality=5,
        safety=True,
        confidence=0.0,
    )
    held = {atom_id(risky): RenderDecision.CANONICAL_PLUS_SPAN}
    covered = deployment_proxies([[risky]], decisions=held)
    assert covered.high_risk_coverage == 1.0
    uncovered = deployment_proxies([[risky]], decisions={})
    assert uncovered.high_risk_coverage == 0.0
    assert uncovered.suggests_fallback


def test_roundtrip_consistency(epidemic_atoms):
    report = deployment_proxies(
        [epidemic_atoms],
        packet_atoms=epidemic_atoms,
        decoded_atoms=list(epidemic_atoms[:-1]),
    )
    assert report.roundtrip_consistency == pytest.approx(
        (len(epidemic_atoms) - 1) / len(epidemic_atoms)
    )
    assert report.suggests_fallback


def test_cross_agreement_between_extractors(epidemic_atoms):
    report = deployment_proxies(
        [epidemic_atoms],
        cross_sets=[epidemic_atoms, list(epidemic_atoms)],
    )
    assert report.cross_agreement == 1.0


def test_proxies_need_a_pass():
    with pytest.raises(MetricsError):
        deployment_proxies([])
