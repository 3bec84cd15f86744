"""Confidence aggregation, risk scoring, safety flagging, render policy.

Confidence is a weighted sum of five unit-interval signals and is used only
to trigger conservative fallback, never as a calibrated probability.  Risk
combines criticality, safety, inverse confidence, and ambiguity; it gates
min-profile eligibility and forced raw-span fallback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

from .atoms import Atom, AtomType

_EPS = 1e-9


@dataclass(frozen=True)
class ConfidenceSignals:
    """The five confidence components, each in [0, 1].

    e_span: an exact source span supports the atom; e_agree: independent
    extractors agree; e_roundtrip: decompression recovers the atom;
    e_schema: the record validates; e_anchor: the source holds an obvious
    lexical anchor (number, negation, entity name).
    """

    e_span: float = 0.0
    e_agree: float = 0.0
    e_roundtrip: float = 0.0
    e_schema: float = 0.0
    e_anchor: float = 0.0

    def __post_init__(self) -> None:
        for name in ("e_span", "e_agree", "e_roundtrip", "e_schema", "e_anchor"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {v}")


@dataclass(frozen=True)
class ConfidenceWeights:
    w_span: float = 0.30
    w_agree: float = 0.25
    w_roundtrip: float = 0.20
    w_schema: float = 0.15
    w_anchor: float = 0.10

    def __post_init__(self) -> None:
        weights = (self.w_span, self.w_agree, self.w_roundtrip, self.w_schema, self.w_anchor)
        if any(w < 0 for w in weights):
            raise ValueError("confidence weights must be nonnegative")
        if abs(sum(weights) - 1.0) > _EPS:
            raise ValueError(f"confidence weights must sum to 1, got {sum(weights)}")


@dataclass(frozen=True)
class RiskWeights:
    """Multipliers for scaled criticality, safety, (1-conf), ambiguity.

    Criticality enters scaled by /5 so that the default equal weights keep
    risk inside [0, 1]; outputs are clamped regardless.
    """

    rho_criticality: float = 0.25
    rho_safety: float = 0.25
    rho_inverse_confidence: float = 0.25
    rho_ambiguity: float = 0.25

    def __post_init__(self) -> None:
        if min(
            self.rho_criticality,
            self.rho_safety,
            self.rho_inverse_confidence,
            self.rho_ambiguity,
        ) < 0:
            raise ValueError("risk weights must be nonnegative")


@dataclass(frozen=True)
class PolicyThresholds:
    theta_min: float = 0.25
    theta_max: float = 0.70
    conf_low: float = 0.50
    conf_span: float = 0.70

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta_min < self.theta_max <= 1.0:
            raise ValueError("need 0 <= theta_min < theta_max <= 1")
        if not self.conf_low < self.conf_span:
            raise ValueError("need conf_low < conf_span")


class RenderDecision(str, Enum):
    PRESERVE_RAW_MESSAGE = "preserve_raw_message"
    CANONICAL_PLUS_SPAN = "canonical_plus_span"
    CORE_WITH_SPAN = "core_with_span"
    CORE = "core"
    MIN_ALLOWED = "min_allowed"


def confidence(sig: ConfidenceSignals, w: ConfidenceWeights = ConfidenceWeights()) -> float:
    return (
        w.w_span * sig.e_span
        + w.w_agree * sig.e_agree
        + w.w_roundtrip * sig.e_roundtrip
        + w.w_schema * sig.e_schema
        + w.w_anchor * sig.e_anchor
    )


def risk(
    a: Atom,
    conf: float,
    rw: RiskWeights = RiskWeights(),
    ambiguity: float = 0.0,
) -> float:
    if not 0.0 <= conf <= 1.0:
        raise ValueError(f"conf outside [0, 1]: {conf}")
    if not 0.0 <= ambiguity <= 1.0:
        raise ValueError(f"ambiguity outside [0, 1]: {ambiguity}")
    raw = (
        rw.rho_criticality * (a.criticality / 5.0)
        + rw.rho_safety * (1.0 if a.safety else 0.0)
        + rw.rho_inverse_confidence * (1.0 - conf)
        + rw.rho_ambiguity * ambiguity
    )
    return min(1.0, max(0.0, raw))


#: Checker slots for safety_flag, in report order.  Each checker takes the
#: atom and returns bool; absent checkers contribute False.
SAFETY_CHECKER_SLOTS = (
    "source_policy_match",
    "safety_classifier_match",
    "extractor_safety_label",
    "human_policy_tag",
)

#: Atom types that are safety-relevant by schema alone.
SAFETY_TYPES = frozenset({AtomType.SAFETY_BOUNDARY})
#: Subjects treated as privacy constraints (the schema has no separate
#: privacy type; constraint atoms with these subjects count).
PRIVACY_SUBJECT_MARKERS = ("privacy", "private_data", "pii")


@dataclass(frozen=True)
class SafetyFlagResult:
    flagged: bool
    fired: tuple[str, ...]
    missing_checkers: tuple[str, ...]


def safety_flag(
    a: Atom,
    checkers: dict[str, Callable[[Atom], bool]] | None = None,
) -> SafetyFlagResult:
    """OR of the five safety predicates; missing checkers count as False
    but are reported so the degradation is visible."""
    checkers = checkers or {}
    fired: list[str] = []
    missing: list[str] = []
    for slot in SAFETY_CHECKER_SLOTS:
        check = checkers.get(slot)
        if check is None:
            missing.append(slot)
        elif check(a):
            fired.append(slot)
    if a.type in SAFETY_TYPES or any(m in a.subject for m in PRIVACY_SUBJECT_MARKERS):
        fired.append("atom_type")
    if a.safety:
        fired.append("atom_flag")
    return SafetyFlagResult(bool(fired), tuple(fired), tuple(missing))


def render_policy(
    a: Atom,
    conf: float,
    risk_score: float,
    th: PolicyThresholds = PolicyThresholds(),
    *,
    safety: bool | None = None,
) -> RenderDecision:
    """The conservative render cascade, top clause wins.

    ``safety`` overrides the atom's own flag when the caller has already
    run the full safety_flag OR (which may fire on evidence the atom record
    does not carry).
    """
    flagged = a.safety if safety is None else safety
    return decide(flagged, conf, risk_score, a.criticality, th)


def decide(
    safety: bool,
    conf: float,
    risk_score: float,
    criticality: int,
    th: PolicyThresholds = PolicyThresholds(),
) -> RenderDecision:
    """Cascade on bare scores; render_policy delegates here, and grid tests
    can call it directly without fabricating atoms."""
    if safety:
        return RenderDecision.CANONICAL_PLUS_SPAN
    if conf < th.conf_low and criticality >= 3:
        return RenderDecision.PRESERVE_RAW_MESSAGE
    if conf < th.conf_span:
        return RenderDecision.CORE_WITH_SPAN
    if risk_score < th.theta_min and criticality <= 2:
        return RenderDecision.MIN_ALLOWED
    if risk_score > th.theta_max:
        return RenderDecision.CANONICAL_PLUS_SPAN
    return RenderDecision.CORE


# ---------------------------------------------------------------------------
# Policy configuration file
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyConfig:
    """All scoring weights and thresholds, loadable from a JSON file and
    echoed into reports for auditability."""

    confidence_weights: ConfidenceWeights = field(default_factory=ConfidenceWeights)
    risk_weights: RiskWeights = field(default_factory=RiskWeights)
    thresholds: PolicyThresholds = field(default_factory=PolicyThresholds)

    def echo(self) -> dict:
        cw, rw, th = self.confidence_weights, self.risk_weights, self.thresholds
        return {
            "confidence_weights": {
                "w_span": cw.w_span,
                "w_agree": cw.w_agree,
                "w_roundtrip": cw.w_roundtrip,
                "w_schema": cw.w_schema,
                "w_anchor": cw.w_anchor,
            },
            "risk_weights": {
                "rho_criticality": rw.rho_criticality,
                "rho_safety": rw.rho_safety,
                "rho_inverse_confidence": rw.rho_inverse_confidence,
                "rho_ambiguity": rw.rho_ambiguity,
            },
            "thresholds": {
                "theta_min": th.theta_min,
                "theta_max": th.theta_max,
                "conf_low": th.conf_low,
                "conf_span": th.conf_span,
            },
        }


def load_policy(path: str | Path | None) -> PolicyConfig:
    if path is None:
        return PolicyConfig()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = PolicyConfig()
    if "confidence_weights" in data:
        cfg = replace(cfg, confidence_weights=ConfidenceWeights(**{
            k: v for k, v in data["confidence_weights"].items()
        }))
    if "risk_weights" in data:
        cfg = replace(cfg, risk_weights=RiskWeights(**data["risk_weights"]))
    if "thresholds" in data:
        cfg = replace(cfg, thresholds=PolicyThresholds(**data["thresholds"]))
    return cfg
