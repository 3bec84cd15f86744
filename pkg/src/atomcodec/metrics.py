"""Commitment-level evaluation: recall metrics, error taxonomy, proxies.

Compression quality is judged by which commitments survive, not by how many
tokens disappear.  Given a gold annotation (the critical atom set, optionally
weighted, with rejected or superseded decisions marked) and the atoms
recovered from a compressed representation, this module computes:

* critical atom recall (CAR) and weighted atom recall (WAR);
* commitment density, preserved commitments per token;
* the recoverability predicate, up to explicitly allowed omissions;
* an error classification over eight kinds: omission, weakening, mutation,
  polarity flip, scope error, temporal/decision error, hallucinated
  commitment, and safety-boundary erasure;
* deployment-time proxies for settings without gold annotations.

All matching goes through normalized-atom equivalence and conflict relations,
never raw text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .atoms import (
    Atom,
    AtomId,
    AtomType,
    Modality,
    RecordError,
    Value,
    ValueKind,
    atom_from_record,
    atom_id,
    atom_to_record,
    conflicts,
    equivalent,
    validate,
)
from .lexicon import Lexicon
from .scoring import PolicyConfig, RenderDecision, risk

__all__ = [
    "MetricsError",
    "GoldAnnotation",
    "ErrorKind",
    "ErrorRecord",
    "EvalReport",
    "ProxyReport",
    "ROW_HEADER",
    "car",
    "war",
    "commitment_density",
    "recoverable",
    "classify_errors",
    "build_report",
    "deployment_proxies",
]

GOLD_STATUSES = ("rejected", "superseded")


class MetricsError(ValueError):
    """A metric was asked for an undefined quantity (empty gold, zero tokens)."""


@dataclass(frozen=True)
class GoldAnnotation:
    """The critical atom set with optional weights and decision status.

    Atoms marked ``rejected`` or ``superseded`` are negative markers: they are
    excluded from recall denominators, and recovering one is a
    temporal/decision error.
    """

    atoms: tuple[Atom, ...]
    weights: Mapping[AtomId, float] = field(default_factory=dict)
    status: Mapping[AtomId, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = {atom_id(a) for a in self.atoms}
        for key, weight in self.weights.items():
            if key not in ids:
                raise MetricsError(f"weight for unknown atom id {key}")
            if not weight > 0:
                raise MetricsError(f"weight must be positive, got {weight} for {key}")
        for key, status in self.status.items():
            if key not in ids:
                raise MetricsError(f"status for unknown atom id {key}")
            if status not in GOLD_STATUSES:
                raise MetricsError(f"unknown gold status {status!r} for {key}")

    @property
    def active_atoms(self) -> tuple[Atom, ...]:
        return tuple(a for a in self.atoms if atom_id(a) not in self.status)

    @property
    def marked_atoms(self) -> tuple[Atom, ...]:
        return tuple(a for a in self.atoms if atom_id(a) in self.status)

    def weight_of(self, key: AtomId) -> float:
        return float(self.weights.get(key, 1.0))

    @classmethod
    def from_json(cls, text: str) -> "GoldAnnotation":
        """Reads a JSON array of atom records; records may inline a positive
        ``weight`` and a ``status`` of rejected/superseded."""
        payload = json.loads(text)
        if not isinstance(payload, list):
            raise RecordError("gold annotation must be a JSON array of records")
        atoms, weights, status = [], {}, {}
        for record in payload:
            atom = atom_from_record(record)
            atoms.append(atom)
            key = atom_id(atom)
            if "weight" in record:
                weights[key] = record["weight"]
            if "status" in record:
                status[key] = record["status"]
        return cls(tuple(atoms), weights, status)

    @classmethod
    def load(cls, path: str | Path) -> "GoldAnnotation":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def to_json(self) -> str:
        rows = []
        for atom in self.atoms:
            record = atom_to_record(atom)
            key = atom_id(atom)
            if key in self.weights:
                record["weight"] = self.weights[key]
            if key in self.status:
                record["status"] = self.status[key]
            rows.append(record)
        return json.dumps(rows, indent=2) + "\n"


def _recovered(gold_atom: Atom, recovered: Sequence[Atom]) -> bool:
    return any(equivalent(gold_atom, b) for b in recovered)


def car(gold: GoldAnnotation, recovered: Sequence[Atom]) -> float:
    """Fraction of critical atoms with an equivalent recovered atom."""
    active = gold.active_atoms
    if not active:
        raise MetricsError("critical atom recall is undefined for empty gold")
    return sum(1 for a in active if _recovered(a, recovered)) / len(active)


def war(gold: GoldAnnotation, recovered: Sequence[Atom]) -> float:
    """Weight-adjusted recall; equals car under uniform weights."""
    active = gold.active_atoms
    if not active:
        raise MetricsError("weighted atom recall is undefined for empty gold")
    total = sum(gold.weight_of(atom_id(a)) for a in active)
    kept = sum(
        gold.weight_of(atom_id(a)) for a in active if _recovered(a, recovered)
    )
    return kept / total


def commitment_density(
    gold: GoldAnnotation, recovered: Sequence[Atom], tokens: int
) -> float:
    """Preserved commitments per token of the compressed representation."""
    if tokens <= 0:
        raise MetricsError(f"commitment density needs a positive token count, got {tokens}")
    kept = sum(1 for a in gold.active_atoms if _recovered(a, recovered))
    return kept / tokens


def recoverable(
    decoded: Sequence[Atom],
    gold: GoldAnnotation,
    allowed_omissions: Iterable[AtomId] = (),
) -> bool:
    """True when every critical atom outside the allowed omissions decodes."""
    allowed = set(allowed_omissions)
    known = {atom_id(a) for a in gold.atoms}
    stray = allowed - known
    if stray:
        raise MetricsError(f"allowed omissions outside gold: {sorted(stray)}")
    return all(
        _recovered(a, decoded)
        for a in gold.active_atoms
        if atom_id(a) not in allowed
    )


# ---------------------------------------------------------------------------
# Error taxonomy
# ---------------------------------------------------------------------------


class ErrorKind(str, Enum):
    OMISSION = "omission"
    WEAKENING = "weakening"
    MUTATION = "mutation"
    POLARITY_FLIP = "polarity_flip"
    SCOPE_ERROR = "scope_error"
    TEMPORAL_DECISION_ERROR = "temporal_decision_error"
    HALLUCINATED_COMMITMENT = "hallucinated_commitment"
    SAFETY_BOUNDARY_ERASURE = "safety_boundary_erasure"


_GOLD_SIDE_KINDS = frozenset(
    {
        ErrorKind.OMISSION,
        ErrorKind.WEAKENING,
        ErrorKind.MUTATION,
        ErrorKind.POLARITY_FLIP,
        ErrorKind.SCOPE_ERROR,
        ErrorKind.SAFETY_BOUNDARY_ERASURE,
    }
)

_PLAIN_LABELS = {
    ErrorKind.OMISSION: "omission",
    ErrorKind.WEAKENING: "weakening",
    ErrorKind.MUTATION: "mutation",
    ErrorKind.POLARITY_FLIP: "polarity/value conflict",
    ErrorKind.SCOPE_ERROR: "scope error",
    ErrorKind.TEMPORAL_DECISION_ERROR: "temporal/decision error",
    ErrorKind.HALLUCINATED_COMMITMENT: "hallucinated commitment",
    ErrorKind.SAFETY_BOUNDARY_ERASURE: "safety-boundary erasure",
}


@dataclass(frozen=True)
class ErrorRecord:
    kind: ErrorKind
    gold_id: AtomId | None = None
    found: Atom | None = None
    note: str = ""
    conflict: bool = False

    def __post_init__(self) -> None:
        if self.kind in _GOLD_SIDE_KINDS and self.gold_id is None:
            raise ValueError(f"{self.kind.value} records must carry gold_id")
        if self.kind == ErrorKind.HALLUCINATED_COMMITMENT:
            if self.found is None or self.gold_id is not None:
                raise ValueError("hallucination records carry found only")

    @property
    def display(self) -> str:
        """Human-facing labels; value mutations of output contracts read as
        contract conflicts rather than generic mutations."""
        if (
            self.kind == ErrorKind.MUTATION
            and self.gold_id is not None
            and self.gold_id[0] == AtomType.OUTPUT_CONTRACT.value
        ):
            return "output-contract conflict"
        return _PLAIN_LABELS[self.kind]


_MODALITY_RANK = {
    Modality.MUST: 3,
    Modality.FORBID: 3,
    Modality.SHOULD: 2,
    Modality.PREFER: 1,
    Modality.MAY: 1,
    Modality.REJECTED: 0,
}


def _value_text(v: Value) -> str:
    if v.kind in (ValueKind.ENUM, ValueKind.STRING, ValueKind.DATE, ValueKind.DECIMAL):
        return str(v.data)
    if v.kind == ValueKind.INT:
        return str(v.data)
    if v.kind == ValueKind.BOOL:
        return "true" if v.data else "false"
    return json.dumps(v.data, default=str)


def _signature(a: Atom) -> tuple[str, str, str]:
    return (a.type.value, a.subject, a.predicate)


def classify_errors(
    gold: GoldAnnotation,
    recovered: Sequence[Atom],
    lexicon: Lexicon | None = None,
) -> tuple[ErrorRecord, ...]:
    """At most one record per gold atom, plus recovered-side records for
    resurfaced decisions and hallucinations."""
    records: list[ErrorRecord] = []
    gold_ids = {atom_id(a) for a in gold.atoms}
    gold_signatures = {_signature(a) for a in gold.atoms}

    for g in gold.active_atoms:
        gid = atom_id(g)
        same_id = [r for r in recovered if atom_id(r) == gid]
        if same_id:
            records.extend(_classify_match(g, same_id, lexicon))
            continue
        displaced = [
            r for r in recovered if _signature(r) == _signature(g) and r.scope != g.scope
        ]
        if displaced:
            records.append(
                ErrorRecord(
                    ErrorKind.SCOPE_ERROR,
                    gold_id=gid,
                    found=displaced[0],
                    note=f"expected scope {g.scope!r}, found {displaced[0].scope!r}",
                )
            )
        elif g.safety:
            records.append(
                ErrorRecord(
                    ErrorKind.SAFETY_BOUNDARY_ERASURE,
                    gold_id=gid,
                    note="safety boundary dropped",
                )
            )
        else:
            records.append(ErrorRecord(ErrorKind.OMISSION, gold_id=gid))

    for g in gold.marked_atoms:
        gid = atom_id(g)
        resurfaced = [r for r in recovered if equivalent(g, r)]
        if resurfaced:
            records.append(
                ErrorRecord(
                    ErrorKind.TEMPORAL_DECISION_ERROR,
                    gold_id=gid,
                    found=resurfaced[0],
                    note=f"{gold.status[gid]} decision resurfaced",
                )
            )

    for r in recovered:
        if atom_id(r) in gold_ids or _signature(r) in gold_signatures:
            continue
        records.append(
            ErrorRecord(
                ErrorKind.HALLUCINATED_COMMITMENT,
                found=r,
                note="no matching commitment in gold",
            )
        )
    return tuple(records)


def _classify_match(
    g: Atom, same_id: list[Atom], lexicon: Lexicon | None
) -> list[ErrorRecord]:
    gid = atom_id(g)
    matches = [r for r in same_id if equivalent(g, r)]
    if matches:
        weakened = [
            r for r in matches
            if _MODALITY_RANK[r.modality] < _MODALITY_RANK[g.modality]
        ]
        if weakened and len(weakened) == len(matches):
            return [
                ErrorRecord(
                    ErrorKind.WEAKENING,
                    gold_id=gid,
                    found=weakened[0],
                    note=f"modality {g.modality.value} -> {weakened[0].modality.value}",
                )
            ]
        return []
    r = same_id[0]
    conflicting = conflicts(g, r)
    if g.value.kind == ValueKind.BOOL and r.value.kind == ValueKind.BOOL:
        return [
            ErrorRecord(
                ErrorKind.POLARITY_FLIP,
                gold_id=gid,
                found=r,
                note=f"{_value_text(g.value)} -> {_value_text(r.value)}",
                conflict=conflicting,
            )
        ]
    if lexicon is not None and lexicon.is_generalization(
        _value_text(g.value), _value_text(r.value)
    ):
        return [
            ErrorRecord(
                ErrorKind.WEAKENING,
                gold_id=gid,
                found=r,
                note=f"{_value_text(g.value)} generalized to {_value_text(r.value)}",
                conflict=conflicting,
            )
        ]
    return [
        ErrorRecord(
            ErrorKind.MUTATION,
            gold_id=gid,
            found=r,
            note=f"{_value_text(g.value)} -> {_value_text(r.value)}",
            conflict=conflicting,
        )
    ]


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------

ROW_HEADER = (
    "method,lexical_tokens,cl100k_tokens,o200k_tokens,"
    "CAR,WAR,atom_precision,atom_recall,conflict_rate"
)

_RATE_FIELDS = (
    "car",
    "war",
    "atom_precision",
    "atom_recall",
    "conflict_rate",
    "polarity_error_rate",
    "count_error_rate",
)


@dataclass(frozen=True)
class EvalReport:
    method: str
    lexical_tokens: int
    external_token_counts: Mapping[str, int] = field(default_factory=dict)
    car: float = 0.0
    war: float = 0.0
    cd: float = 0.0
    atom_precision: float = 0.0
    atom_recall: float = 0.0
    conflict_rate: float = 0.0
    polarity_error_rate: float = 0.0
    count_error_rate: float = 0.0
    errors: tuple[ErrorRecord, ...] = ()

    def __post_init__(self) -> None:
        for name in _RATE_FIELDS:
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {rate}")
        if self.cd < 0.0:
            raise ValueError(f"cd must be nonnegative: {self.cd}")

    def to_row(self) -> str:
        counts = self.external_token_counts
        return ",".join(
            [
                self.method,
                str(self.lexical_tokens),
                str(counts.get("cl100k_base", "-")),
                str(counts.get("o200k_base", "-")),
                f"{self.car:.2f}",
                f"{self.war:.2f}",
                f"{self.atom_precision:.2f}",
                f"{self.atom_recall:.2f}",
                f"{self.conflict_rate:.2f}",
            ]
        )


def build_report(
    method: str,
    gold: GoldAnnotation,
    recovered: Sequence[Atom],
    lexical_tokens: int,
    *,
    external_token_counts: Mapping[str, int] | None = None,
    lexicon: Lexicon | None = None,
) -> EvalReport:
    errors = classify_errors(gold, recovered, lexicon)
    active = gold.active_atoms
    matched_recovered = sum(
        1 for r in recovered if any(equivalent(g, r) for g in active)
    )
    conflicting = sum(
        1 for r in recovered if any(conflicts(g, r) for g in gold.atoms)
    )
    polarity = sum(1 for e in errors if e.kind == ErrorKind.POLARITY_FLIP)
    count_mutations = sum(
        1
        for e in errors
        if e.kind == ErrorKind.MUTATION
        and e.found is not None
        and e.found.value.kind in (ValueKind.INT, ValueKind.DECIMAL)
    )
    return EvalReport(
        method=method,
        lexical_tokens=lexical_tokens,
        external_token_counts=dict(external_token_counts or {}),
        car=car(gold, recovered),
        war=war(gold, recovered),
        cd=commitment_density(gold, recovered, lexical_tokens),
        atom_precision=(matched_recovered / len(recovered)) if recovered else 1.0,
        atom_recall=car(gold, recovered),
        conflict_rate=(conflicting / len(recovered)) if recovered else 0.0,
        polarity_error_rate=polarity / len(active) if active else 0.0,
        count_error_rate=count_mutations / len(active) if active else 0.0,
        errors=errors,
    )


# ---------------------------------------------------------------------------
# Deployment-time proxies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProxyReport:
    self_consistency: float
    cross_agreement: float | None
    roundtrip_consistency: float | None
    schema_failures: int
    low_confidence_count: int
    high_risk_coverage: float

    @property
    def suggests_fallback(self) -> bool:
        """Any weak proxy argues for a larger packet, raw spans, or no
        compression at all."""
        weak = [
            self.self_consistency < 1.0,
            self.cross_agreement is not None and self.cross_agreement < 1.0,
            self.roundtrip_consistency is not None and self.roundtrip_consistency < 1.0,
            self.schema_failures > 0,
            self.low_confidence_count > 0,
            self.high_risk_coverage < 1.0,
        ]
        return any(weak)


def _agreement(a: Sequence[Atom], b: Sequence[Atom]) -> float:
    if not a and not b:
        return 1.0
    matched = sum(1 for x in a if any(equivalent(x, y) for y in b))
    union = len(a) + len(b) - matched
    return matched / union if union else 1.0


def _mean_pairwise(sets: Sequence[Sequence[Atom]]) -> float:
    if len(sets) < 2:
        return 1.0
    scores = [
        _agreement(sets[i], sets[j])
        for i in range(len(sets))
        for j in range(i + 1, len(sets))
    ]
    return sum(scores) / len(scores)


def deployment_proxies(
    passes: Sequence[Sequence[Atom]],
    *,
    cross_sets: Sequence[Sequence[Atom]] | None = None,
    packet_atoms: Sequence[Atom] | None = None,
    decoded_atoms: Sequence[Atom] | None = None,
    decisions: Mapping[AtomId, RenderDecision] | None = None,
    ambiguity: Mapping[AtomId, float] | None = None,
    policy: PolicyConfig | None = None,
) -> ProxyReport:
    """Ground-truth-free quality signals from the pipeline's own artifacts.

    ``passes`` are repeated runs of one extractor; ``cross_sets`` are atom
    sets from different extractors.  Round-trip consistency compares the
    packet's atoms against the atoms decoded back from it.
    """
    if not passes:
        raise MetricsError("deployment proxies need at least one extraction pass")
    policy = policy or PolicyConfig()
    ambiguity = ambiguity or {}
    base = list(packet_atoms) if packet_atoms is not None else list(passes[0])

    roundtrip = None
    if packet_atoms is not None and decoded_atoms is not None:
        if packet_atoms:
            matched = sum(
                1 for a in packet_atoms if any(equivalent(a, b) for b in decoded_atoms)
            )
            roundtrip = matched / len(packet_atoms)
        else:
            roundtrip = 1.0

    threshold = policy.thresholds.theta_max
    high_risk = [
        a
        for a in base
        if risk(a, a.confidence, policy.risk_weights, ambiguity.get(atom_id(a), 0.0))
        > threshold
    ]
    if high_risk:
        held = decisions or {}
        covered = sum(
            1
            for a in high_risk
            if held.get(atom_id(a)) == RenderDecision.CANONICAL_PLUS_SPAN
        )
        coverage = covered / len(high_risk)
    else:
        coverage = 1.0

    return ProxyReport(
        self_consistency=_mean_pairwise(passes),
        cross_agreement=_mean_pairwise(cross_sets) if cross_sets else None,
        roundtrip_consistency=roundtrip,
        schema_failures=sum(1 for a in passes[0] if not validate(a).ok),
        low_confidence_count=sum(1 for a in base if a.confidence < policy.thresholds.conf_low),
        high_risk_coverage=coverage,
    )
