"""Surface-to-canonical normalization pipeline.

Seven ordered steps turn a source span plus a candidate atom into a
canonical atom: surface cleanup, polarity detection, subject and predicate
canonicalization via the lexicon, value parsing, scope assignment, and
evidence/confidence attachment.  Every applied rewrite is recorded in a
trace whose final snapshot replays to the exact output atom without
re-consulting the lexicon.
"""

from __future__ import annotations

import datetime as _dt
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from .atoms import (
    Atom,
    AtomType,
    Evidence,
    Modality,
    Value,
    ValueKind,
    evidence_from_json,
    evidence_to_json,
    validate,
    value_from_json,
    value_to_json,
)
from .lexicon import Lexicon
from .scoring import ConfidenceSignals, ConfidenceWeights, confidence


class Polarity(str, Enum):
    AFFIRMED = "affirmed"
    NEGATED = "negated"


class NormalizationFailure(ValueError):
    """Subject cannot be canonicalized and no fallback is permitted."""

    def __init__(self, message: str, trace: "NormalizationTrace"):
        super().__init__(message)
        self.trace = trace


class ValueParseError(ValueError):
    """Raw value text does not parse under the hint; carries both."""

    def __init__(self, raw: str, hint: str | None):
        super().__init__(f"cannot parse value {raw!r}" + (f" as {hint}" if hint else ""))
        self.raw = raw
        self.hint = hint


@dataclass(frozen=True)
class TraceStep:
    step: int  # 1..7
    rule: str
    before: Any
    after: Any


@dataclass(frozen=True)
class NormalizationTrace:
    steps: tuple[TraceStep, ...] = ()

    def record(self, step: int, rule: str, before: Any, after: Any) -> "NormalizationTrace":
        if self.steps and step < self.steps[-1].step:
            raise ValueError(f"trace steps must ascend, got {step} after {self.steps[-1].step}")
        return NormalizationTrace(self.steps + (TraceStep(step, rule, before, after),))

    @property
    def rewrites(self) -> tuple[TraceStep, ...]:
        """Steps that actually changed something."""
        return tuple(s for s in self.steps if s.before != s.after)


#: Confidence cap for subjects the lexicon does not know; forces the
#: conservative render path downstream.
UNKNOWN_SUBJECT_CONF_CAP = 0.49

_WS_RE = re.compile(r"\s+")
_TRAILING_PUNCT_RE = re.compile(r"[.!?]+(?=\s|$)")
_ACRONYM_RE = re.compile(r"[A-Z][A-Z0-9]+\Z")
_WORD_RE = re.compile(r"[A-Za-z0-9_'.+\-=/]+|[^\sA-Za-z0-9_'.+\-=/]")
_TOKEN_SANITIZE_RE = re.compile(r"[^a-z0-9_]+")
_INT_RE = re.compile(r"-?\d+\Z")
_DECIMAL_RE = re.compile(r"-?\d*\.\d+\Z")
_ISO_DATE_RE = re.compile(r"\d{4}-\d{2}-\d{2}\Z")
_US_DATE_RE = re.compile(r"(\d{2})/(\d{2})/(\d{4})\Z")
_DMY_DATE_RE = re.compile(r"(\d{1,2}) ([A-Za-z]{3,9}) (\d{4})\Z")
_NUMBER_ANCHOR_RE = re.compile(r"\d")

#: Predicate family token used in lexicons for permission verbs; resolved
#: to allowed/required depending on modality and polarity.
PERMISSION_FAMILY = "permission"
COUNT_FAMILY = "count"

#: Already-canonical predicate tokens pass through unchanged, which makes
#: re-normalizing a canonical atom a no-op.
CANONICAL_PREDICATES = frozenset(
    {"allowed", "required", "equals", "selected", "rejected", "desired"}
)


def normalize_surface(text: str, lex: Lexicon | None = None) -> str:
    """Step 1: lowercase (outside quoted literals, acronyms, and lexicon
    enum tokens), strip sentence-final punctuation, collapse whitespace,
    canonicalize boolean spellings."""
    proper = lex.proper_tokens() if lex is not None else frozenset()
    out: list[str] = []
    for i, segment in enumerate(re.split(r'("(?:[^"\\]|\\.)*")', text)):
        if i % 2 == 1:  # quoted literal, untouched
            out.append(segment)
            continue
        segment = _TRAILING_PUNCT_RE.sub("", segment)
        pieces: list[str] = []
        for token in _WORD_RE.findall(segment.replace("’", "'")):
            if token in ("True", "TRUE"):
                pieces.append("true")
            elif token in ("False", "FALSE"):
                pieces.append("false")
            elif token in proper or _ACRONYM_RE.match(token):
                pieces.append(token)
            else:
                pieces.append(token.lower())
        rebuilt = _rejoin(segment, pieces)
        out.append(_WS_RE.sub(" ", rebuilt).strip())
    return " ".join(s for s in out if s).strip()


def _rejoin(original: str, pieces: list[str]) -> str:
    """Reassemble lowered tokens preserving the original separators."""
    result: list[str] = []
    cursor = 0
    for token, lowered in zip(_WORD_RE.findall(original), pieces):
        idx = original.index(token, cursor)
        result.append(original[cursor:idx])
        result.append(lowered)
        cursor = idx + len(token)
    result.append(original[cursor:])
    return "".join(result)


def detect_polarity(
    span: str,
    head: str | None = None,
    extra_cues: tuple[str, ...] = (),
    cues: tuple[str, ...] | None = None,
) -> Polarity:
    """Step 2: negated iff a negation cue scopes over the head term.

    Scope resolution is clause-local (comma/semicolon bounded): when a head
    term is given, only cues in the head's clause count; cross-clause
    negation is never inferred.  Without a head, any cue in the span
    negates.
    """
    from .lexicon import DEFAULT_NEGATION_CUES

    cue_list = tuple(cues if cues is not None else DEFAULT_NEGATION_CUES) + tuple(extra_cues)
    cue_re = re.compile(
        r"(?<![a-z0-9_])(" + "|".join(re.escape(c) for c in cue_list) + r")(?![a-z0-9_])",
        re.IGNORECASE,
    )
    clauses = re.split(r"[,;]", span)
    if head:
        clauses = [c for c in clauses if head.lower() in c.lower()] or clauses
    return Polarity.NEGATED if any(cue_re.search(c) for c in clauses) else Polarity.AFFIRMED


def canonicalize_subject(term: str, lex: Lexicon) -> str | None:
    """Step 3: alias lookup with negative-example blocking; None on no-match."""
    needle = _WS_RE.sub(" ", term.strip().lower())
    canonical = lex.subject_alias_index().get(needle)
    if canonical is None:
        return None
    for entry in lex.subject_entries:
        if entry.canonical == canonical and needle in (n.lower() for n in entry.negative_examples):
            return None
    return canonical


def canonicalize_predicate(
    term: str,
    modality: Modality,
    lex: Lexicon,
    polarity: Polarity = Polarity.AFFIRMED,
) -> str | None:
    """Step 4: permission verbs resolve to allowed (forbidden/negated) or
    required (affirmed obligation); count phrases resolve to equals;
    already-canonical tokens pass through."""
    needle = _WS_RE.sub(" ", term.strip().lower())
    if needle in CANONICAL_PREDICATES:
        return needle
    canonical = lex.predicate_alias_index().get(needle)
    if canonical is None:
        if _looks_like_count(needle):
            return "equals"
        return None
    if canonical == PERMISSION_FAMILY:
        if modality in (Modality.FORBID, Modality.REJECTED) or polarity == Polarity.NEGATED:
            return "allowed"
        return "required"
    if canonical == COUNT_FAMILY:
        return "equals"
    return canonical


def _looks_like_count(term: str) -> bool:
    return bool(re.match(r"\d+ [a-z_ ]+\Z", term))


_MONTHS = {
    name.lower(): i
    for i, name in enumerate(
        ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"],
        start=1,
    )
}
_MONTHS.update(
    {
        name.lower(): i
        for i, name in enumerate(
            [
                "January", "February", "March", "April", "May", "June", "July",
                "August", "September", "October", "November", "December",
            ],
            start=1,
        )
    }
)


def parse_date(raw: str) -> str | None:
    """The three accepted date formats, emitted ISO; None if no format fits."""
    raw = raw.strip()
    if _ISO_DATE_RE.match(raw):
        _dt.date.fromisoformat(raw)
        return raw
    m = _US_DATE_RE.match(raw)
    if m:
        month, day, year = int(m.group(1)), int(m.group(2)), int(m.group(3))
        return _dt.date(year, month, day).isoformat()
    m = _DMY_DATE_RE.match(raw)
    if m:
        day, mon, year = int(m.group(1)), m.group(2).lower(), int(m.group(3))
        if mon not in _MONTHS:
            return None
        return _dt.date(year, _MONTHS[mon], day).isoformat()
    return None


def normalize_value(raw: str | Value, field_hint: str | None, lex: Lexicon) -> Value:
    """Step 5: parse booleans, integers, decimals, dates, and bounded enums.

    ``field_hint`` selects an enum vocabulary (and may force date parsing
    via hints ending in _date/_deadline).  Raises ValueParseError when the
    text fits no shape; the caller may keep a free string with lowered
    confidence instead.
    """
    if isinstance(raw, Value):
        return raw
    text = raw.strip()
    if not text:
        raise ValueParseError(raw, field_hint)
    lowered = text.lower()
    if lowered == "true":
        return Value.of_bool(True)
    if lowered == "false":
        return Value.of_bool(False)
    if _INT_RE.match(text):
        return Value.of_int(int(text))
    if _DECIMAL_RE.match(text):
        return Value.of_decimal(text)
    date = parse_date(text)
    if date is not None:
        return Value.of_date(date)
    if field_hint and field_hint in lex.value_enums:
        allowed = lex.value_enums[field_hint]
        for token in allowed:
            if token == text or token.lower() == lowered:
                return Value.of_enum(token)
        raise ValueParseError(raw, field_hint)
    if re.match(r"[A-Za-z0-9_.+\-/]+\Z", text):
        return Value.of_enum(text)
    raise ValueParseError(raw, field_hint)


def assign_scope(
    candidate_scope: str | None,
    atom_type: AtomType,
    context: str | None,
    lex: Lexicon,
) -> str:
    """Step 6: explicit cue wins, then type-based scope, then the domain
    default, then the generic task scope."""
    if candidate_scope:
        return candidate_scope
    by_type = lex.type_scopes.get(atom_type.value)
    if by_type:
        return by_type
    if context and context in lex.scope_defaults:
        return lex.scope_defaults[context]
    if lex.domain in lex.scope_defaults:
        return lex.scope_defaults[lex.domain]
    return "task"


#: Criticality defaults by type; constraints with a negation or an exact
#: count escalate to 5.
_CRITICALITY_DEFAULTS = {
    AtomType.SAFETY_BOUNDARY: 5,
    AtomType.OUTPUT_CONTRACT: 5,
    AtomType.DECISION: 4,
    AtomType.CONSTRAINT: 4,
    AtomType.PREFERENCE: 3,
    AtomType.STATE: 3,
    AtomType.GOAL: 3,
    AtomType.PROCEDURE: 3,
    AtomType.ENTITY: 2,
    AtomType.OPEN_QUESTION: 2,
    AtomType.VERBATIM_SNIPPET: 1,
}


def default_criticality(atom_type: AtomType, value: Value, polarity: Polarity) -> int:
    base = _CRITICALITY_DEFAULTS[atom_type]
    if atom_type == AtomType.CONSTRAINT:
        negated = polarity == Polarity.NEGATED or value == Value.of_bool(False)
        exact_count = value.kind in (ValueKind.INT, ValueKind.DECIMAL)
        if negated or exact_count:
            return 5
    return base


@dataclass(frozen=True)
class CandidateAtom:
    """Partial atom as produced by an extractor; normalization completes it."""

    surface_subject: str
    raw_value: str | Value | None = None
    type: AtomType | None = None
    predicate_term: str | None = None
    modality: Modality | None = None
    scope: str | None = None
    field_hint: str | None = None
    context: str | None = None
    evidence: Evidence | None = None
    criticality: int | None = None
    safety: bool = False
    signals: ConfidenceSignals | None = None


def _snapshot(state: dict) -> dict:
    snap = dict(state)
    if isinstance(snap.get("value"), Value):
        snap["value"] = value_to_json(snap["value"])
    return snap


def normalize_atom(
    span_text: str,
    candidate: CandidateAtom,
    lex: Lexicon,
    *,
    allow_unknown_subject: bool = True,
    source_text: str | None = None,
    weights: ConfidenceWeights = ConfidenceWeights(),
) -> tuple[Atom, NormalizationTrace]:
    """Run steps 1-7 and return the canonical atom plus its trace.

    The returned atom always passes validate; unknown subjects survive as
    sanitized free tokens with confidence capped (or raise
    NormalizationFailure when ``allow_unknown_subject`` is false).
    """
    trace = NormalizationTrace()
    state: dict[str, Any] = {"span": span_text}

    # 1. surface
    surface = normalize_surface(span_text, lex)
    trace = trace.record(1, "surface", span_text, surface)
    state["span"] = surface

    # 2. polarity
    polarity = detect_polarity(surface, head=candidate.surface_subject, cues=lex.negation_cues)
    trace = trace.record(2, "polarity", None, polarity.value)

    # 3. subject
    surface_subject = normalize_surface(candidate.surface_subject, lex)
    subject = canonicalize_subject(surface_subject, lex)
    unknown_subject = subject is None
    if unknown_subject:
        fallback = _TOKEN_SANITIZE_RE.sub("_", surface_subject.lower()).strip("_") or "unknown"
        if not allow_unknown_subject:
            raise NormalizationFailure(
                f"subject {candidate.surface_subject!r} not in lexicon {lex.version}",
                trace.record(3, "subject:no-match", surface_subject, None),
            )
        subject = fallback
    trace = trace.record(3, "subject", surface_subject, subject)

    # 4.+5. predicate and value resolve together: permission-family
    # predicates depend on the final boolean value ("assets=0" means
    # allowed=false, "stdlib_only:true" means required=true), and negated
    # permissions force the value to false.
    modality = candidate.modality or Modality.MUST
    parse_failed = False
    if candidate.raw_value is None:
        value = Value.of_bool(polarity == Polarity.AFFIRMED)
        value_rule = "value:polarity-implied"
    else:
        try:
            value = normalize_value(candidate.raw_value, candidate.field_hint or subject, lex)
            value_rule = "value"
        except ValueParseError:
            value = Value.of_string(str(candidate.raw_value))
            parse_failed = True
            value_rule = "value:parse-failed-keep-string"

    explicit_term = candidate.predicate_term
    if explicit_term is not None:
        predicate = canonicalize_predicate(explicit_term, modality, lex, polarity)
        term_shown = explicit_term
        family = lex.predicate_alias_index().get(_WS_RE.sub(" ", explicit_term.strip().lower()))
        permissionish = family == PERMISSION_FAMILY
    else:
        predicate = None
        term_shown = "<none>"
        permissionish = value.kind == ValueKind.BOOL or value in (
            Value.of_int(0),
            Value.of_int(1),
        )
    if permissionish:
        if value in (Value.of_int(0), Value.of_int(1)):
            value = Value.of_bool(value == Value.of_int(1))
            value_rule = "value:permission-int-coerced"
        if polarity == Polarity.NEGATED or modality in (Modality.FORBID, Modality.REJECTED):
            value = Value.of_bool(False)
        predicate = "allowed" if value == Value.of_bool(False) else "required"
        rule = "predicate:permission-family"
    elif predicate is None:
        predicate = "equals"
        rule = "predicate:default-equals"
    else:
        rule = "predicate"
    if predicate == "rejected" and candidate.modality is None:
        modality = Modality.REJECTED
    trace = trace.record(4, rule, term_shown, predicate)
    trace = trace.record(
        5,
        value_rule,
        None if candidate.raw_value is None else str(candidate.raw_value),
        value_to_json(value),
    )

    atom_type = candidate.type or AtomType.CONSTRAINT

    # 6. scope
    scope = assign_scope(candidate.scope, atom_type, candidate.context, lex)
    trace = trace.record(6, "scope", candidate.scope, scope)

    # 7. evidence + confidence
    criticality = candidate.criticality or default_criticality(atom_type, value, polarity)
    signals = candidate.signals or gather_signals(
        candidate.evidence, surface, value, source_text=source_text
    )
    conf = confidence(signals, weights)
    if unknown_subject:
        conf = min(conf, UNKNOWN_SUBJECT_CONF_CAP)
    if parse_failed:
        conf = min(conf, UNKNOWN_SUBJECT_CONF_CAP)
    conf = round(conf, 9)
    atom = Atom(
        type=atom_type,
        subject=subject,
        predicate=predicate,
        value=value,
        modality=modality,
        scope=scope,
        evidence=candidate.evidence,
        confidence=conf,
        criticality=criticality,
        safety=candidate.safety or atom_type == AtomType.SAFETY_BOUNDARY,
    )
    problems = validate(atom)
    if not problems.ok:
        detail = "; ".join(f"{v.field}: {v.message}" for v in problems.violations)
        raise NormalizationFailure(f"normalized atom invalid: {detail}", trace)
    trace = trace.record(
        7,
        "evidence+confidence",
        None,
        _snapshot(
            {
                "type": atom.type.value,
                "subject": atom.subject,
                "predicate": atom.predicate,
                "value": atom.value,
                "modality": atom.modality.value,
                "scope": atom.scope,
                "evidence": evidence_to_json(atom.evidence),
                "confidence": atom.confidence,
                "criticality": atom.criticality,
                "safety": atom.safety,
            }
        ),
    )
    return atom, trace


def gather_signals(
    evidence: Evidence | None,
    surface: str,
    value: Value,
    *,
    source_text: str | None = None,
) -> ConfidenceSignals:
    """Default signal computation at normalization time.

    e_agree and e_roundtrip start at 1.0 (a single deterministic extractor
    agrees with itself; round-trip is unknown until verification and is
    re-scored there); e_schema is settled by the validate call in
    normalize_atom; reports must mark e_agree as degraded when only one
    extractor ran.
    """
    e_span = 0.0
    if evidence is not None:
        if evidence.span is not None:
            e_span = 1.0
            if source_text is not None and not evidence.matches_source(source_text):
                e_span = 0.0
        else:
            e_span = 0.5
    has_number = bool(_NUMBER_ANCHOR_RE.search(surface)) or value.is_numeric()
    has_negation = detect_polarity(surface) == Polarity.NEGATED
    e_anchor = 1.0 if (has_number or has_negation) else 0.0
    return ConfidenceSignals(
        e_span=e_span,
        e_agree=1.0,
        e_roundtrip=1.0,
        e_schema=1.0,
        e_anchor=e_anchor,
    )


def replay_trace(trace: NormalizationTrace) -> Atom:
    """Rebuild the output atom from the trace's final snapshot alone.

    The trace carries full state snapshots, so replay needs no lexicon; it
    also checks the steps are complete and ordered.
    """
    if not trace.steps or trace.steps[-1].step != 7:
        raise ValueError("trace incomplete: missing step 7 snapshot")
    last = trace.steps[-1].after
    return Atom(
        type=AtomType(last["type"]),
        subject=last["subject"],
        predicate=last["predicate"],
        value=value_from_json(last["value"]),
        modality=Modality(last["modality"]),
        scope=last["scope"],
        evidence=evidence_from_json(last["evidence"]),
        confidence=last["confidence"],
        criticality=last["criticality"],
        safety=last["safety"],
    )
