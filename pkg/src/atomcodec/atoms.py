"""Canonical commitment atoms: identity, equivalence, conflict, validation.

An atom is one typed commitment extracted from a conversation: a constraint,
decision, preference, output contract, safety boundary, and so on.  Atoms are
immutable values.  Identity is the normalized (type, subject, predicate,
scope) tuple; the value deliberately stays out of the identity key so that a
changed value is *the same commitment with a different value* (a conflict),
not a new commitment.

The canonical wire form is one JSON object per atom with exactly the fields
``type, subject, predicate, value, modality, scope, evidence, confidence,
criticality, safety``; files are arrays of such objects, UTF-8,
newline-terminated.
"""

from __future__ import annotations

import datetime as _dt
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, NamedTuple

TOKEN_RE = re.compile(r"[a-z0-9_]+\Z")
MAP_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
# bare enum tokens may be mixed case and dotted (code.web.canvas) but never
# contain whitespace, quotes, or CCL structure characters
ENUM_TOKEN_RE = re.compile(r"[A-Za-z0-9_.+\-/]+\Z")

MAX_VALUE_DEPTH = 8


class AtomType(str, Enum):
    GOAL = "goal"
    CONSTRAINT = "constraint"
    ENTITY = "entity"
    DECISION = "decision"
    PROCEDURE = "procedure"
    PREFERENCE = "preference"
    STATE = "state"
    OUTPUT_CONTRACT = "output_contract"
    OPEN_QUESTION = "open_question"
    SAFETY_BOUNDARY = "safety_boundary"
    VERBATIM_SNIPPET = "verbatim_snippet"


class Modality(str, Enum):
    MUST = "must"
    SHOULD = "should"
    MAY = "may"
    REJECTED = "rejected"
    PREFER = "prefer"
    FORBID = "forbid"


class ValueKind(str, Enum):
    BOOL = "bool"
    INT = "int"
    DECIMAL = "decimal"  # exact decimal string, scale preserved ("0.00")
    DATE = "date"  # ISO calendar date string
    ENUM = "enum"  # bounded vocabulary token
    STRING = "string"  # free text
    LIST = "list"  # ordered sequence
    SET = "set"  # order-free flag collection (compared as multiset)
    MAP = "map"  # key -> value record
    ARROW = "arrow"  # source -> target mapping (e.g. format conversion)


_DECIMAL_RE = re.compile(r"-?\d*\.\d+\Z")
_INT_RE = re.compile(r"-?\d+\Z")


@dataclass(frozen=True)
class Value:
    """Tagged commitment value.

    ``data`` holds the payload for the kind: bool, int, str (decimal/date/
    enum/string), tuple of Value (list/set), tuple of (key, Value) pairs
    (map), or a (source, target) Value pair (arrow).
    """

    kind: ValueKind
    data: Any

    # -- constructors -------------------------------------------------

    @classmethod
    def of_bool(cls, flag: bool) -> "Value":
        return cls(ValueKind.BOOL, bool(flag))

    @classmethod
    def of_int(cls, number: int) -> "Value":
        return cls(ValueKind.INT, int(number))

    @classmethod
    def of_decimal(cls, text: str) -> "Value":
        if not _DECIMAL_RE.match(text):
            raise ValueError(f"not a decimal literal: {text!r}")
        return cls(ValueKind.DECIMAL, text)

    @classmethod
    def of_date(cls, iso: str) -> "Value":
        _dt.date.fromisoformat(iso)  # calendar validity
        return cls(ValueKind.DATE, iso)

    @classmethod
    def of_enum(cls, token: str) -> "Value":
        return cls(ValueKind.ENUM, token)

    @classmethod
    def of_string(cls, text: str) -> "Value":
        return cls(ValueKind.STRING, text)

    @classmethod
    def of_list(cls, items: Iterable["Value"]) -> "Value":
        return cls(ValueKind.LIST, tuple(items))

    @classmethod
    def of_set(cls, items: Iterable["Value"]) -> "Value":
        return cls(ValueKind.SET, tuple(items))

    @classmethod
    def of_map(cls, entries: Iterable[tuple[str, "Value"]] | dict) -> "Value":
        pairs = entries.items() if isinstance(entries, dict) else entries
        return cls(ValueKind.MAP, tuple((str(k), v) for k, v in pairs))

    @classmethod
    def of_arrow(cls, source: "Value", target: "Value") -> "Value":
        return cls(ValueKind.ARROW, (source, target))

    # -- inspection ---------------------------------------------------

    def is_numeric(self) -> bool:
        return self.kind in (ValueKind.INT, ValueKind.DECIMAL)

    def as_fraction(self) -> Fraction:
        if self.kind == ValueKind.INT:
            return Fraction(self.data)
        if self.kind == ValueKind.DECIMAL:
            return Fraction(self.data)
        raise TypeError(f"not numeric: {self.kind.value}")

    def depth(self) -> int:
        if self.kind in (ValueKind.LIST, ValueKind.SET):
            return 1 + max((v.depth() for v in self.data), default=0)
        if self.kind == ValueKind.MAP:
            return 1 + max((v.depth() for _, v in self.data), default=0)
        if self.kind == ValueKind.ARROW:
            source, target = self.data
            return 1 + max(source.depth(), target.depth())
        return 1

    def violations(self, path: str = "value") -> list[str]:
        """Structural problems with this value, if any."""
        problems: list[str] = []
        if self.depth() > MAX_VALUE_DEPTH:
            problems.append(f"{path}: nesting depth {self.depth()} exceeds {MAX_VALUE_DEPTH}")
        if self.kind == ValueKind.BOOL and not isinstance(self.data, bool):
            problems.append(f"{path}: bool payload expected")
        elif self.kind == ValueKind.INT and not isinstance(self.data, int):
            problems.append(f"{path}: int payload expected")
        elif self.kind == ValueKind.DECIMAL:
            if not (isinstance(self.data, str) and _DECIMAL_RE.match(self.data)):
                problems.append(f"{path}: malformed decimal literal {self.data!r}")
        elif self.kind == ValueKind.DATE:
            try:
                _dt.date.fromisoformat(self.data)
            except (TypeError, ValueError):
                problems.append(f"{path}: not a calendar-valid ISO date: {self.data!r}")
        elif self.kind == ValueKind.ENUM:
            if not (isinstance(self.data, str) and ENUM_TOKEN_RE.match(self.data)):
                problems.append(f"{path}: malformed enum token {self.data!r}")
        elif self.kind == ValueKind.STRING and not isinstance(self.data, str):
            problems.append(f"{path}: string payload expected")
        elif self.kind in (ValueKind.LIST, ValueKind.SET):
            for i, item in enumerate(self.data):
                problems.extend(item.violations(f"{path}[{i}]"))
        elif self.kind == ValueKind.MAP:
            for key, item in self.data:
                if not MAP_KEY_RE.match(key):
                    problems.append(f"{path}: malformed map key {key!r}")
                problems.extend(item.violations(f"{path}.{key}"))
        elif self.kind == ValueKind.ARROW:
            source, target = self.data
            problems.extend(source.violations(f"{path}.from"))
            problems.extend(target.violations(f"{path}.to"))
        return problems


_TEXTUAL = (ValueKind.ENUM, ValueKind.STRING)


def value_equiv(v1: Value, v2: Value) -> bool:
    """True iff two normalized values denote the same commitment value.

    Booleans and integers compare exactly; decimals compare as rationals
    ("0.00" == "0.0"); numeric kinds cross-compare; enum and free-string
    kinds cross-compare by exact text (kind is a parsing artifact, the token
    is the value); lists compare as sequences, flag sets as multisets; maps
    compare key-wise.
    """
    if v1.is_numeric() and v2.is_numeric():
        return v1.as_fraction() == v2.as_fraction()
    if v1.kind in _TEXTUAL and v2.kind in _TEXTUAL:
        return v1.data == v2.data
    if v1.kind != v2.kind:
        return False
    if v1.kind in (ValueKind.BOOL, ValueKind.DATE):
        return v1.data == v2.data
    if v1.kind == ValueKind.LIST:
        return len(v1.data) == len(v2.data) and all(
            value_equiv(a, b) for a, b in zip(v1.data, v2.data)
        )
    if v1.kind == ValueKind.SET:
        return _multiset_equal(v1.data, v2.data)
    if v1.kind == ValueKind.MAP:
        m1, m2 = dict(v1.data), dict(v2.data)
        return m1.keys() == m2.keys() and all(value_equiv(m1[k], m2[k]) for k in m1)
    if v1.kind == ValueKind.ARROW:
        return value_equiv(v1.data[0], v2.data[0]) and value_equiv(v1.data[1], v2.data[1])
    raise AssertionError(f"unhandled kind {v1.kind}")


def _multiset_equal(items1: tuple, items2: tuple) -> bool:
    if len(items1) != len(items2):
        return False
    remaining = list(items2)
    for item in items1:
        for j, other in enumerate(remaining):
            if value_equiv(item, other):
                del remaining[j]
                break
        else:
            return False
    return True


def _multiset_subset(small: tuple, big: tuple) -> bool:
    remaining = list(big)
    for item in small:
        for j, other in enumerate(remaining):
            if value_equiv(item, other):
                del remaining[j]
                break
        else:
            return False
    return True


def _as_range(v: Value) -> tuple[Fraction, Fraction] | None:
    if v.kind != ValueKind.MAP:
        return None
    entries = dict(v.data)
    if set(entries) != {"min", "max"}:
        return None
    lo, hi = entries["min"], entries["max"]
    if not (lo.is_numeric() and hi.is_numeric()):
        return None
    return lo.as_fraction(), hi.as_fraction()


def compatible(v1: Value, v2: Value, *, allowed_list_semantics: bool = False) -> bool:
    """Equivalence plus the two documented compatibility extensions.

    A numeric range ({min,max} map) is compatible with a point inside it,
    and -- only under allowed-list semantics -- a collection is compatible
    with any sub-collection of it.  Everything else that is not equivalent
    is incompatible; conflict detection stays conservative.
    """
    if value_equiv(v1, v2):
        return True
    for a, b in ((v1, v2), (v2, v1)):
        rng = _as_range(a)
        if rng is not None and b.is_numeric():
            lo, hi = rng
            if lo <= b.as_fraction() <= hi:
                return True
    if allowed_list_semantics:
        if v1.kind in (ValueKind.LIST, ValueKind.SET) and v2.kind in (
            ValueKind.LIST,
            ValueKind.SET,
        ):
            if _multiset_subset(v1.data, v2.data) or _multiset_subset(v2.data, v1.data):
                return True
    return False


@dataclass(frozen=True)
class Evidence:
    """Where an atom came from: message or document id, optional char span.

    ``span`` is half-open (start, end) into the source text; a bare message
    or document reference carries no span.  ``quote`` is the verbatim
    excerpt at the span when available.
    """

    source_id: str
    span: tuple[int, int] | None = None
    quote: str | None = None

    def violations(self) -> list[str]:
        problems = []
        if not self.source_id:
            problems.append("evidence: empty source_id")
        if self.span is not None:
            start, end = self.span
            if not (0 <= start < end):
                problems.append(f"evidence: invalid span ({start}, {end})")
        return problems

    def matches_source(self, source_text: str) -> bool:
        """Check quote/span agreement against the actual source text."""
        if self.span is None or self.quote is None:
            return True
        start, end = self.span
        return source_text[start:end] == self.quote


class AtomId(NamedTuple):
    """Normalized identity key: what commitment this is, not its value."""

    type: str
    subject: str
    predicate: str
    scope: str

    def __str__(self) -> str:
        return "/".join(self)

    @classmethod
    def parse(cls, text: str) -> "AtomId":
        parts = text.split("/")
        if len(parts) != 4:
            raise ValueError(f"atom id must have 4 segments: {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class Atom:
    type: AtomType
    subject: str
    predicate: str
    value: Value
    modality: Modality = Modality.MUST
    scope: str = "task"
    evidence: Evidence | None = None
    confidence: float = 1.0
    criticality: int = 3
    safety: bool = False


def atom_id(a: Atom) -> AtomId:
    return AtomId(a.type.value, a.subject, a.predicate, a.scope)


def equivalent(a: Atom, b: Atom) -> bool:
    """Same identity key and equivalent normalized values."""
    return atom_id(a) == atom_id(b) and value_equiv(a.value, b.value)


def conflicts(a: Atom, b: Atom) -> bool:
    """Same identity key, incompatible values.

    Allowed-list subset compatibility applies only when the shared predicate
    is ``allowed``.
    """
    if atom_id(a) != atom_id(b):
        return False
    allowed = a.predicate == "allowed"
    return not compatible(a.value, b.value, allowed_list_semantics=allowed)


@dataclass(frozen=True)
class Violation:
    field: str
    message: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(a: Atom) -> ValidationResult:
    """Check every schema invariant; returns violations instead of raising."""
    problems: list[Violation] = []
    if not isinstance(a.type, AtomType):
        problems.append(Violation("type", f"unknown atom type {a.type!r}"))
    if not isinstance(a.modality, Modality):
        problems.append(Violation("modality", f"unknown modality {a.modality!r}"))
    for name in ("subject", "predicate", "scope"):
        token = getattr(a, name)
        if not (isinstance(token, str) and TOKEN_RE.match(token)):
            problems.append(Violation(name, f"not a lowercase identifier token: {token!r}"))
    if not (isinstance(a.confidence, (int, float)) and 0.0 <= a.confidence <= 1.0):
        problems.append(Violation("confidence", f"outside [0, 1]: {a.confidence!r}"))
    if a.criticality not in (1, 2, 3, 4, 5):
        problems.append(Violation("criticality", f"outside 1..5: {a.criticality!r}"))
    if isinstance(a.type, AtomType) and a.type == AtomType.SAFETY_BOUNDARY and not a.safety:
        problems.append(Violation("safety", "safety_boundary atoms must set safety=true"))
    if isinstance(a.value, Value):
        for msg in a.value.violations():
            problems.append(Violation("value", msg))
    else:
        problems.append(Violation("value", f"not a Value: {a.value!r}"))
    if a.evidence is not None:
        for msg in a.evidence.violations():
            problems.append(Violation("evidence", msg))
    return ValidationResult(tuple(problems))


# ---------------------------------------------------------------------------
# Canonical JSON record layer
# ---------------------------------------------------------------------------

ATOM_FIELDS = (
    "type",
    "subject",
    "predicate",
    "value",
    "modality",
    "scope",
    "evidence",
    "confidence",
    "criticality",
    "safety",
)


class RecordError(ValueError):
    """A JSON record cannot be read back as a valid atom."""


def value_to_json(v: Value) -> Any:
    """Lossless JSON encoding; kinds without a native JSON shape use a
    single reserved "$kind" key, which cannot collide with map keys."""
    if v.kind == ValueKind.BOOL or v.kind == ValueKind.INT or v.kind == ValueKind.STRING:
        return v.data
    if v.kind == ValueKind.DECIMAL:
        return {"$decimal": v.data}
    if v.kind == ValueKind.DATE:
        return {"$date": v.data}
    if v.kind == ValueKind.ENUM:
        return {"$enum": v.data}
    if v.kind == ValueKind.LIST:
        return [value_to_json(item) for item in v.data]
    if v.kind == ValueKind.SET:
        return {"$set": [value_to_json(item) for item in v.data]}
    if v.kind == ValueKind.MAP:
        return {k: value_to_json(item) for k, item in v.data}
    if v.kind == ValueKind.ARROW:
        source, target = v.data
        return {"$arrow": {"from": value_to_json(source), "to": value_to_json(target)}}
    raise AssertionError(f"unhandled kind {v.kind}")


def value_from_json(raw: Any) -> Value:
    if isinstance(raw, bool):
        return Value.of_bool(raw)
    if isinstance(raw, int):
        return Value.of_int(raw)
    if isinstance(raw, float):
        # floats only arrive from hand-written JSON; preserve the printed form
        return Value.of_decimal(repr(raw))
    if isinstance(raw, str):
        return Value.of_string(raw)
    if isinstance(raw, list):
        return Value.of_list(value_from_json(item) for item in raw)
    if isinstance(raw, dict):
        if len(raw) == 1:
            ((key, payload),) = raw.items()
            if key == "$decimal":
                return Value.of_decimal(payload)
            if key == "$date":
                return Value.of_date(payload)
            if key == "$enum":
                return Value.of_enum(payload)
            if key == "$set":
                return Value.of_set(value_from_json(item) for item in payload)
            if key == "$arrow":
                return Value.of_arrow(value_from_json(payload["from"]), value_from_json(payload["to"]))
        if any(k.startswith("$") for k in raw):
            raise RecordError(f"unknown tagged value {sorted(raw)!r}")
        return Value.of_map((k, value_from_json(item)) for k, item in raw.items())
    raise RecordError(f"cannot read value from JSON payload {raw!r}")


def evidence_to_json(e: Evidence | None) -> Any:
    if e is None:
        return None
    out: dict[str, Any] = {"source_id": e.source_id}
    if e.span is not None:
        out["span"] = [e.span[0], e.span[1]]
    if e.quote is not None:
        out["quote"] = e.quote
    return out


def evidence_from_json(raw: Any) -> Evidence | None:
    if raw is None:
        return None
    if isinstance(raw, str):
        # bare message/document reference
        return Evidence(source_id=raw)
    if isinstance(raw, dict):
        span = raw.get("span")
        return Evidence(
            source_id=raw.get("source_id", ""),
            span=(span[0], span[1]) if span else None,
            quote=raw.get("quote"),
        )
    raise RecordError(f"cannot read evidence from {raw!r}")


def atom_to_record(a: Atom) -> dict[str, Any]:
    return {
        "type": a.type.value,
        "subject": a.subject,
        "predicate": a.predicate,
        "value": value_to_json(a.value),
        "modality": a.modality.value,
        "scope": a.scope,
        "evidence": evidence_to_json(a.evidence),
        "confidence": a.confidence,
        "criticality": a.criticality,
        "safety": a.safety,
    }


def atom_from_record(record: dict[str, Any], *, check: bool = True) -> Atom:
    try:
        atom = Atom(
            type=AtomType(record["type"]),
            subject=record["subject"],
            predicate=record["predicate"],
            value=value_from_json(record["value"]),
            modality=Modality(record.get("modality", "must")),
            scope=record.get("scope", "task"),
            evidence=evidence_from_json(record.get("evidence")),
            confidence=record.get("confidence", 1.0),
            criticality=record.get("criticality", 3),
            safety=bool(record.get("safety", record.get("type") == "safety_boundary")),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise RecordError(f"malformed atom record: {exc}") from exc
    if check:
        result = validate(atom)
        if not result.ok:
            details = "; ".join(f"{v.field}: {v.message}" for v in result.violations)
            raise RecordError(f"invalid atom record: {details}")
    return atom


def atoms_to_json(atoms: Iterable[Atom]) -> str:
    return json.dumps([atom_to_record(a) for a in atoms], indent=2) + "\n"


def atoms_from_json(text: str) -> list[Atom]:
    payload = json.loads(text)
    if not isinstance(payload, list):
        raise RecordError("atom file must be a JSON array of records")
    return [atom_from_record(record) for record in payload]


def save_atoms(atoms: Iterable[Atom], path: str | Path) -> None:
    Path(path).write_text(atoms_to_json(atoms), encoding="utf-8")


def load_atoms(path: str | Path) -> list[Atom]:
    return atoms_from_json(Path(path).read_text(encoding="utf-8"))
