"""Budgeted compression pipeline over canonical atoms.

resolve_conflicts applies supersession (later evidence wins, earlier kept
with a superseded status, rejected alternatives kept as explicit negative
marks); rank_atoms orders atoms by a seven-component logged score;
encode_under_budget renders greedily and degrades (demote to min, then
drop the lowest-ranked non-safety atoms) until the packet fits; verify
decodes the packet back and checks it against the atoms it was built
from; compress chains the whole pipeline with the fallback ladder.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

from .atoms import (
    Atom,
    AtomId,
    Modality,
    ValueKind,
    atom_from_record,
    atom_id,
    atom_to_record,
    conflicts,
    equivalent,
    validate,
    value_to_json,
)
from .ccl import (
    CclDecodeError,
    CclDocument,
    CclError,
    atoms_to_ccl,
    atoms_to_min,
    ccl_to_atoms,
    emit_ccl,
    parse_ccl,
    placeable,
)
from .extract import ChatHistory, ExternalExtractorClient, ExtractionResult, extract_atoms
from .lexicon import Lexicon
from .metrics import GoldAnnotation, MetricsError, recoverable
from .scoring import PolicyConfig, RenderDecision, render_policy, risk
from .tokens import lexical_split, lexical_tokens

PACKET_VERSION = 1

#: Rank bonus that puts safety atoms ahead of any non-safety total.
SAFETY_RANK_CONSTANT = 10.0


class CodecError(ValueError):
    pass


class BudgetInfeasible(CodecError):
    """The safety-atom floor alone exceeds the budget; nothing droppable
    is left, and safety atoms are never dropped."""

    def __init__(self, budget: int, token_count: int, safety_ids: tuple[AtomId, ...]):
        self.budget = budget
        self.token_count = token_count
        self.safety_ids = safety_ids
        super().__init__(
            f"budget {budget} infeasible: {token_count} tokens with only "
            f"{len(safety_ids)} undroppable safety atoms left"
        )


class PacketParseError(CodecError):
    pass


# ---------------------------------------------------------------------------
# Conflict resolution / supersession
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Resolution:
    """Atoms after supersession: active ones render into the document;
    rejected and unresolved ones go to the raw section as explicit marks;
    superseded ones are kept for audit but never rendered as active."""

    active: tuple[Atom, ...]
    rejected: tuple[Atom, ...]
    superseded: tuple[Atom, ...]
    unresolved: tuple[tuple[Atom, Atom], ...]


def resolve_conflicts(atoms: Iterable[Atom], history: ChatHistory | None = None) -> Resolution:
    """Later evidence supersedes earlier same-id atoms; duplicates merge;
    rejected-modality atoms never compete for the active slot; same-id
    atoms at the same position stay unresolved (both flagged for raw)."""

    def position(index: int, atom: Atom) -> tuple[int, int]:
        msg_index = -1
        if history is not None and atom.evidence is not None:
            found = history.index_of(atom.evidence.source_id)
            msg_index = -1 if found is None else found
        return (msg_index, index)

    ordered = sorted(enumerate(atoms), key=lambda pair: position(*pair))
    rejected: list[Atom] = []
    rejected_at: list[tuple[Atom, int]] = []
    for index, atom in ordered:
        if atom.modality == Modality.REJECTED and not any(
            equivalent(atom, r) for r in rejected
        ):
            rejected.append(atom)
            rejected_at.append((atom, position(index, atom)[0]))
    active: dict[AtomId, tuple[Atom, int]] = {}
    order: list[AtomId] = []
    superseded: list[Atom] = []
    unresolved: list[tuple[Atom, Atom]] = []
    for index, atom in ordered:
        if atom.modality == Modality.REJECTED:
            continue
        if any(
            equivalent(atom, r) and pos == position(index, atom)[0]
            for r, pos in rejected_at
        ):
            # the same message asserts and rejects this value: rejection wins
            continue
        key = atom_id(atom)
        held = active.get(key)
        if held is None:
            active[key] = (atom, position(index, atom)[0])
            order.append(key)
            continue
        prior, prior_pos = held
        if equivalent(prior, atom):
            continue
        here = position(index, atom)[0]
        if here == prior_pos:
            unresolved.append((prior, atom))
            del active[key]
            order.remove(key)
        else:
            superseded.append(prior)
            active[key] = (atom, here)
    return Resolution(
        active=tuple(active[key][0] for key in order),
        rejected=tuple(rejected),
        superseded=tuple(superseded),
        unresolved=tuple(unresolved),
    )


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankWeights:
    relevance: float = 1.0
    recency: float = 1.0
    specificity: float = 1.0
    criticality: float = 1.0
    safety_weight: float = 1.0
    dependency_degree: float = 1.0
    confidence_penalty: float = 1.0

    def echo(self) -> dict[str, float]:
        return {
            "relevance": self.relevance,
            "recency": self.recency,
            "specificity": self.specificity,
            "criticality": self.criticality,
            "safety_weight": self.safety_weight,
            "dependency_degree": self.dependency_degree,
            "confidence_penalty": self.confidence_penalty,
        }


@dataclass(frozen=True)
class RankScore:
    """The seven logged components; total is their sum, nothing hidden."""

    relevance: float
    recency: float
    specificity: float
    criticality: float
    safety_weight: float
    dependency_degree: float
    confidence_penalty: float

    @property
    def total(self) -> float:
        return (
            self.relevance
            + self.recency
            + self.specificity
            + self.criticality
            + self.safety_weight
            + self.dependency_degree
            + self.confidence_penalty
        )

    def as_dict(self) -> dict[str, float]:
        return {
            "relevance": self.relevance,
            "recency": self.recency,
            "specificity": self.specificity,
            "criticality": self.criticality,
            "safety_weight": self.safety_weight,
            "dependency_degree": self.dependency_degree,
            "confidence_penalty": self.confidence_penalty,
            "total": self.total,
        }


@dataclass(frozen=True)
class RankedAtom:
    atom: Atom
    score: RankScore


_SPECIFICITY_BONUS = {
    ValueKind.INT: 1.0,
    ValueKind.DECIMAL: 1.0,
    ValueKind.DATE: 1.0,
    ValueKind.ENUM: 1.0,
    ValueKind.LIST: 0.75,
    ValueKind.SET: 0.75,
    ValueKind.MAP: 0.75,
    ValueKind.ARROW: 0.75,
    ValueKind.BOOL: 0.5,
    ValueKind.STRING: 0.25,
}


def _value_terms(atom: Atom) -> set[str]:
    text = json.dumps(value_to_json(atom.value))
    return {t.lower() for t in lexical_split(text) if t.isalnum() or "_" in t}


def _atom_terms(atom: Atom) -> set[str]:
    terms = {t.lower() for t in lexical_split(atom.subject)}
    terms.update(_value_terms(atom))
    return terms


def rank_atoms(
    atoms: Sequence[Atom],
    *,
    query: str = "",
    history: ChatHistory | None = None,
    weights: RankWeights = RankWeights(),
) -> tuple[RankedAtom, ...]:
    """Score and sort descending; ties break on the lexicographic atom id
    so equal-scored orderings are reproducible."""
    query_terms = {t.lower() for t in lexical_split(query)}
    n = len(atoms)
    subjects = [a.subject.lower() for a in atoms]
    value_term_sets = [_value_terms(a) for a in atoms]
    ranked = []
    for i, atom in enumerate(atoms):
        terms = _atom_terms(atom)
        relevance = len(terms & query_terms) / len(terms) if query_terms and terms else 0.0
        recency = 0.0
        if history is not None and atom.evidence is not None and len(history) > 1:
            index = history.index_of(atom.evidence.source_id)
            if index is not None:
                recency = index / (len(history) - 1)
        specificity = _SPECIFICITY_BONUS[atom.value.kind]
        dependents = sum(
            1 for j in range(n) if j != i and subjects[i] in value_term_sets[j]
        )
        score = RankScore(
            relevance=weights.relevance * relevance,
            recency=weights.recency * recency,
            specificity=weights.specificity * specificity,
            criticality=weights.criticality * (atom.criticality / 5.0),
            safety_weight=weights.safety_weight * (SAFETY_RANK_CONSTANT if atom.safety else 0.0),
            dependency_degree=weights.dependency_degree * (dependents / max(1, n - 1)),
            confidence_penalty=weights.confidence_penalty * -(1.0 - atom.confidence),
        )
        ranked.append(RankedAtom(atom, score))
    ranked.sort(key=lambda r: (-r.score.total, atom_id(r.atom)))
    return tuple(ranked)


# ---------------------------------------------------------------------------
# Packets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawEntry:
    """One line of the raw section: why it is there, whose atom it is,
    where the quote came from."""

    marker: str  # "evidence" | "rejected" | "unresolved"
    atom_id: AtomId
    source_id: str | None = None
    quote: str | None = None

    def render(self) -> str:
        path = "/".join(self.atom_id)
        return f"{self.marker} {path} {self.source_id or '-'} {json.dumps(self.quote)}"

    @classmethod
    def parse(cls, line: str) -> "RawEntry":
        parts = line.split(" ", 3)
        if len(parts) != 4:
            raise PacketParseError(f"malformed raw line: {line!r}")
        marker, path, source, quoted = parts
        if marker not in ("evidence", "rejected", "unresolved"):
            raise PacketParseError(f"unknown raw marker {marker!r}")
        pieces = path.split("/")
        if len(pieces) != 4:
            raise PacketParseError(f"malformed atom id {path!r}")
        try:
            quote = json.loads(quoted)
        except ValueError as exc:
            raise PacketParseError(f"malformed raw quote: {quoted!r}") from exc
        return cls(marker, AtomId(*pieces), None if source == "-" else source, quote)


_HEADER_RE = re.compile(
    r"#packet v(?P<version>\d+) mode=(?P<mode>compressed|passthrough) "
    r"budget=(?P<budget>\d+) lexicon=(?P<lexicon>\S+)$"
)


@dataclass(frozen=True)
class Packet:
    """Rendered context packet.

    ``token_count`` is the lexical count of the budgeted text: header,
    documents, and raw section.  The omitted-id trailer is bookkeeping
    about what is *not* in the packet and sits outside the budget, so a
    tighter budget can never be penalized for naming more omissions.
    Passthrough packets are uncompressed escapes and exempt from the
    budget law; they carry every atom as canonical records instead.
    """

    budget: int
    lexicon_version: str
    core_doc: CclDocument | None = None
    min_doc: CclDocument | None = None
    raw_entries: tuple[RawEntry, ...] = ()
    omitted: tuple[AtomId, ...] = ()
    records: tuple[dict, ...] = ()
    mode: str = "compressed"
    token_count: int = 0

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise CodecError(f"budget must be positive, got {self.budget}")
        if self.mode not in ("compressed", "passthrough"):
            raise CodecError(f"unknown packet mode {self.mode!r}")

    @property
    def uncompressed(self) -> bool:
        return self.mode == "passthrough"

    def header_line(self) -> str:
        return (
            f"#packet v{PACKET_VERSION} mode={self.mode} "
            f"budget={self.budget} lexicon={self.lexicon_version}"
        )

    def budgeted_text(self) -> str:
        parts = [self.header_line() + "\n"]
        if self.core_doc is not None:
            parts.append(emit_ccl(self.core_doc))
        if self.min_doc is not None:
            parts.append(emit_ccl(self.min_doc))
        if self.raw_entries:
            parts.append("RAW:\n")
            parts.extend(entry.render() + "\n" for entry in self.raw_entries)
        if self.records:
            parts.append("RECORDS:\n")
            parts.append(json.dumps(list(self.records), separators=(",", ":")) + "\n")
        return "".join(parts)

    def render(self) -> str:
        text = self.budgeted_text()
        if self.omitted:
            lines = "".join("/".join(oid) + "\n" for oid in self.omitted)
            text += "OMITTED:\n" + lines
        return text


def parse_packet(text: str) -> Packet:
    lines = text.splitlines()
    if not lines:
        raise PacketParseError("empty packet text")
    match = _HEADER_RE.match(lines[0])
    if match is None:
        raise PacketParseError(f"malformed packet header: {lines[0]!r}")
    sections: dict[str, list[str]] = {"core": [], "min": [], "raw": [], "omitted": [], "records": []}
    where: str | None = None
    for line in lines[1:]:
        if line == "@CCL/1":
            where = "core"
        elif line.startswith("@CCL/1m"):
            # the min profile packs entries onto the header line
            where = "min"
        elif line == "RAW:":
            where = "raw"
            continue
        elif line == "OMITTED:":
            where = "omitted"
            continue
        elif line == "RECORDS:":
            where = "records"
            continue
        if where is None:
            raise PacketParseError(f"text outside any packet section: {line!r}")
        sections[where].append(line)
    core_doc = min_doc = None
    try:
        if sections["core"]:
            core_doc = parse_ccl("\n".join(sections["core"]) + "\n")
        if sections["min"]:
            min_doc = parse_ccl("\n".join(sections["min"]) + "\n")
    except CclError as exc:
        raise PacketParseError(f"packet document does not parse: {exc}") from exc
    raw_entries = tuple(RawEntry.parse(line) for line in sections["raw"] if line)
    omitted = []
    for line in sections["omitted"]:
        if not line:
            continue
        pieces = line.split("/")
        if len(pieces) != 4:
            raise PacketParseError(f"malformed omitted id {line!r}")
        omitted.append(AtomId(*pieces))
    records: tuple[dict, ...] = ()
    if sections["records"]:
        try:
            loaded = json.loads("\n".join(sections["records"]))
        except ValueError as exc:
            raise PacketParseError(f"malformed records section: {exc}") from exc
        if not isinstance(loaded, list):
            raise PacketParseError("records section must hold a JSON array")
        records = tuple(loaded)
    packet = Packet(
        budget=int(match.group("budget")),
        lexicon_version=match.group("lexicon"),
        core_doc=core_doc,
        min_doc=min_doc,
        raw_entries=raw_entries,
        omitted=tuple(omitted),
        records=records,
        mode=match.group("mode"),
    )
    return replace(packet, token_count=lexical_tokens(packet.budgeted_text()))


def packet_atoms(packet: Packet, lex: Lexicon) -> tuple[Atom, ...]:
    """Decode every atom the packet carries as active content: core and
    min documents, or canonical records for passthrough packets."""
    atoms: list[Atom] = []
    if packet.records:
        for record in packet.records:
            atoms.append(atom_from_record(record))
    if packet.core_doc is not None:
        atoms.extend(ccl_to_atoms(packet.core_doc, lex))
    if packet.min_doc is not None:
        atoms.extend(ccl_to_atoms(packet.min_doc, lex))
    return tuple(atoms)


# ---------------------------------------------------------------------------
# Budgeted encoding
# ---------------------------------------------------------------------------


def _decide(atom: Atom, policy: PolicyConfig, ambiguity: float) -> RenderDecision:
    score = risk(atom, atom.confidence, policy.risk_weights, ambiguity)
    return render_policy(atom, atom.confidence, score, policy.thresholds)


def _min_probe(atom: Atom, lex: Lexicon) -> bool:
    try:
        atoms_to_min([atom], lex)
        return True
    except CclError:
        return False


def _raw_from_spans(spans, history: ChatHistory | None) -> list[RawEntry]:
    entries = []
    for span in spans:
        source_id = quote = None
        if span.evidence is not None:
            source_id = span.evidence.source_id
            quote = span.evidence.quote
            if quote is None and span.evidence.span is not None and history is not None:
                msg = history.get(source_id)
                if msg is not None:
                    start, end = span.evidence.span
                    quote = msg.text[start:end]
        entries.append(RawEntry("evidence", span.atom_id, source_id, quote))
    return entries


def _mark_entry(marker: str, atom: Atom) -> RawEntry:
    source_id = atom.evidence.source_id if atom.evidence is not None else None
    quote = atom.evidence.quote if atom.evidence is not None else None
    if quote is None:
        quote = json.dumps(value_to_json(atom.value))
    return RawEntry(marker, atom_id(atom), source_id, quote)


def encode_under_budget(
    ranked: Sequence[RankedAtom],
    budget: int,
    lex: Lexicon,
    *,
    policy: PolicyConfig = PolicyConfig(),
    ambiguity: Mapping[AtomId, float] | None = None,
    forced_decisions: Mapping[AtomId, RenderDecision] | None = None,
    extra_raw: Sequence[RawEntry] = (),
    history: ChatHistory | None = None,
) -> Packet:
    """Greedy encode in rank order, then degrade until the packet fits:
    first demote min-eligible atoms to the min profile, then drop the
    lowest-ranked non-safety atoms into the omitted trailer.  Safety
    atoms are never demoted or dropped; when they alone exceed the
    budget, BudgetInfeasible is raised instead.
    """
    if budget <= 0:
        raise CodecError(f"budget must be positive, got {budget}")
    ambiguity = dict(ambiguity or {})
    forced = dict(forced_decisions or {})
    decisions: dict[AtomId, RenderDecision] = {}
    for item in ranked:
        key = atom_id(item.atom)
        decision = forced.get(key, _decide(item.atom, policy, ambiguity.get(key, 0.0)))
        if item.atom.safety:
            if not placeable(item.atom, lex):
                raise CodecError(
                    f"lexicon {lex.version} has no container for safety atom "
                    f"{'/'.join(key)}; safety atoms must render canonically"
                )
            decision = RenderDecision.CANONICAL_PLUS_SPAN
        elif not placeable(item.atom, lex):
            # no container slot: an ad-hoc entry would not decode back,
            # so the atom survives as a raw quote only
            decision = RenderDecision.PRESERVE_RAW_MESSAGE
        decisions[key] = decision

    def build(included: Sequence[RankedAtom], demoted: bool, omitted: Sequence[AtomId]) -> Packet:
        min_atoms: list[Atom] = []
        core_atoms: list[Atom] = []
        for item in included:
            key = atom_id(item.atom)
            if (
                demoted
                and decisions[key] == RenderDecision.MIN_ALLOWED
                and _min_probe(item.atom, lex)
            ):
                min_atoms.append(item.atom)
            else:
                core_atoms.append(item.atom)
        core_doc, spans = atoms_to_ccl(core_atoms, lex, decisions)
        if not core_atoms:
            core_doc = None
        min_doc = None
        if min_atoms:
            min_doc = atoms_to_min(min_atoms, lex, decisions)
        raw_entries = tuple(_raw_from_spans(spans, history)) + tuple(extra_raw)
        packet = Packet(
            budget=budget,
            lexicon_version=lex.version,
            core_doc=core_doc,
            min_doc=min_doc,
            raw_entries=raw_entries,
            omitted=tuple(omitted),
        )
        return replace(packet, token_count=lexical_tokens(packet.budgeted_text()))

    included = list(ranked)
    omitted: list[AtomId] = []
    demoted = False
    packet = build(included, demoted, omitted)
    while packet.token_count > budget:
        if not demoted and any(
            decisions[atom_id(item.atom)] == RenderDecision.MIN_ALLOWED for item in included
        ):
            demoted = True
        else:
            droppable = [i for i in range(len(included)) if not included[i].atom.safety]
            if not droppable:
                raise BudgetInfeasible(
                    budget,
                    packet.token_count,
                    tuple(atom_id(item.atom) for item in included),
                )
            victim = included.pop(droppable[-1])
            omitted.append(atom_id(victim.atom))
        packet = build(included, demoted, omitted)
    return packet


def passthrough_packet(
    atoms: Sequence[Atom],
    budget: int,
    lex: Lexicon,
    *,
    extra_raw: Sequence[RawEntry] = (),
) -> Packet:
    """Uncompressed escape: every atom as a canonical record, no budget
    law, flagged by mode so downstream consumers know compression was
    skipped.  Safety atoms still get their raw quotes so the coverage
    invariant holds in every mode."""
    safety_raw = tuple(_mark_entry("evidence", a) for a in atoms if a.safety)
    packet = Packet(
        budget=budget,
        lexicon_version=lex.version,
        raw_entries=safety_raw + tuple(extra_raw),
        records=tuple(atom_to_record(a) for a in atoms),
        mode="passthrough",
    )
    return replace(packet, token_count=lexical_tokens(packet.budgeted_text()))


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    """Decode-and-compare audit of a packet against the atoms it was
    built from.  ``failures`` is the human-readable union; empty means
    the packet passed."""

    failures: tuple[str, ...]
    missing: tuple[AtomId, ...] = ()
    mutated: tuple[AtomId, ...] = ()
    conflict_pairs: tuple[tuple[AtomId, AtomId], ...] = ()
    schema_errors: tuple[str, ...] = ()
    safety_uncovered: tuple[AtomId, ...] = ()
    recoverable_ok: bool = True
    decoded_count: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def failing_ids(self) -> tuple[AtomId, ...]:
        seen: list[AtomId] = []
        for aid in (*self.missing, *self.mutated, *self.safety_uncovered):
            if aid not in seen:
                seen.append(aid)
        return tuple(seen)


def verify(packet: Packet, reference: Sequence[Atom], lex: Lexicon) -> VerificationReport:
    """Decode the packet and check: schema validity of every decoded
    atom, absence of internal conflicts, coverage of the reference atoms
    (omitted and raw-preserved ids count as covered), safety atoms both
    decodable and quoted raw, and recoverability in the weighted sense."""
    failures: list[str] = []
    try:
        decoded = packet_atoms(packet, lex)
    except (CclDecodeError, CclError, KeyError, TypeError, ValueError) as exc:
        return VerificationReport(failures=(f"packet does not decode: {exc}",))

    schema_errors: list[str] = []
    for atom in decoded:
        result = validate(atom)
        if not result.ok:
            detail = "; ".join(f"{v.field}: {v.message}" for v in result.violations)
            schema_errors.append(f"{'/'.join(atom_id(atom))}: {detail}")
    failures.extend(f"schema: {err}" for err in schema_errors)

    conflict_pairs: list[tuple[AtomId, AtomId]] = []
    for i in range(len(decoded)):
        for j in range(i + 1, len(decoded)):
            if conflicts(decoded[i], decoded[j]):
                pair = (atom_id(decoded[i]), atom_id(decoded[j]))
                conflict_pairs.append(pair)
                failures.append(f"conflict: {'/'.join(pair[0])} vs {'/'.join(pair[1])}")

    decoded_by_id = {atom_id(a): a for a in decoded}
    raw_ids = {entry.atom_id for entry in packet.raw_entries}
    omitted = set(packet.omitted)
    missing: list[AtomId] = []
    mutated: list[AtomId] = []
    safety_uncovered: list[AtomId] = []
    for atom in reference:
        key = atom_id(atom)
        if key in omitted:
            continue
        found = decoded_by_id.get(key)
        if found is None:
            if key not in raw_ids:
                missing.append(key)
                failures.append(f"missing: {'/'.join(key)}")
        elif not equivalent(atom, found):
            mutated.append(key)
            failures.append(f"mutated: {'/'.join(key)}")
        if atom.safety and (found is None or key not in raw_ids):
            safety_uncovered.append(key)
            failures.append(f"safety uncovered: {'/'.join(key)}")

    recoverable_ok = True
    if reference:
        allowed = [oid for oid in packet.omitted if oid in {atom_id(a) for a in reference}]
        raw_only = [
            atom_id(a)
            for a in reference
            if atom_id(a) not in decoded_by_id
            and atom_id(a) in raw_ids
            and atom_id(a) not in allowed
        ]
        try:
            recoverable_ok = recoverable(
                decoded,
                GoldAnnotation(atoms=tuple(reference)),
                allowed_omissions=(*allowed, *raw_only),
            )
        except MetricsError as exc:
            recoverable_ok = False
            failures.append(f"recoverability check failed: {exc}")
        if not recoverable_ok and not failures:
            failures.append("decoded packet does not recover the reference atoms")
    return VerificationReport(
        failures=tuple(failures),
        missing=tuple(missing),
        mutated=tuple(mutated),
        conflict_pairs=tuple(conflict_pairs),
        schema_errors=tuple(schema_errors),
        safety_uncovered=tuple(safety_uncovered),
        recoverable_ok=recoverable_ok,
        decoded_count=len(decoded),
    )


# ---------------------------------------------------------------------------
# End-to-end compression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    recent_turns: int = 4
    rank_weights: RankWeights = field(default_factory=RankWeights)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    fallback_factor: float = 1.5
    allow_passthrough: bool = True

    def echo(self) -> dict[str, Any]:
        return {
            "recent_turns": self.recent_turns,
            "rank_weights": self.rank_weights.echo(),
            "policy": self.policy.echo(),
            "fallback_factor": self.fallback_factor,
            "allow_passthrough": self.allow_passthrough,
        }


@dataclass(frozen=True)
class CompressResult:
    packet: Packet
    verification: VerificationReport
    ranked: tuple[RankedAtom, ...]
    resolution: Resolution
    extraction: ExtractionResult | None
    requested_budget: int
    fallbacks: tuple[str, ...] = ()


def _empty_result(budget: int, lex: Lexicon) -> CompressResult:
    packet = Packet(budget=budget, lexicon_version=lex.version)
    packet = replace(packet, token_count=lexical_tokens(packet.budgeted_text()))
    return CompressResult(
        packet=packet,
        verification=VerificationReport(failures=(), decoded_count=0),
        ranked=(),
        resolution=Resolution((), (), (), ()),
        extraction=None,
        requested_budget=budget,
        fallbacks=("empty-history",),
    )


def compress(
    history: ChatHistory,
    lex: Lexicon,
    *,
    budget: int,
    query: str = "",
    cfg: CodecConfig = CodecConfig(),
    client: ExternalExtractorClient | None = None,
) -> CompressResult:
    """Segment, extract, resolve, rank, encode, verify; on failure walk
    the fallback ladder: raw spans for the failing atoms, one budget
    raise by cfg.fallback_factor, then an uncompressed passthrough.
    BudgetInfeasible propagates only with passthrough disabled.
    """
    if budget <= 0:
        raise CodecError(f"budget must be positive, got {budget}")
    if not history.messages:
        return _empty_result(budget, lex)
    extraction = extract_atoms(history, lex, client=client)
    resolution = resolve_conflicts(extraction.atoms, history)
    ranked = rank_atoms(
        resolution.active, query=query, history=history, weights=cfg.rank_weights
    )
    extra_raw = [_mark_entry("rejected", a) for a in resolution.rejected]
    for first, second in resolution.unresolved:
        extra_raw.append(_mark_entry("unresolved", first))
        extra_raw.append(_mark_entry("unresolved", second))
    fallbacks: list[str] = []
    forced: dict[AtomId, RenderDecision] = {}
    infeasible: BudgetInfeasible | None = None

    def attempt(use_budget: int) -> tuple[Packet | None, VerificationReport | None]:
        nonlocal infeasible
        try:
            packet = encode_under_budget(
                ranked,
                use_budget,
                lex,
                policy=cfg.policy,
                forced_decisions=forced,
                extra_raw=extra_raw,
                history=history,
            )
        except BudgetInfeasible as exc:
            infeasible = exc
            return None, None
        return packet, verify(packet, resolution.active, lex)

    packet, report = attempt(budget)
    if packet is not None and report is not None and not report.ok and report.failing_ids():
        fallbacks.append("raw-spans")
        for aid in report.failing_ids():
            forced[aid] = RenderDecision.CANONICAL_PLUS_SPAN
        packet, report = attempt(budget)
    if packet is None or (report is not None and not report.ok):
        fallbacks.append("budget-raised")
        raised = max(budget + 1, int(round(budget * cfg.fallback_factor)))
        packet, report = attempt(raised)
    if packet is None or (report is not None and not report.ok):
        if not cfg.allow_passthrough:
            if packet is None and infeasible is not None:
                raise infeasible
            raise CodecError(
                "verification failed after fallbacks: " + "; ".join(report.failures)
            )
        fallbacks.append("passthrough")
        packet = passthrough_packet(
            [r.atom for r in ranked], budget, lex, extra_raw=extra_raw
        )
        report = verify(packet, resolution.active, lex)
    assert packet is not None and report is not None
    return CompressResult(
        packet=packet,
        verification=report,
        ranked=ranked,
        resolution=resolution,
        extraction=extraction,
        requested_budget=budget,
        fallbacks=tuple(fallbacks),
    )
