"""Transcript model, segmentation, and candidate extraction.

A chat history is an ordered list of messages with unique ids.  segment()
maps every message (and cue-bearing lines inside it) onto a fixed grid of
eight regions; RuleExtractor turns the lexicon's phrase rules into
candidate atoms with evidence spans; ExternalExtractorClient wraps an
out-of-process extractor and degrades to the rules on any failure.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterator, Mapping

from .atoms import (
    Atom,
    AtomType,
    Evidence,
    Modality,
    Value,
    atom_from_record,
    validate,
    value_from_json,
)
from .lexicon import DEFAULT_NEGATION_CUES, Lexicon, PhraseRule
from .normalize import CandidateAtom, NormalizationTrace, normalize_atom
from .scoring import ConfidenceWeights

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Chat history
# ---------------------------------------------------------------------------


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class Message:
    id: str
    role: Role
    text: str

    def violations(self) -> list[str]:
        problems = []
        if not self.id or self.id != self.id.strip():
            problems.append(f"message id {self.id!r} empty or padded")
        if not self.text.strip():
            problems.append(f"message {self.id}: empty text")
        return problems


@dataclass(frozen=True)
class ChatHistory:
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for msg in self.messages:
            problems = msg.violations()
            if problems:
                raise ValueError("; ".join(problems))
            if msg.id in seen:
                raise ValueError(f"duplicate message id {msg.id!r}")
            seen.add(msg.id)

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self) -> Iterator[Message]:
        return iter(self.messages)

    def index_of(self, source_id: str) -> int | None:
        for i, msg in enumerate(self.messages):
            if msg.id == source_id:
                return i
        return None

    def get(self, source_id: str) -> Message | None:
        i = self.index_of(source_id)
        return None if i is None else self.messages[i]


_TURN_RE = re.compile(r"^(System|User|Assistant|Tool)\s*:\s?(.*)$", re.IGNORECASE)


def parse_transcript(text: str) -> ChatHistory:
    """Read ``Role: text`` turns; untagged lines continue the previous turn.

    Text with no role tags at all becomes a single user message, so plain
    prompts and full transcripts go through the same entry point.  Ids are
    ``<role>_<ordinal>`` with one counter per role.
    """
    turns: list[tuple[Role, list[str]]] = []
    for line in text.splitlines():
        match = _TURN_RE.match(line)
        if match:
            turns.append((Role(match.group(1).lower()), [match.group(2)]))
        elif turns:
            turns[-1][1].append(line.strip())
        elif line.strip():
            turns.append((Role.USER, [line]))
        # leading blank lines before the first turn are dropped
        else:
            continue
    counters: dict[Role, int] = {}
    messages = []
    for role, lines in turns:
        body = "\n".join(lines).strip()
        if not body:
            continue
        counters[role] = counters.get(role, 0) + 1
        messages.append(Message(f"{role.value}_{counters[role]}", role, body))
    if not messages:
        raise ValueError("transcript has no non-empty turns")
    return ChatHistory(tuple(messages))


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


class Region(str, Enum):
    SYSTEM_CONSTRAINTS = "system_constraints"
    GOALS = "goals"
    DECISIONS = "decisions"
    ARTIFACTS = "artifacts"
    PREFERENCES = "preferences"
    OPEN_QUESTIONS = "open_questions"
    SAFETY_BOUNDARIES = "safety_boundaries"
    RECENT_TURNS = "recent_turns"


REGIONS: tuple[Region, ...] = tuple(Region)

#: Trailing turns always covered by the recent_turns region.
RECENT_TURN_COUNT = 4


@dataclass(frozen=True)
class SegmentSpan:
    """Half-open character span inside one message."""

    message_id: str
    start: int
    end: int

    def slice(self, history: ChatHistory) -> str:
        msg = history.get(self.message_id)
        if msg is None:
            raise KeyError(self.message_id)
        return msg.text[self.start : self.end]


@dataclass(frozen=True)
class Segmentation:
    regions: Mapping[Region, tuple[SegmentSpan, ...]]

    def spans(self, region: Region) -> tuple[SegmentSpan, ...]:
        return self.regions.get(region, ())

    def message_ids(self, region: Region) -> tuple[str, ...]:
        seen: list[str] = []
        for span in self.spans(region):
            if span.message_id not in seen:
                seen.append(span.message_id)
        return tuple(seen)

    def regions_of(self, message_id: str) -> tuple[Region, ...]:
        return tuple(
            region
            for region in REGIONS
            if any(s.message_id == message_id for s in self.spans(region))
        )


_DECISION_CUE_RE = re.compile(
    r"\b(chose|choose|chosen|picked|keep|kept|selected|decided|instead|"
    r"switch(?:ed)?\s+to|rejected|go\s+with|went\s+with|make\s+it|stick\s+with)\b",
    re.IGNORECASE,
)
_OBLIGATION_CUE_RE = re.compile(
    r"\b(must|should|shall|require[sd]?|only|always|limit|at\s+most|at\s+least|"
    + "|".join(re.escape(c) for c in DEFAULT_NEGATION_CUES)
    + r")\b",
    re.IGNORECASE,
)
_PREFERENCE_CUE_RE = re.compile(
    r"\b(prefer(?:s|red)?|like[sd]?|love[sd]?|favorite|rather|enjoy|want(?:s|ed)?|wish)\b",
    re.IGNORECASE,
)
_SAFETY_CUE_RE = re.compile(
    r"\b(defensive|safety|safe|harm(?:ful)?|privacy|private\s+data|pii|"
    r"exfiltrat\w+|malware|weaponiz\w+|external\s+network)\b",
    re.IGNORECASE,
)
_ARTIFACT_CUE_RE = re.compile(
    r"(\b[\w./-]+\.(?:csv|json|py|js|ts|html|svg|md|txt|ya?ml|ipynb)\b|```|\bfile\b|\bscript\b|\bnotebook\b)",
    re.IGNORECASE,
)
_QUESTION_CUE_RE = re.compile(r"\?")


def _line_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    start = 0
    for line in text.splitlines(keepends=True):
        body = line.rstrip("\n")
        if body.strip():
            spans.append((start, start + len(body)))
        start += len(line)
    return spans or [(0, len(text))]


def segment(history: ChatHistory, recent_turns: int = RECENT_TURN_COUNT) -> Segmentation:
    """Route every message into at least one region.

    System messages land whole in system_constraints; cue-bearing lines
    land in decisions / preferences / artifacts / open_questions /
    safety_boundaries / system_constraints (obligations and negations);
    the trailing ``recent_turns`` messages are covered whole; whatever
    matched nothing topical defaults to goals.  Regions overlap freely:
    they are views, not a partition.
    """
    if not history.messages:
        raise ValueError("cannot segment an empty history")
    buckets: dict[Region, list[SegmentSpan]] = {region: [] for region in REGIONS}
    n = len(history.messages)
    for i, msg in enumerate(history.messages):
        whole = SegmentSpan(msg.id, 0, len(msg.text))
        topical = False
        if msg.role == Role.SYSTEM:
            buckets[Region.SYSTEM_CONSTRAINTS].append(whole)
            topical = True
        for start, end in _line_spans(msg.text):
            line = msg.text[start:end]
            span = SegmentSpan(msg.id, start, end)
            for cue, region in (
                (_SAFETY_CUE_RE, Region.SAFETY_BOUNDARIES),
                (_DECISION_CUE_RE, Region.DECISIONS),
                (_OBLIGATION_CUE_RE, Region.SYSTEM_CONSTRAINTS),
                (_PREFERENCE_CUE_RE, Region.PREFERENCES),
                (_ARTIFACT_CUE_RE, Region.ARTIFACTS),
                (_QUESTION_CUE_RE, Region.OPEN_QUESTIONS),
            ):
                if cue.search(line) and span not in buckets[region]:
                    buckets[region].append(span)
                    topical = True
        if i >= n - recent_turns:
            buckets[Region.RECENT_TURNS].append(whole)
        if not topical:
            buckets[Region.GOALS].append(whole)
    return Segmentation({region: tuple(spans) for region, spans in buckets.items()})


# ---------------------------------------------------------------------------
# Rule-driven candidate extraction
# ---------------------------------------------------------------------------


#: Region an extracted candidate reports, keyed by its atom type.
_TYPE_REGION: dict[AtomType, Region] = {
    AtomType.GOAL: Region.GOALS,
    AtomType.CONSTRAINT: Region.SYSTEM_CONSTRAINTS,
    AtomType.DECISION: Region.DECISIONS,
    AtomType.PROCEDURE: Region.ARTIFACTS,
    AtomType.OUTPUT_CONTRACT: Region.ARTIFACTS,
    AtomType.ENTITY: Region.GOALS,
    AtomType.STATE: Region.GOALS,
    AtomType.PREFERENCE: Region.PREFERENCES,
    AtomType.OPEN_QUESTION: Region.OPEN_QUESTIONS,
    AtomType.SAFETY_BOUNDARY: Region.SAFETY_BOUNDARIES,
    AtomType.VERBATIM_SNIPPET: Region.RECENT_TURNS,
}


@dataclass(frozen=True)
class ExtractedCandidate:
    """One phrase-rule hit: the span text normalize_atom should see, the
    partial atom, and the region the hit belongs to."""

    span_text: str
    candidate: CandidateAtom
    region: Region


def _raw_value(rule: PhraseRule, match: re.Match) -> str | Value | None:
    if rule.value_from is not None:
        group, _, kind = rule.value_from.partition(":")
        raw = match.group(group)
        if kind == "int":
            return Value.of_int(int(raw))
        if kind == "decimal":
            return Value.of_decimal(raw if "." in raw else f"{raw}.0")
        if kind == "string":
            # bypass inference for values whose spelling is the commitment
            return Value.of_string(raw)
        if kind == "date":
            return Value.of_date(raw)
        return raw
    value = rule.value
    if value is None or isinstance(value, (str, Value)):
        return value
    if isinstance(value, bool):
        return Value.of_bool(value)
    if isinstance(value, int):
        return Value.of_int(value)
    if isinstance(value, float):
        return Value.of_decimal(repr(value))
    if isinstance(value, list):
        return Value.of_list([Value.of_enum(str(v)) for v in value])
    if isinstance(value, dict):
        # tagged forms ({"$set": [...]}) and plain maps both appear in rules
        if any(key.startswith("$") for key in value):
            return value_from_json(value)
        return Value.of_map({k: Value.of_enum(str(v)) for k, v in value.items()})
    raise TypeError(f"phrase rule value {value!r} has no atom value form")


_SNIPPET_TOKEN_RE = re.compile(r"[^a-z0-9_]+")


class RuleExtractor:
    """Deterministic extractor: the lexicon's phrase rules over each
    message, plus a low-confidence verbatim snippet for any message no
    rule touched (nothing leaves the pipeline unrepresented)."""

    def __init__(self, lex: Lexicon):
        self.lex = lex

    def extract(
        self, history: ChatHistory, seg: Segmentation | None = None
    ) -> tuple[ExtractedCandidate, ...]:
        seg = seg or segment(history)
        out: list[ExtractedCandidate] = []
        for msg in history.messages:
            hits = 0
            for rule in self.lex.phrase_rules:
                for match in rule.pattern.finditer(msg.text):
                    out.append(self._candidate(rule, match, msg))
                    hits += 1
            if hits == 0:
                out.append(self._snippet(msg, seg))
        return tuple(out)

    def _candidate(self, rule: PhraseRule, match: re.Match, msg: Message) -> ExtractedCandidate:
        start, end = match.span()
        evidence = Evidence(msg.id, span=(start, end), quote=match.group(0))
        candidate = CandidateAtom(
            surface_subject=rule.subject,
            raw_value=_raw_value(rule, match),
            type=rule.type,
            predicate_term=rule.predicate,
            modality=rule.modality,
            scope=rule.scope,
            field_hint=rule.subject,
            context=msg.text,
            evidence=evidence,
            criticality=rule.criticality,
            safety=rule.safety,
        )
        return ExtractedCandidate(match.group(0), candidate, _TYPE_REGION[rule.type])

    def _snippet(self, msg: Message, seg: Segmentation) -> ExtractedCandidate:
        evidence = Evidence(msg.id, span=(0, len(msg.text)), quote=msg.text)
        subject = _SNIPPET_TOKEN_RE.sub("_", msg.id.lower()).strip("_")
        candidate = CandidateAtom(
            surface_subject=subject,
            raw_value=" ".join(msg.text.split()),
            type=AtomType.VERBATIM_SNIPPET,
            predicate_term="quotes",
            modality=Modality.MAY,
            criticality=1,
            context=msg.text,
            evidence=evidence,
        )
        regions = seg.regions_of(msg.id)
        region = regions[0] if regions else Region.GOALS
        return ExtractedCandidate(msg.text, candidate, region)


# ---------------------------------------------------------------------------
# External extractor client
# ---------------------------------------------------------------------------


class ExtractorUnavailable(RuntimeError):
    """The external extractor could not produce a usable response."""


Transport = Callable[[dict], dict]


def url_transport(url: str, timeout: float) -> Transport:
    def send(payload: dict) -> dict:
        request = urllib.request.Request(
            url,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(request, timeout=timeout) as response:
                return json.loads(response.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ExtractorUnavailable(f"extractor at {url}: {exc}") from exc

    return send


def command_transport(argv: tuple[str, ...], timeout: float) -> Transport:
    def send(payload: dict) -> dict:
        try:
            proc = subprocess.run(
                list(argv),
                input=json.dumps(payload).encode("utf-8"),
                capture_output=True,
                timeout=timeout,
                check=True,
            )
            return json.loads(proc.stdout.decode("utf-8"))
        except (subprocess.SubprocessError, OSError, ValueError) as exc:
            raise ExtractorUnavailable(f"extractor command {argv[0]}: {exc}") from exc

    return send


@dataclass(frozen=True)
class ExternalExtractorClient:
    """Single-request client: messages plus lexicon version out, canonical
    atom records back.  Invalid records are rejected one at a time (the
    rest of the batch survives); transport errors surface as
    ExtractorUnavailable after the configured retries."""

    transport: Transport
    retries: int = 1

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "ExternalExtractorClient":
        timeout = float(config.get("timeout", 10.0))
        retries = int(config.get("retries", 1))
        if "url" in config:
            return cls(url_transport(config["url"], timeout), retries)
        if "command" in config:
            return cls(command_transport(tuple(config["command"]), timeout), retries)
        raise ValueError("extractor config needs a url or a command")

    def extract(self, history: ChatHistory, lexicon_version: str) -> tuple[Atom, ...]:
        payload = {
            "lexicon": lexicon_version,
            "messages": [
                {"id": m.id, "role": m.role.value, "text": m.text} for m in history
            ],
        }
        last: Exception | None = None
        for _attempt in range(max(1, self.retries)):
            try:
                response = self.transport(payload)
                break
            except ExtractorUnavailable as exc:
                last = exc
        else:
            raise last or ExtractorUnavailable("extractor gave no response")
        records = response.get("atoms")
        if not isinstance(records, list):
            raise ExtractorUnavailable("extractor response missing 'atoms' list")
        atoms: list[Atom] = []
        for i, record in enumerate(records):
            try:
                atom = atom_from_record(record)
            except (KeyError, TypeError, ValueError) as exc:
                log.warning("extractor record #%d rejected: %s", i, exc)
                continue
            result = validate(atom)
            if not result.ok:
                detail = "; ".join(f"{v.field}: {v.message}" for v in result.violations)
                log.warning("extractor record #%d rejected: %s", i, detail)
                continue
            atoms.append(atom)
        return tuple(atoms)


# ---------------------------------------------------------------------------
# Extraction entry point
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractionResult:
    atoms: tuple[Atom, ...]
    traces: tuple[NormalizationTrace, ...]
    candidates: tuple[ExtractedCandidate, ...]
    source: str  # "rules" or "external"
    warnings: tuple[str, ...] = field(default=())


def extract_atoms(
    history: ChatHistory,
    lex: Lexicon,
    *,
    client: ExternalExtractorClient | None = None,
    weights: ConfidenceWeights = ConfidenceWeights(),
) -> ExtractionResult:
    """Extract and normalize atoms for a history.

    With a client, the external records win; any client failure degrades
    to the rule extractor with a logged warning, so extraction always
    returns something.
    """
    if client is not None:
        try:
            atoms = client.extract(history, lex.version)
            return ExtractionResult(atoms, (), (), "external")
        except ExtractorUnavailable as exc:
            log.warning("external extractor failed, using rules: %s", exc)
            warning = f"external extractor failed: {exc}"
            result = extract_atoms(history, lex, weights=weights)
            return ExtractionResult(
                result.atoms, result.traces, result.candidates, "rules", (warning,)
            )
    seg = segment(history)
    candidates = RuleExtractor(lex).extract(history, seg)
    atoms: list[Atom] = []
    traces: list[NormalizationTrace] = []
    for item in candidates:
        source_text = None
        if item.candidate.evidence is not None:
            msg = history.get(item.candidate.evidence.source_id)
            source_text = msg.text if msg else None
        atom, trace = normalize_atom(
            item.span_text,
            item.candidate,
            lex,
            source_text=source_text,
            weights=weights,
        )
        atoms.append(atom)
        traces.append(trace)
    return ExtractionResult(tuple(atoms), tuple(traces), candidates, "rules")
