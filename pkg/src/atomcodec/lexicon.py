"""Versioned domain lexicons.

A lexicon is the single authority that turns surface language and CCL field
keys into canonical atom identities: subject/predicate alias tables with
negative examples, bounded value enums, scope defaults, the container map
between CCL field keys and atom identities, the min-profile abbreviation
table, value-generalization pairs (for weakening detection), and phrase
rules for the rule extractor.

Lexicons are immutable after load.  The loader rejects inconsistent files
(duplicate aliases, negative examples that shadow their own aliases,
duplicate container members) with diagnostics naming the file and entry.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .atoms import AtomType, Modality

_VERSION_RE = re.compile(r"(?P<label>[a-z0-9_]+)-(?P<serial>\d+)\Z")


class LexiconError(ValueError):
    """Lexicon file violates a structural invariant."""


@dataclass(frozen=True)
class LexEntry:
    """One canonical token with its surface aliases.

    ``negative_examples`` are surfaces that must never map to this
    canonical, even if they look similar.  ``conflict_rules`` document
    relations to other canonicals (advisory metadata, carried through).
    """

    canonical: str
    aliases: tuple[str, ...] = ()
    negative_examples: tuple[str, ...] = ()
    conflict_rules: tuple[tuple[str, str, str], ...] = ()


@dataclass(frozen=True)
class MemberSpec:
    """Atom identity for one container member (or one scalar field key)."""

    subject: str
    predicate: str
    type: AtomType = AtomType.CONSTRAINT
    scope: str | None = None
    modality: Modality = Modality.MUST
    criticality: int | None = None
    value_kind: str | None = None  # parse hint: bool/int/decimal/date/enum/string/list/map
    fixed_value: Any = None  # for facet tokens: the value this token denotes
    home: bool = True  # emission home when the same atom id decodes from several containers


@dataclass(frozen=True)
class ContainerSpec:
    """How one CCL field key maps to atoms.

    kind:
      scalar -- the whole entry value is one atom (TASK=..., DAYS=4)
      map    -- brace map; each pair is one atom (C={libs:false})
      flags  -- brace flag set; each flag is one boolean-true atom (PREF={...})
      facets -- dotted bare token; each facet is one atom (OUT=1html.run.codeonly)
    """

    key: str
    kind: str
    members: dict[str, MemberSpec] = field(default_factory=dict)
    scalar: MemberSpec | None = None
    template: MemberSpec | None = None  # open membership: subject = the member key itself
    scope: str | None = None

    def member_order(self) -> list[str]:
        return list(self.members)


@dataclass(frozen=True)
class MinRule:
    """One bidirectional CCL-Min abbreviation rule (see ccl module).

    kinds: literal (fixed min token <-> member+value), flag (min token <->
    boolean member), bool_suffix (member+0/1), prefix_int, prefix_number,
    dimension (NxM -> two int members), letters_list (SIR -> [S,I,R]),
    keyed_int (I0=5), fused_map (Sblue -> color.S=blue), fused_value
    (chartSIR -> chart:sir_counts), scalar_alias (whole-entry value alias),
    facet (min facet token <-> core facet token).
    """

    kind: str
    key: str  # core container key this rule belongs to
    min_token: str | None = None
    member: str | None = None
    value: Any = None
    prefix: str | None = None
    members: tuple[str, ...] = ()
    map_member: str | None = None
    letter_keys: tuple[str, ...] = ()
    value_map: dict[str, str] = field(default_factory=dict)
    core_value: str | None = None
    facet: str | None = None


@dataclass(frozen=True)
class PhraseRule:
    """Regex rule mapping a surface phrase to a (partial) atom.

    ``value_from`` names a regex group and a parse kind ("n:int"); when
    absent, ``value`` is the fixed decoded value.
    """

    pattern: re.Pattern
    type: AtomType
    subject: str
    predicate: str
    value: Any = None
    value_from: str | None = None
    modality: Modality = Modality.MUST
    scope: str | None = None
    criticality: int | None = None
    safety: bool = False


@dataclass(frozen=True)
class Lexicon:
    version: str
    domain: str
    subject_entries: tuple[LexEntry, ...]
    predicate_entries: tuple[LexEntry, ...]
    value_enums: dict[str, tuple[str, ...]]
    scope_defaults: dict[str, str]
    type_scopes: dict[str, str]
    containers: tuple[ContainerSpec, ...]
    min_keys: dict[str, str]  # min key -> core key
    min_rules: tuple[MinRule, ...]
    generalizations: tuple[tuple[str, str], ...]  # (specific, generalized)
    phrase_rules: tuple[PhraseRule, ...]
    negation_cues: tuple[str, ...]

    # -- lookups -------------------------------------------------------

    def subject_alias_index(self) -> dict[str, str]:
        return _alias_index(self.subject_entries)

    def predicate_alias_index(self) -> dict[str, str]:
        return _alias_index(self.predicate_entries)

    def container_by_key(self, key: str) -> ContainerSpec | None:
        for spec in self.containers:
            if spec.key == key:
                return spec
        return None

    def proper_tokens(self) -> frozenset[str]:
        """Tokens whose letter case is meaningful (enum values, facet values)."""
        tokens: set[str] = set()
        for values in self.value_enums.values():
            tokens.update(values)
        for spec in self.containers:
            for member in spec.members.values():
                if isinstance(member.fixed_value, str):
                    tokens.add(member.fixed_value)
        return frozenset(t for t in tokens if t.lower() != t)

    def generalization_pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset(self.generalizations)

    def is_generalization(self, specific: Any, general: Any) -> bool:
        return (str(specific), str(general)) in self.generalization_pairs()

    def min_rules_for(self, core_key: str) -> list[MinRule]:
        return [r for r in self.min_rules if r.key == core_key]

    def core_key_order(self) -> list[str]:
        return [spec.key for spec in self.containers]


def _alias_index(entries: Iterable[LexEntry]) -> dict[str, str]:
    index: dict[str, str] = {}
    for entry in entries:
        for alias in (entry.canonical, *entry.aliases):
            index[alias.lower()] = entry.canonical
    return index


DEFAULT_NEGATION_CUES = (
    "no", "not", "never", "without", "forbidden", "avoid", "avoided",
    "rejected", "don't", "dont", "doesn't", "won't", "shouldn't",
    "can't", "cannot", "mustn't", "forbid",
)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _parse_entries(raw: Any, where: str, path: str) -> tuple[LexEntry, ...]:
    entries = []
    for i, item in enumerate(raw or []):
        entries.append(
            LexEntry(
                canonical=item["canonical"],
                aliases=tuple(item.get("aliases", ())),
                negative_examples=tuple(item.get("negative_examples", ())),
                conflict_rules=tuple(tuple(rule) for rule in item.get("conflict_rules", ())),
            )
        )
    _check_entries(entries, where, path)
    return tuple(entries)


def _check_entries(entries: list[LexEntry], where: str, path: str) -> None:
    seen: dict[str, str] = {}
    for entry in entries:
        for alias in (entry.canonical, *entry.aliases):
            key = alias.lower()
            if key in seen and seen[key] != entry.canonical:
                raise LexiconError(
                    f"{path}: {where}: alias {alias!r} maps to both "
                    f"{seen[key]!r} and {entry.canonical!r}"
                )
            seen[key] = entry.canonical
        own = {a.lower() for a in (entry.canonical, *entry.aliases)}
        for negative in entry.negative_examples:
            if negative.lower() in own:
                raise LexiconError(
                    f"{path}: {where}: negative example {negative!r} matches "
                    f"an alias of {entry.canonical!r}"
                )


def _parse_member(raw: dict, path: str, key: str) -> MemberSpec:
    try:
        return MemberSpec(
            subject=raw.get("subject", "*"),
            predicate=raw["predicate"],
            type=AtomType(raw.get("type", "constraint")),
            scope=raw.get("scope"),
            modality=Modality(raw.get("modality", "must")),
            criticality=raw.get("criticality"),
            value_kind=raw.get("value_kind"),
            fixed_value=raw.get("fixed_value"),
            home=raw.get("home", True),
        )
    except (KeyError, ValueError) as exc:
        raise LexiconError(f"{path}: container {key!r}: bad member spec: {exc}") from exc


def _parse_containers(raw: Any, path: str) -> tuple[ContainerSpec, ...]:
    containers = []
    seen_keys: set[str] = set()
    for item in raw or []:
        key = item["key"]
        if key in seen_keys:
            raise LexiconError(f"{path}: duplicate container key {key!r}")
        seen_keys.add(key)
        kind = item.get("kind", "map")
        if kind not in ("scalar", "map", "flags", "facets"):
            raise LexiconError(f"{path}: container {key!r}: unknown kind {kind!r}")
        members = {}
        for name, spec in item.get("members", {}).items():
            if name in members:
                raise LexiconError(f"{path}: container {key!r}: duplicate member {name!r}")
            members[name] = _parse_member(spec, path, key)
        scalar = _parse_member(item["scalar"], path, key) if "scalar" in item else None
        if kind == "scalar" and scalar is None:
            raise LexiconError(f"{path}: container {key!r}: scalar kind needs a scalar spec")
        template = _parse_member(item["template"], path, key) if "template" in item else None
        containers.append(
            ContainerSpec(
                key=key, kind=kind, members=members, scalar=scalar,
                template=template, scope=item.get("scope"),
            )
        )
    return tuple(containers)


def _parse_min_rules(raw: Any, path: str) -> tuple[MinRule, ...]:
    rules = []
    for item in raw or []:
        try:
            rules.append(
                MinRule(
                    kind=item["kind"],
                    key=item["key"],
                    min_token=item.get("min_token"),
                    member=item.get("member"),
                    value=item.get("value"),
                    prefix=item.get("prefix"),
                    members=tuple(item.get("members", ())),
                    map_member=item.get("map_member"),
                    letter_keys=tuple(item.get("letter_keys", ())),
                    value_map=dict(item.get("value_map", {})),
                    core_value=item.get("core_value"),
                    facet=item.get("facet"),
                )
            )
        except KeyError as exc:
            raise LexiconError(f"{path}: min rule missing field {exc}") from exc
    return tuple(rules)


def _parse_phrase_rules(raw: Any, path: str) -> tuple[PhraseRule, ...]:
    rules = []
    for i, item in enumerate(raw or []):
        try:
            rules.append(
                PhraseRule(
                    pattern=re.compile(item["pattern"], re.IGNORECASE if item.get("ignore_case", True) else 0),
                    type=AtomType(item["type"]),
                    subject=item["subject"],
                    predicate=item["predicate"],
                    value=item.get("value"),
                    value_from=item.get("value_from"),
                    modality=Modality(item.get("modality", "must")),
                    scope=item.get("scope"),
                    criticality=item.get("criticality"),
                    safety=item.get("safety", False),
                )
            )
        except (KeyError, ValueError, re.error) as exc:
            raise LexiconError(f"{path}: phrase rule #{i}: {exc}") from exc
    return tuple(rules)


def lexicon_from_dict(data: dict, path: str = "<memory>") -> Lexicon:
    if "version" not in data:
        raise LexiconError(f"{path}: missing version")
    lex = Lexicon(
        version=data["version"],
        domain=data.get("domain", "task"),
        subject_entries=_parse_entries(data.get("subject_entries"), "subject_entries", path),
        predicate_entries=_parse_entries(data.get("predicate_entries"), "predicate_entries", path),
        value_enums={k: tuple(v) for k, v in data.get("value_enums", {}).items()},
        scope_defaults=dict(data.get("scope_defaults", {})),
        type_scopes=dict(data.get("type_scopes", {})),
        containers=_parse_containers(data.get("containers"), path),
        min_keys=dict(data.get("min_keys", {})),
        min_rules=_parse_min_rules(data.get("min_rules"), path),
        generalizations=tuple((a, b) for a, b in data.get("generalizations", ())),
        phrase_rules=_parse_phrase_rules(data.get("phrase_rules"), path),
        negation_cues=tuple(data.get("negation_cues", DEFAULT_NEGATION_CUES)),
    )
    _check_min_keys(lex, path)
    _check_homes(lex, path)
    return lex


def _check_min_keys(lex: Lexicon, path: str) -> None:
    core_keys = {spec.key for spec in lex.containers}
    for min_key, core_key in lex.min_keys.items():
        if core_key not in core_keys:
            raise LexiconError(f"{path}: min key {min_key!r} targets unknown container {core_key!r}")
    for rule in lex.min_rules:
        if rule.key not in core_keys:
            raise LexiconError(f"{path}: min rule targets unknown container {rule.key!r}")


def _check_homes(lex: Lexicon, path: str) -> None:
    """The same atom id may decode from several containers, but exactly one
    container member may be its emission home."""
    homes: dict[tuple, str] = {}
    for spec in lex.containers:
        specs = list(spec.members.values()) + ([spec.scalar] if spec.scalar else [])
        for member in specs:
            if not member.home:
                continue
            ident = (member.type.value, member.subject, member.predicate)
            owner = f"{spec.key}"
            if ident in homes and homes[ident] != owner:
                raise LexiconError(
                    f"{path}: atom {'/'.join(ident)} has two emission homes: "
                    f"{homes[ident]} and {owner}"
                )
            homes.setdefault(ident, owner)


def load_lexicon(path: str | Path) -> Lexicon:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LexiconError(f"{p}: not valid JSON: {exc}") from exc
    return lexicon_from_dict(data, str(p))


def check_version_lineage(old: str, new: str) -> bool:
    """True iff ``new`` is a later (or equal) version of the same lineage.

    Versions look like "epidemic-3": a label plus a monotonically
    increasing serial.  Different labels are different lineages (always
    acceptable); same label requires a non-decreasing serial.
    """
    m_old, m_new = _VERSION_RE.match(old), _VERSION_RE.match(new)
    if not m_old or not m_new:
        raise LexiconError(f"unparseable version: {old!r} or {new!r}")
    if m_old.group("label") != m_new.group("label"):
        return True
    return int(m_new.group("serial")) >= int(m_old.group("serial"))
