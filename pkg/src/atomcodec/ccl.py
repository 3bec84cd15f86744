"""Compact commitment notation: parser, emitter, and atom conversion.

The notation has two profiles sharing one header scheme:

* core ("@CCL/1"): one ``KEY=value`` entry per line.  Values are bare
  tokens, numbers, quoted strings, ``[a,b]`` lists, ``{k:v,flag}`` maps,
  or ``src->dst`` arrows.  Over-long map entries soft-wrap inside the
  braces with the continuation aligned one column past the ``{``.
* min ("@CCL/1m"): whitespace-separated abbreviated entries
  (``G=80x50,c8``), expanded through the lexicon's versioned
  abbreviation rules.  Unknown abbreviations are decode errors, never
  guesses.

Documents are immutable; parsing and emission are pure and
deterministic, so emitted bytes are stable across calls.  A document
without a header line (as in pasted state traces) parses as the core
profile with ``header_present=False`` and re-emits without a header.

Conversion to and from canonical atoms is lexicon-driven: container
specs map field keys to atom identities, and the same mapping is run in
both directions so the decode of an encode is atom-equivalent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping

from .atoms import (
    Atom,
    AtomId,
    AtomType,
    Evidence,
    Value,
    ValueKind,
    atom_id,
    value_equiv,
)
from .lexicon import ContainerSpec, Lexicon, MemberSpec, MinRule
from .normalize import Polarity, assign_scope, default_criticality
from .scoring import RenderDecision

# Emitted lines never exceed this width.  The value is pinned by the
# published listings: a 71-column min line and a 72-column core entry
# both wrap, while 70-column lines do not.
MAX_LINE_WIDTH = 70

KEY_RE = re.compile(r"[A-Z][A-Z0-9_]*\Z")
_TOKEN_BODY = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_."
_ITEM_KEY_RE = re.compile(r"[A-Za-z0-9_]+\Z")
_FLAG_RE = re.compile(r"[A-Za-z0-9_.]+\Z")
_TOKEN_RE = re.compile(r"[A-Za-z0-9_.]+\Z")
_NUMBER_RE = re.compile(r"-?(?:\d+(?:\.\d+)?|\.\d+)\Z", re.ASCII)
_HEADER_RE = re.compile(r"@CCL/(?P<version>\d+)(?P<min>m?)\Z", re.ASCII)
_DIMENSION_RE = re.compile(r"(\d+)x(\d+)\Z", re.ASCII)
_LETTERS_RE = re.compile(r"[A-Z]{2,}\Z")


class Profile(str, Enum):
    CORE = "core"
    MIN = "min"


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class CclError(ValueError):
    """Base for notation errors; carries an optional source location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class CclSyntaxError(CclError):
    """Lexical or structural problem in the text."""


class CclHeaderError(CclError):
    """Missing, malformed, or unsupported header."""


class CclDuplicateKeyError(CclError):
    """The same field key appears twice in one document."""


class CclDecodeError(CclError):
    """Document cannot be converted to atoms under the given lexicon."""

    def __init__(self, message: str, *, key: str | None = None, token: str | None = None):
        self.key = key
        self.token = token
        super().__init__(message)


class CclEmitError(CclError):
    """Document or atom set cannot be emitted in the requested profile."""


# ---------------------------------------------------------------------------
# Document model
# ---------------------------------------------------------------------------


class CclKind(str, Enum):
    TOKEN = "token"
    STRING = "string"
    NUMBER = "number"
    BOOL = "bool"
    LIST = "list"
    MAP = "map"
    ARROW = "arrow"


def _printable_ascii(text: str) -> bool:
    return all(0x20 <= ord(ch) <= 0x7E for ch in text)


@dataclass(frozen=True)
class MapItem:
    """One map member: a bare flag (``walkable``) or a ``key:value`` pair."""

    key: str
    value: "CclValue | None" = None

    def __post_init__(self):
        if self.value is None:
            if not _FLAG_RE.match(self.key):
                raise ValueError(f"malformed flag token: {self.key!r}")
        elif not _ITEM_KEY_RE.match(self.key):
            raise ValueError(f"malformed map key: {self.key!r}")

    @property
    def is_flag(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class CclValue:
    """Tagged notation value.  Number lexemes are preserved verbatim so
    values like ``.08`` survive a parse/emit round trip byte-for-byte."""

    kind: CclKind
    text: str = ""
    flag: bool = False
    items: tuple["CclValue", ...] = ()
    pairs: tuple[MapItem, ...] = ()

    @classmethod
    def token(cls, text: str) -> "CclValue":
        if not _TOKEN_RE.match(text) or text in ("true", "false") or _NUMBER_RE.match(text):
            raise ValueError(f"not a bare token: {text!r} (use a typed constructor)")
        return cls(CclKind.TOKEN, text=text)

    @classmethod
    def string(cls, text: str) -> "CclValue":
        if not _printable_ascii(text):
            raise ValueError(f"string not printable ASCII: {text!r}")
        return cls(CclKind.STRING, text=text)

    @classmethod
    def number(cls, lexeme: str) -> "CclValue":
        if not _NUMBER_RE.match(lexeme):
            raise ValueError(f"not a number lexeme: {lexeme!r}")
        return cls(CclKind.NUMBER, text=lexeme)

    @classmethod
    def boolean(cls, flag: bool) -> "CclValue":
        return cls(CclKind.BOOL, flag=bool(flag))

    @classmethod
    def list_of(cls, items: Iterable["CclValue"]) -> "CclValue":
        return cls(CclKind.LIST, items=tuple(items))

    @classmethod
    def map_of(cls, items: Iterable) -> "CclValue":
        pairs = []
        for item in items:
            if isinstance(item, MapItem):
                pairs.append(item)
            elif isinstance(item, str):
                pairs.append(MapItem(item))
            else:
                key, value = item
                pairs.append(MapItem(key, value))
        return cls(CclKind.MAP, pairs=tuple(pairs))

    @classmethod
    def arrow(cls, source: "CclValue", target: "CclValue") -> "CclValue":
        if source.kind not in (CclKind.TOKEN, CclKind.LIST, CclKind.NUMBER):
            raise ValueError("arrow source must be a token, number, or list")
        if target.kind not in (CclKind.TOKEN, CclKind.NUMBER):
            raise ValueError("arrow target must be a token or number")
        return cls(CclKind.ARROW, items=(source, target))


@dataclass(frozen=True)
class CclHeader:
    version: int = 1
    profile: Profile = Profile.CORE

    def __post_init__(self):
        if self.version != 1:
            raise CclHeaderError(f"unsupported notation version: {self.version}")

    def render(self) -> str:
        return f"@CCL/{self.version}" + ("m" if self.profile == Profile.MIN else "")


@dataclass(frozen=True)
class CclEntry:
    key: str
    value: CclValue

    def __post_init__(self):
        if not KEY_RE.match(self.key):
            raise ValueError(f"malformed field key: {self.key!r}")


@dataclass(frozen=True)
class CclDocument:
    header: CclHeader = CclHeader()
    entries: tuple[CclEntry, ...] = ()
    header_present: bool = True

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if entry.key in seen:
                raise CclDuplicateKeyError(f"duplicate field key {entry.key!r}")
            seen.add(entry.key)

    @property
    def profile(self) -> Profile:
        return self.header.profile

    def keys(self) -> list[str]:
        return [entry.key for entry in self.entries]

    def entry(self, key: str) -> CclEntry | None:
        for entry in self.entries:
            if entry.key == key:
                return entry
        return None


@dataclass(frozen=True)
class RawSpan:
    """One evidence quote carried alongside the rendered document."""

    atom_id: AtomId
    evidence: Evidence | None
    decision: RenderDecision


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    column = pos - text.rfind("\n", 0, pos)
    return line, column


def _syntax_error(text: str, pos: int, message: str) -> CclSyntaxError:
    return CclSyntaxError(message, *_line_col(text, min(pos, len(text))))


def parse_ccl(text: str) -> CclDocument:
    """Parse either profile.  Headerless text parses as core with
    ``header_present=False``; whitespace between entries is insignificant;
    an entry may span lines inside braces or brackets."""
    text = text.replace("\r\n", "\n")
    for i, ch in enumerate(text):
        code = ord(ch)
        if code > 0x7E or (code < 0x20 and ch not in "\t\n"):
            raise _syntax_error(text, i, f"non-ASCII or control character {ch!r}")

    pos = 0
    n = len(text)
    while pos < n and text[pos] in " \t\n":
        pos += 1
    header = CclHeader()
    header_present = False
    if pos < n and text[pos] == "@":
        start = pos
        while pos < n and text[pos] not in " \t\n":
            pos += 1
        match = _HEADER_RE.match(text[start:pos])
        if not match:
            raise CclHeaderError(
                f"malformed header {text[start:pos]!r}", *_line_col(text, start)
            )
        version = int(match.group("version"))
        if version != 1:
            raise CclHeaderError(
                f"unsupported notation version: {version}", *_line_col(text, start)
            )
        profile = Profile.MIN if match.group("min") else Profile.CORE
        header = CclHeader(version, profile)
        header_present = True
        if profile == Profile.CORE:
            while pos < n and text[pos] in " \t":
                pos += 1
            if pos < n and text[pos] != "\n":
                raise _syntax_error(text, pos, "core entries start on a new line")

    if header.profile == Profile.MIN:
        entries = _parse_min_entries(text, pos)
    else:
        entries = _parse_core_entries(text, pos)
    return CclDocument(header, entries, header_present)


def _parse_core_entries(text: str, pos: int) -> tuple[CclEntry, ...]:
    entries: list[CclEntry] = []
    seen: dict[str, int] = {}
    n = len(text)
    while True:
        while pos < n and text[pos] in " \t\n":
            pos += 1
        if pos >= n:
            break
        start = pos
        while pos < n and text[pos] in _TOKEN_BODY:
            pos += 1
        key = text[start:pos]
        if not KEY_RE.match(key):
            raise _syntax_error(text, start, f"malformed field key {key!r}")
        if pos >= n or text[pos] != "=":
            raise _syntax_error(text, pos, f"expected '=' after field key {key!r}")
        pos += 1
        value, pos = _scan_value(text, pos, depth=0)
        if pos < n and text[pos] not in " \t\n":
            raise _syntax_error(text, pos, f"unexpected character {text[pos]!r} after entry")
        if key in seen:
            raise CclDuplicateKeyError(
                f"duplicate field key {key!r}", *_line_col(text, start)
            )
        seen[key] = start
        entries.append(CclEntry(key, value))
    return tuple(entries)


def _scan_value(text: str, pos: int, depth: int) -> tuple[CclValue, int]:
    n = len(text)
    if depth > 0:
        while pos < n and text[pos] in " \t\n":
            pos += 1
    if pos >= n:
        raise _syntax_error(text, pos, "expected a value")
    ch = text[pos]
    if ch == '"':
        value, pos = _scan_string(text, pos)
    elif ch == "{":
        value, pos = _scan_map(text, pos, depth)
    elif ch == "[":
        value, pos = _scan_list(text, pos, depth)
    else:
        value, pos = _scan_atom(text, pos)
    if text.startswith("->", pos):
        if value.kind not in (CclKind.TOKEN, CclKind.LIST, CclKind.NUMBER):
            raise _syntax_error(text, pos, "arrow source must be a token, number, or list")
        target, pos = _scan_atom(text, pos + 2)
        if target.kind not in (CclKind.TOKEN, CclKind.NUMBER):
            raise _syntax_error(text, pos, "arrow target must be a token or number")
        if text.startswith("->", pos):
            raise _syntax_error(text, pos, "chained arrows are not allowed")
        value = CclValue.arrow(value, target)
    return value, pos


def _scan_atom(text: str, pos: int) -> tuple[CclValue, int]:
    n = len(text)
    start = pos
    if pos < n and text[pos] == "-" and not text.startswith("->", pos):
        pos += 1
    while pos < n and text[pos] in _TOKEN_BODY:
        pos += 1
    lexeme = text[start:pos]
    if not lexeme:
        raise _syntax_error(text, start, "expected a value")
    if lexeme in ("true", "false"):
        return CclValue.boolean(lexeme == "true"), pos
    if _NUMBER_RE.match(lexeme):
        return CclValue(CclKind.NUMBER, text=lexeme), pos
    if _TOKEN_RE.match(lexeme):
        return CclValue(CclKind.TOKEN, text=lexeme), pos
    raise _syntax_error(text, start, f"malformed value token {lexeme!r}")


def _scan_string(text: str, pos: int) -> tuple[CclValue, int]:
    n = len(text)
    start = pos
    pos += 1
    out: list[str] = []
    while pos < n:
        ch = text[pos]
        if ch == '"':
            return CclValue(CclKind.STRING, text="".join(out)), pos + 1
        if ch == "\n":
            break
        if ch == "\\":
            if pos + 1 < n and text[pos + 1] in ('"', "\\"):
                out.append(text[pos + 1])
                pos += 2
                continue
            raise _syntax_error(text, pos, "unsupported string escape")
        out.append(ch)
        pos += 1
    raise _syntax_error(text, start, "unterminated string")


def _scan_list(text: str, pos: int, depth: int) -> tuple[CclValue, int]:
    n = len(text)
    open_pos = pos
    pos += 1
    items: list[CclValue] = []
    while True:
        while pos < n and text[pos] in " \t\n":
            pos += 1
        if pos >= n:
            raise _syntax_error(text, open_pos, "unbalanced '['")
        if text[pos] == "]":
            return CclValue(CclKind.LIST, items=tuple(items)), pos + 1
        if items:
            if text[pos] != ",":
                raise _syntax_error(text, pos, "expected ',' or ']' in list")
            pos += 1
        item, pos = _scan_value(text, pos, depth + 1)
        items.append(item)


def _scan_map(text: str, pos: int, depth: int) -> tuple[CclValue, int]:
    n = len(text)
    open_pos = pos
    pos += 1
    pairs: list[MapItem] = []
    while True:
        while pos < n and text[pos] in " \t\n":
            pos += 1
        if pos >= n:
            raise _syntax_error(text, open_pos, "unbalanced '{'")
        if text[pos] == "}":
            return CclValue(CclKind.MAP, pairs=tuple(pairs)), pos + 1
        if pairs:
            if text[pos] != ",":
                raise _syntax_error(text, pos, "expected ',' or '}' in map")
            pos += 1
            while pos < n and text[pos] in " \t\n":
                pos += 1
        start = pos
        while pos < n and text[pos] in _TOKEN_BODY:
            pos += 1
        name = text[start:pos]
        if not name:
            raise _syntax_error(text, start, "expected a map flag or key")
        if pos < n and text[pos] == ":":
            if not _ITEM_KEY_RE.match(name):
                raise _syntax_error(text, start, f"malformed map key {name!r}")
            value, pos = _scan_value(text, pos + 1, depth + 1)
            pairs.append(MapItem(name, value))
        elif pos < n and text[pos] in ",}":
            if not _FLAG_RE.match(name):
                raise _syntax_error(text, start, f"malformed flag token {name!r}")
            pairs.append(MapItem(name))
        else:
            raise _syntax_error(
                text, pos, "map items must be bare flags or key:value pairs"
            )


def _parse_min_entries(text: str, pos: int) -> tuple[CclEntry, ...]:
    entries: list[CclEntry] = []
    seen: set[str] = set()
    for match in re.finditer(r"\S+", text[pos:]):
        chunk = match.group()
        at = pos + match.start()
        key, eq, raw = chunk.partition("=")
        if not eq or not KEY_RE.match(key):
            raise _syntax_error(text, at, f"malformed min entry {chunk!r}")
        if not raw:
            raise _syntax_error(text, at, f"empty min entry {chunk!r}")
        if key in seen:
            raise CclDuplicateKeyError(f"duplicate field key {key!r}", *_line_col(text, at))
        seen.add(key)
        tokens = _split_min_tokens(raw, text, at + len(key) + 1)
        value = CclValue(
            CclKind.LIST, items=tuple(CclValue(CclKind.TOKEN, text=t) for t in tokens)
        )
        entries.append(CclEntry(key, value))
    return tuple(entries)


def _split_min_tokens(raw: str, text: str, base: int) -> list[str]:
    """Split a min entry value on commas outside brackets, braces, and
    quotes; abbreviated tokens may themselves contain '=' (``I0=5``)."""
    tokens: list[str] = []
    depth = 0
    quoted = False
    current: list[str] = []
    for i, ch in enumerate(raw):
        if quoted:
            current.append(ch)
            if ch == '"' and raw[i - 1] != "\\":
                quoted = False
            continue
        if ch == '"':
            quoted = True
            current.append(ch)
        elif ch in "[{":
            depth += 1
            current.append(ch)
        elif ch in "]}":
            depth -= 1
            if depth < 0:
                raise _syntax_error(text, base + i, "unbalanced delimiter in min entry")
            current.append(ch)
        elif ch == "," and depth == 0:
            if not current:
                raise _syntax_error(text, base + i, "empty min token")
            tokens.append("".join(current))
            current = []
        else:
            current.append(ch)
    if depth != 0 or quoted:
        raise _syntax_error(text, base, "unbalanced delimiter in min entry")
    if not current:
        raise _syntax_error(text, base + len(raw) - 1, "empty min token")
    tokens.append("".join(current))
    return tokens


def parse_value_text(text: str) -> CclValue:
    """Parse one standalone core value (no key, no header)."""
    value, pos = _scan_value(text, 0, depth=0)
    if text[pos:].strip():
        raise _syntax_error(text, pos, "trailing characters after value")
    return value


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def render_value(value: CclValue) -> str:
    """Render one value with no spaces; nested content stays inline."""
    if value.kind in (CclKind.TOKEN, CclKind.NUMBER):
        return value.text
    if value.kind == CclKind.BOOL:
        return "true" if value.flag else "false"
    if value.kind == CclKind.STRING:
        body = value.text.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{body}"'
    if value.kind == CclKind.LIST:
        return "[" + ",".join(render_value(v) for v in value.items) + "]"
    if value.kind == CclKind.MAP:
        return "{" + ",".join(_render_item(item) for item in value.pairs) + "}"
    if value.kind == CclKind.ARROW:
        source, target = value.items
        return f"{render_value(source)}->{render_value(target)}"
    raise AssertionError(f"unhandled kind {value.kind}")


def _render_item(item: MapItem) -> str:
    if item.is_flag:
        return item.key
    return f"{item.key}:{render_value(item.value)}"


def _balanced_lines(chunks: list[str], indent: int, sep: str) -> list[list[str]]:
    """Pack chunks onto the fewest lines of at most MAX_LINE_WIDTH columns,
    then balance: among minimal packings, minimize the widest line,
    breaking ties toward earlier break points.  A chunk wider than the
    limit gets its own (over-long) line."""
    widths = [len(c) for c in chunks]
    sep_w = len(sep)

    def line_width(i: int, j: int) -> int:
        return indent + sum(widths[i:j]) + sep_w * (j - i - 1)

    lines = 1
    current = indent + widths[0]
    for w in widths[1:]:
        if current + sep_w + w > MAX_LINE_WIDTH:
            lines += 1
            current = indent + w
        else:
            current += sep_w + w
    if lines == 1:
        return [chunks]

    n = len(chunks)
    infeasible = (float("inf"), ())
    best: list[list[tuple]] = [
        [infeasible] * (lines + 1) for _ in range(n + 1)
    ]
    best[0][0] = (0, ())
    for j in range(1, n + 1):
        for parts in range(1, lines + 1):
            for i in range(parts - 1, j):
                prev = best[i][parts - 1]
                if prev[0] == float("inf"):
                    continue
                candidate = (max(prev[0], line_width(i, j)), prev[1] + (i,))
                if candidate < best[j][parts]:
                    best[j][parts] = candidate
    breaks = list(best[n][lines][1][1:]) + [n]
    grouped = []
    start = 0
    for stop in breaks:
        grouped.append(chunks[start:stop])
        start = stop
    return grouped


def _emit_entry_core(entry: CclEntry) -> list[str]:
    flat = f"{entry.key}={render_value(entry.value)}"
    if len(flat) <= MAX_LINE_WIDTH or entry.value.kind != CclKind.MAP:
        return [flat]
    prefix = f"{entry.key}={{"
    segments = [_render_item(item) + "," for item in entry.value.pairs]
    segments[-1] = segments[-1][:-1] + "}"
    groups = _balanced_lines(segments, indent=len(prefix), sep="")
    lines = [prefix + "".join(groups[0])]
    lines.extend(" " * len(prefix) + "".join(group) for group in groups[1:])
    return lines


def emit_ccl(doc: CclDocument, profile: Profile | str | None = None) -> str:
    """Serialize a document.  Same document, same bytes.  The profile
    defaults to the document's own; converting between profiles happens
    at the atom level, not here."""
    want = doc.profile if profile is None else Profile(profile)
    if want != doc.profile:
        raise CclEmitError(
            f"document is {doc.profile.value}-profile; convert via atoms to emit {want.value}"
        )
    if doc.profile == Profile.MIN:
        out = _emit_min(doc)
    else:
        out = _emit_core(doc)
    bad = next((ch for ch in out if not (0x20 <= ord(ch) <= 0x7E or ch == "\n")), None)
    if bad is not None:
        raise CclEmitError(f"emission produced a non-ASCII character: {bad!r}")
    return out


def _emit_core(doc: CclDocument) -> str:
    lines: list[str] = []
    if doc.header_present:
        lines.append(doc.header.render())
    for entry in doc.entries:
        lines.extend(_emit_entry_core(entry))
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


def _min_chunk(entry: CclEntry) -> str:
    value = entry.value
    if value.kind == CclKind.LIST and all(v.kind == CclKind.TOKEN for v in value.items):
        body = ",".join(v.text for v in value.items)
    else:
        body = render_value(value)
    return f"{entry.key}={body}"


def _emit_min(doc: CclDocument) -> str:
    chunks: list[str] = []
    if doc.header_present:
        chunks.append(doc.header.render())
    chunks.extend(_min_chunk(entry) for entry in doc.entries)
    if not chunks:
        return ""
    groups = _balanced_lines(chunks, indent=0, sep=" ")
    return "\n".join(" ".join(group) for group in groups) + "\n"


def rejoin_core(text: str) -> str:
    """Undo core soft-wrapping: continuation lines (leading spaces) are
    glued back onto the previous line."""
    lines: list[str] = []
    for line in text.split("\n"):
        if line[:1] == " " and lines:
            lines[-1] += line.lstrip(" ")
        else:
            lines.append(line)
    return "\n".join(lines)


def rejoin_min(text: str) -> str:
    """Undo min soft-wrapping: the document is one space-joined stream."""
    return " ".join(text.split())


def rejoin_wrapped(text: str) -> str:
    stripped = text.lstrip()
    if stripped.startswith("@CCL/") and stripped.split(None, 1)[0].endswith("m"):
        return rejoin_min(text)
    return rejoin_core(text)


# ---------------------------------------------------------------------------
# Plain-data view (the canonical grouped-state record)
# ---------------------------------------------------------------------------


def plain_value(value: CclValue) -> Any:
    """JSON-ready view of a value: flag sets become arrays, maps become
    objects, number lexemes become int/float."""
    if value.kind == CclKind.TOKEN or value.kind == CclKind.STRING:
        return value.text
    if value.kind == CclKind.NUMBER:
        return int(value.text) if re.fullmatch(r"-?\d+", value.text) else float(value.text)
    if value.kind == CclKind.BOOL:
        return value.flag
    if value.kind == CclKind.LIST:
        return [plain_value(v) for v in value.items]
    if value.kind == CclKind.MAP:
        # empty braces read as an empty flag set, matching diff semantics
        if all(item.is_flag for item in value.pairs):
            return [item.key for item in value.pairs]
        return {
            item.key: (True if item.is_flag else plain_value(item.value))
            for item in value.pairs
        }
    if value.kind == CclKind.ARROW:
        source, target = value.items
        return {"from": plain_value(source), "to": plain_value(target)}
    raise AssertionError(f"unhandled kind {value.kind}")


def doc_to_state(doc: CclDocument) -> dict[str, Any]:
    return {entry.key: plain_value(entry.value) for entry in doc.entries}


# ---------------------------------------------------------------------------
# Notation values <-> atom values
# ---------------------------------------------------------------------------


def _token_safe(text: str) -> bool:
    return bool(
        _TOKEN_RE.match(text)
        and text not in ("true", "false")
        and not _NUMBER_RE.match(text)
    )


def ccl_from_value(value: Value) -> CclValue:
    if value.kind == ValueKind.BOOL:
        return CclValue.boolean(value.data)
    if value.kind == ValueKind.INT:
        return CclValue.number(str(value.data))
    if value.kind == ValueKind.DECIMAL:
        return CclValue.number(value.data)
    if value.kind == ValueKind.DATE:
        return CclValue.string(value.data)
    if value.kind in (ValueKind.ENUM, ValueKind.STRING):
        if _token_safe(value.data):
            return CclValue(CclKind.TOKEN, text=value.data)
        return CclValue.string(value.data)
    if value.kind in (ValueKind.LIST, ValueKind.SET):
        return CclValue.list_of(ccl_from_value(v) for v in value.data)
    if value.kind == ValueKind.MAP:
        return CclValue.map_of((k, ccl_from_value(v)) for k, v in value.data)
    if value.kind == ValueKind.ARROW:
        source, target = value.data
        return CclValue.arrow(ccl_from_value(source), ccl_from_value(target))
    raise AssertionError(f"unhandled kind {value.kind}")


def value_from_ccl(cv: CclValue, kind_hint: str | None = None) -> Value:
    if cv.kind == CclKind.BOOL:
        return Value.of_bool(cv.flag)
    if cv.kind == CclKind.NUMBER:
        if re.fullmatch(r"-?\d+", cv.text):
            return Value.of_int(int(cv.text))
        return Value.of_decimal(cv.text)
    if cv.kind == CclKind.TOKEN:
        if kind_hint == "date":
            return Value.of_date(cv.text)
        if kind_hint == "string":
            return Value.of_string(cv.text)
        return Value.of_enum(cv.text)
    if cv.kind == CclKind.STRING:
        if kind_hint == "date":
            return Value.of_date(cv.text)
        return Value.of_string(cv.text)
    if cv.kind == CclKind.LIST:
        items = (value_from_ccl(v) for v in cv.items)
        return Value.of_set(items) if kind_hint == "set" else Value.of_list(items)
    if cv.kind == CclKind.MAP:
        return Value.of_map(
            (item.key, Value.of_bool(True) if item.is_flag else value_from_ccl(item.value))
            for item in cv.pairs
        )
    if cv.kind == CclKind.ARROW:
        source, target = cv.items
        return Value.of_arrow(value_from_ccl(source), value_from_ccl(target))
    raise AssertionError(f"unhandled kind {cv.kind}")


def _fixed_value(member: MemberSpec) -> Value:
    raw = member.fixed_value
    if raw is None or raw is True:
        return Value.of_bool(True)
    if raw is False:
        return Value.of_bool(False)
    if isinstance(raw, int):
        return Value.of_int(raw)
    if isinstance(raw, str):
        return Value.of_string(raw) if member.value_kind == "string" else Value.of_enum(raw)
    raise CclDecodeError(f"unsupported fixed value {raw!r}")


# ---------------------------------------------------------------------------
# Document -> atoms
# ---------------------------------------------------------------------------


def _decoded_atom(
    member: MemberSpec,
    subject: str,
    value: Value,
    container: ContainerSpec,
    lex: Lexicon,
) -> Atom:
    atom_type = member.type
    scope = assign_scope(member.scope or container.scope, atom_type, None, lex)
    criticality = member.criticality or default_criticality(
        atom_type, value, Polarity.AFFIRMED
    )
    return Atom(
        type=atom_type,
        subject=subject,
        predicate=member.predicate,
        value=value,
        modality=member.modality,
        scope=scope,
        criticality=criticality,
        safety=atom_type == AtomType.SAFETY_BOUNDARY,
    )


def _member_for(
    container: ContainerSpec, name: str, key: str
) -> tuple[MemberSpec, str]:
    member = container.members.get(name)
    if member is not None:
        return member, member.subject
    if container.template is not None:
        return container.template, name
    raise CclDecodeError(
        f"unknown member {name!r} in field {key!r}", key=key, token=name
    )


def _decode_core_entry(entry: CclEntry, container: ContainerSpec, lex: Lexicon) -> list[Atom]:
    atoms: list[Atom] = []
    if container.kind == "scalar":
        member = container.scalar
        value = value_from_ccl(entry.value, member.value_kind)
        atoms.append(_decoded_atom(member, member.subject, value, container, lex))
        return atoms
    if container.kind == "facets":
        if entry.value.kind != CclKind.TOKEN:
            raise CclDecodeError(
                f"field {entry.key!r} expects a dotted facet token", key=entry.key
            )
        for facet in entry.value.text.split("."):
            member = container.members.get(facet)
            if member is None:
                raise CclDecodeError(
                    f"unknown facet {facet!r} in field {entry.key!r}",
                    key=entry.key,
                    token=facet,
                )
            atoms.append(
                _decoded_atom(member, member.subject, _fixed_value(member), container, lex)
            )
        return atoms
    # map and flags kinds share item semantics: a bare flag is the
    # member with boolean true
    if entry.value.kind != CclKind.MAP:
        raise CclDecodeError(
            f"field {entry.key!r} expects a brace map", key=entry.key
        )
    for item in entry.value.pairs:
        member, subject = _member_for(container, item.key, entry.key)
        if item.is_flag:
            value = Value.of_bool(True)
        else:
            value = value_from_ccl(item.value, member.value_kind)
        atoms.append(_decoded_atom(member, subject, value, container, lex))
    return atoms


def ccl_to_atoms(doc: CclDocument, lex: Lexicon) -> tuple[Atom, ...]:
    """Decode a document (either profile) into canonical atoms.  Unknown
    field keys, members, facets, and min abbreviations are decode
    errors naming the offender."""
    atoms: list[Atom] = []
    for entry in doc.entries:
        if doc.profile == Profile.MIN:
            core_key = lex.min_keys.get(entry.key, entry.key)
            container = lex.container_by_key(core_key)
            if container is None:
                raise CclDecodeError(
                    f"unknown field key {entry.key!r}", key=entry.key
                )
            atoms.extend(_decode_min_entry(entry, container, lex))
        else:
            container = lex.container_by_key(entry.key)
            if container is None:
                raise CclDecodeError(
                    f"unknown field key {entry.key!r}", key=entry.key
                )
            atoms.extend(_decode_core_entry(entry, container, lex))
    unique: list[Atom] = []
    for atom in atoms:
        if not any(
            atom_id(atom) == atom_id(kept) and value_equiv(atom.value, kept.value)
            for kept in unique
        ):
            unique.append(atom)
    return tuple(unique)


# ---------------------------------------------------------------------------
# Min entry decoding
# ---------------------------------------------------------------------------


def _min_tokens(entry: CclEntry) -> list[str]:
    value = entry.value
    if value.kind == CclKind.LIST:
        return [v.text for v in value.items]
    if value.kind == CclKind.TOKEN:
        return [value.text]
    raise CclDecodeError(
        f"min entry {entry.key!r} must hold raw tokens", key=entry.key
    )


def _decode_min_entry(entry: CclEntry, container: ContainerSpec, lex: Lexicon) -> list[Atom]:
    rules = lex.min_rules_for(container.key)
    tokens = _min_tokens(entry)
    if container.kind == "scalar":
        if len(tokens) != 1:
            raise CclDecodeError(
                f"scalar field {entry.key!r} expects one token", key=entry.key
            )
        token = tokens[0]
        for rule in rules:
            if rule.kind == "scalar_alias" and rule.min_token == token:
                token = rule.core_value
                break
        member = container.scalar
        value = value_from_ccl(parse_value_text(token), member.value_kind)
        return [_decoded_atom(member, member.subject, value, container, lex)]
    if container.kind == "facets":
        if len(tokens) != 1:
            raise CclDecodeError(
                f"facet field {entry.key!r} expects one dotted token", key=entry.key
            )
        facets = []
        for facet in tokens[0].split("."):
            for rule in rules:
                if rule.kind == "facet" and rule.min_token == facet:
                    facet = rule.facet
                    break
            facets.append(facet)
        synthetic = CclEntry(container.key, CclValue(CclKind.TOKEN, text=".".join(facets)))
        return _decode_core_entry(synthetic, container, lex)

    items: list[MapItem] = []
    fused: dict[str, list[MapItem]] = {}
    for token in tokens:
        matched = _match_min_token(token, rules, container, entry.key, fused)
        items.extend(matched)
    for map_member, pairs in fused.items():
        items.append(MapItem(map_member, CclValue(CclKind.MAP, pairs=tuple(pairs))))
    synthetic = CclEntry(container.key, CclValue(CclKind.MAP, pairs=tuple(items)))
    return _decode_core_entry(synthetic, container, lex)


def _match_min_token(
    token: str,
    rules: list[MinRule],
    container: ContainerSpec,
    key: str,
    fused: dict[str, list[MapItem]],
) -> list[MapItem]:
    for rule in rules:
        if rule.kind == "keyed_int" and token.startswith(rule.min_token + "="):
            body = token[len(rule.min_token) + 1 :]
            if re.fullmatch(r"-?\d+", body):
                return [MapItem(rule.member, CclValue(CclKind.NUMBER, text=body))]
        elif rule.kind == "literal" and token == rule.min_token:
            return [MapItem(rule.member, parse_value_text(rule.core_value))]
        elif rule.kind == "flag" and token == rule.min_token:
            return [MapItem(rule.member, CclValue.boolean(True))]
        elif rule.kind == "fused_value" and token == rule.min_token:
            return [MapItem(rule.member, parse_value_text(rule.core_value))]
        elif rule.kind == "bool_suffix" and token in (
            rule.min_token + "0",
            rule.min_token + "1",
        ):
            return [MapItem(rule.member, CclValue.boolean(token.endswith("1")))]
        elif rule.kind == "dimension":
            match = _DIMENSION_RE.match(token)
            if match:
                return [
                    MapItem(member, CclValue(CclKind.NUMBER, text=match.group(i + 1)))
                    for i, member in enumerate(rule.members)
                ]
        elif rule.kind == "prefix_number" and rule.prefix and token.startswith(rule.prefix):
            body = token[len(rule.prefix) :]
            if _NUMBER_RE.match(body):
                return [MapItem(rule.member, CclValue(CclKind.NUMBER, text=body))]
        elif rule.kind == "prefix_int" and rule.prefix and token.startswith(rule.prefix):
            body = token[len(rule.prefix) :]
            if re.fullmatch(r"\d+", body):
                return [MapItem(rule.member, CclValue(CclKind.NUMBER, text=body))]
        elif rule.kind == "letters_list" and _LETTERS_RE.match(token):
            letters = CclValue.list_of(
                CclValue(CclKind.TOKEN, text=ch) for ch in token
            )
            return [MapItem(rule.member, letters)]
        elif rule.kind == "fused_map" and rule.letter_keys:
            head, body = token[:1], token[1:]
            if head in rule.letter_keys and body and _TOKEN_RE.match(body):
                fused.setdefault(rule.map_member, []).append(
                    MapItem(head, CclValue(CclKind.TOKEN, text=body))
                )
                return []
    # core-form fallback: an explicit key:value pair is always legible
    if ":" in token:
        name, _, body = token.partition(":")
        if _ITEM_KEY_RE.match(name) and body:
            return [MapItem(name, parse_value_text(body))]
    # a bare member name is the member with boolean true, mirroring the
    # core flag convention; anything else is an unknown abbreviation
    if _FLAG_RE.match(token) and (
        token in container.members or container.template is not None
    ):
        return [MapItem(token)]
    raise CclDecodeError(
        f"unknown min token {token!r} in field {key!r}", key=key, token=token
    )


# ---------------------------------------------------------------------------
# Atoms -> documents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Placement:
    container: ContainerSpec
    member_key: str  # member name, facet token, or "" for scalar
    member: MemberSpec
    from_template: bool


def _matches(member: MemberSpec, atom: Atom, subject: str) -> bool:
    return (
        member.type == atom.type
        and subject == atom.subject
        and member.predicate == atom.predicate
    )


def _find_placement(atom: Atom, lex: Lexicon) -> _Placement | None:
    candidates: list[_Placement] = []
    for container in lex.containers:
        if container.kind == "scalar":
            if _matches(container.scalar, atom, container.scalar.subject):
                candidates.append(_Placement(container, "", container.scalar, False))
            continue
        if container.kind == "facets":
            for token, member in container.members.items():
                if _matches(member, atom, member.subject) and value_equiv(
                    _fixed_value(member), atom.value
                ):
                    candidates.append(_Placement(container, token, member, False))
            continue
        for name, member in container.members.items():
            if _matches(member, atom, member.subject):
                candidates.append(_Placement(container, name, member, False))
        if container.template is not None and _matches(
            container.template, atom, atom.subject
        ):
            candidates.append(
                _Placement(container, atom.subject, container.template, True)
            )
    for placement in candidates:
        if placement.member.home:
            return placement
    return candidates[0] if candidates else None


def placeable(atom: Atom, lex: Lexicon) -> bool:
    """True when the lexicon has a container slot for this atom; atoms
    without one would render as ad-hoc entries no decoder can read back,
    so budgeted encoders route them to the raw section instead."""
    return _find_placement(atom, lex) is not None


def _fallback_key(subject: str, taken: set[str]) -> str:
    key = re.sub(r"[^A-Z0-9_]", "_", subject.upper())
    if not KEY_RE.match(key):
        key = "X" + key
    base = key
    serial = 2
    while key in taken:
        key = f"{base}_{serial}"
        serial += 1
    return key


SPAN_DECISIONS = (
    RenderDecision.CANONICAL_PLUS_SPAN,
    RenderDecision.CORE_WITH_SPAN,
    RenderDecision.PRESERVE_RAW_MESSAGE,
)


def atoms_to_ccl(
    atoms: Iterable[Atom],
    lex: Lexicon,
    decisions: Mapping[AtomId, RenderDecision] | None = None,
) -> tuple[CclDocument, tuple[RawSpan, ...]]:
    """Group atoms into a core document plus the raw evidence section.

    Containers follow the lexicon's order; closed members keep their
    declared order; open (template) members keep atom order.  Atoms
    decided ``preserve_raw_message`` stay out of the document and appear
    only as raw spans; span-bearing decisions contribute raw spans in
    addition to their entries.  Atoms the lexicon cannot place render as
    standalone ``SUBJECT=value`` entries so nothing silently drops.
    """
    decisions = decisions or {}
    raw: list[RawSpan] = []
    placed: dict[str, dict[str, tuple[Atom, MemberSpec]]] = {}
    open_order: dict[str, list[str]] = {}
    fallback: list[Atom] = []
    for atom in atoms:
        decision = decisions.get(atom_id(atom), RenderDecision.CORE)
        if decision in SPAN_DECISIONS:
            raw.append(RawSpan(atom_id(atom), atom.evidence, decision))
        if decision == RenderDecision.PRESERVE_RAW_MESSAGE:
            continue
        placement = _find_placement(atom, lex)
        if placement is None:
            fallback.append(atom)
            continue
        key = placement.container.key
        bucket = placed.setdefault(key, {})
        if placement.member_key in bucket:
            continue  # identical placement already rendered
        bucket[placement.member_key] = (atom, placement.member)
        if placement.from_template or placement.container.kind == "facets":
            open_order.setdefault(key, []).append(placement.member_key)

    entries: list[CclEntry] = []
    for container in lex.containers:
        bucket = placed.get(container.key)
        if not bucket:
            continue
        entries.append(_entry_from_bucket(container, bucket, open_order.get(container.key, [])))
    taken = {entry.key for entry in entries}
    for atom in fallback:
        key = _fallback_key(atom.subject, taken)
        taken.add(key)
        entries.append(CclEntry(key, ccl_from_value(atom.value)))
    return CclDocument(CclHeader(), tuple(entries), True), tuple(raw)


def _entry_from_bucket(
    container: ContainerSpec,
    bucket: dict[str, tuple[Atom, MemberSpec]],
    open_keys: list[str],
) -> CclEntry:
    if container.kind == "scalar":
        atom, _ = bucket[""]
        return CclEntry(container.key, ccl_from_value(atom.value))
    if container.kind == "facets":
        tokens = [name for name in container.members if name in bucket]
        return CclEntry(
            container.key, CclValue(CclKind.TOKEN, text=".".join(tokens))
        )
    names = [name for name in container.members if name in bucket]
    names.extend(name for name in open_keys if name not in container.members)
    items: list[MapItem] = []
    for name in names:
        atom, _member = bucket[name]
        rendered = ccl_from_value(atom.value)
        if (
            container.kind == "flags"
            and rendered.kind == CclKind.BOOL
            and rendered.flag
        ):
            items.append(MapItem(name))
        else:
            items.append(MapItem(name, rendered))
    return CclEntry(container.key, CclValue(CclKind.MAP, pairs=tuple(items)))


# ---------------------------------------------------------------------------
# Atoms -> min documents
# ---------------------------------------------------------------------------


def atoms_to_min(
    atoms: Iterable[Atom],
    lex: Lexicon,
    decisions: Mapping[AtomId, RenderDecision] | None = None,
) -> CclDocument:
    """Abbreviate atoms into a min document.  When ``decisions`` is given,
    every routed atom must be ``min_allowed``; passing ``None`` asserts
    eligibility on the caller's behalf (used for whole-document
    abbreviation in tests and tooling)."""
    atom_list = list(atoms)
    if decisions is not None:
        for atom in atom_list:
            decision = decisions.get(atom_id(atom), RenderDecision.CORE)
            if decision != RenderDecision.MIN_ALLOWED:
                raise CclEmitError(
                    f"atom {atom_id(atom)} is {decision.value}, not eligible for min"
                )
    core_doc, _raw = atoms_to_ccl(atom_list, lex)
    min_key_of = {core: mk for mk, core in lex.min_keys.items()}
    entries: list[CclEntry] = []
    for entry in core_doc.entries:
        container = lex.container_by_key(entry.key)
        if container is None:
            raise CclEmitError(
                f"atom rendered outside the lexicon container map ({entry.key}) "
                "cannot be abbreviated"
            )
        tokens = _encode_min_entry(entry, container, lex)
        for token in tokens:
            if " " in token or '"' in token:
                raise CclEmitError(
                    f"value for field {entry.key!r} has no space-free min form"
                )
        value = CclValue(
            CclKind.LIST, items=tuple(CclValue(CclKind.TOKEN, text=t) for t in tokens)
        )
        entries.append(CclEntry(min_key_of.get(entry.key, entry.key), value))
    return CclDocument(CclHeader(1, Profile.MIN), tuple(entries), True)


def _encode_min_entry(entry: CclEntry, container: ContainerSpec, lex: Lexicon) -> list[str]:
    rules = lex.min_rules_for(container.key)
    if container.kind == "scalar":
        rendered = render_value(entry.value)
        for rule in rules:
            if rule.kind == "scalar_alias" and rule.core_value == rendered:
                return [rule.min_token]
        return [rendered]
    if container.kind == "facets":
        min_of = {r.facet: r.min_token for r in rules if r.kind == "facet"}
        facets = [min_of.get(f, f) for f in entry.value.text.split(".")]
        return [".".join(facets)]

    values: dict[str, CclValue] = {}
    order: list[str] = []
    for item in entry.value.pairs:
        values[item.key] = CclValue.boolean(True) if item.is_flag else item.value
        order.append(item.key)
    tokens: list[str] = []
    consumed: set[str] = set()
    for name in order:
        if name in consumed:
            continue
        token = _encode_min_member(name, values, consumed, rules)
        if token is None:
            consumed.add(name)
            rendered = values[name]
            if rendered.kind == CclKind.BOOL and rendered.flag:
                tokens.append(name)
            else:
                tokens.append(f"{name}:{render_value(rendered)}")
        else:
            tokens.extend(token)
    return tokens


def _encode_min_member(
    name: str,
    values: dict[str, CclValue],
    consumed: set[str],
    rules: list[MinRule],
) -> list[str] | None:
    value = values[name]
    for rule in rules:
        if rule.kind == "dimension" and name in rule.members:
            if all(
                member in values and values[member].kind == CclKind.NUMBER
                for member in rule.members
            ):
                consumed.update(rule.members)
                return ["x".join(values[member].text for member in rule.members)]
        elif rule.kind == "fused_map" and rule.map_member == name:
            if value.kind == CclKind.MAP and all(
                not item.is_flag
                and item.key in rule.letter_keys
                and item.value.kind == CclKind.TOKEN
                for item in value.pairs
            ):
                consumed.add(name)
                return [f"{item.key}{item.value.text}" for item in value.pairs]
        elif rule.member != name:
            continue
        elif rule.kind == "bool_suffix" and value.kind == CclKind.BOOL:
            consumed.add(name)
            return [rule.min_token + ("1" if value.flag else "0")]
        elif rule.kind == "prefix_int" and value.kind == CclKind.NUMBER:
            if re.fullmatch(r"\d+", value.text):
                consumed.add(name)
                return [rule.prefix + value.text]
        elif rule.kind == "prefix_number" and value.kind == CclKind.NUMBER:
            consumed.add(name)
            return [rule.prefix + value.text]
        elif rule.kind == "keyed_int" and value.kind == CclKind.NUMBER:
            if re.fullmatch(r"-?\d+", value.text):
                consumed.add(name)
                return [f"{rule.min_token}={value.text}"]
        elif rule.kind == "letters_list" and value.kind == CclKind.LIST:
            letters = [v.text for v in value.items if v.kind == CclKind.TOKEN]
            if len(letters) == len(value.items) and all(
                len(ch) == 1 and ch.isupper() for ch in letters
            ):
                consumed.add(name)
                return ["".join(letters)]
        elif rule.kind == "literal" and render_value(value) == rule.core_value:
            consumed.add(name)
            return [rule.min_token]
        elif rule.kind == "flag" and value.kind == CclKind.BOOL and value.flag:
            consumed.add(name)
            return [rule.min_token]
        elif rule.kind == "fused_value" and render_value(value) == rule.core_value:
            consumed.add(name)
            return [rule.min_token]
    return None
