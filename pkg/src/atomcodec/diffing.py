"""State diffs between context packets, expressed as JSON Patch operations.

A packet's grouped state (see :func:`atomcodec.ccl.doc_to_state`) is a JSON
object: one key per entry, with flag sets as arrays, maps as objects, and
number lexemes as numbers.  :func:`diff_docs` compares two packets and emits
RFC 6902 style operations against that state:

* operations are grouped ``replace`` then ``add`` then ``remove``, each group
  in document entry order;
* flag sets diff by membership: additions append with a ``/-`` path and
  removals address the member by name, so flag order never produces churn;
* ordered lists diff positionally with index paths (common prefix and suffix
  are skipped, removals are emitted deepest index first).

Each produced op retains the displaced value (``prior``), which makes
:meth:`StatePatch.invert` exact.  ``prior`` is bookkeeping, not wire format:
serialized patches carry only ``op``/``path``/``value``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any, Iterator

from .ccl import CclDocument, CclKind, CclValue, MapItem, plain_value

__all__ = [
    "PatchOp",
    "StatePatch",
    "PatchConflict",
    "PatchApplyError",
    "PatchInvertError",
    "diff_docs",
    "apply_patch",
    "apply_patch_report",
    "escape_pointer",
    "unescape_pointer",
]


def escape_pointer(segment: str) -> str:
    return segment.replace("~", "~0").replace("/", "~1")


def unescape_pointer(segment: str) -> str:
    return segment.replace("~1", "/").replace("~0", "~")


class PatchApplyError(ValueError):
    """A patch operation could not be applied to the given state."""

    def __init__(self, conflicts: tuple["PatchConflict", ...]):
        self.conflicts = conflicts
        lines = ", ".join(str(c) for c in conflicts)
        super().__init__(f"patch failed to apply: {lines}")


class PatchInvertError(ValueError):
    """The patch lacks prior values, so no exact inverse exists."""


@dataclass(frozen=True)
class PatchConflict:
    index: int
    op: "PatchOp"
    reason: str

    def __str__(self) -> str:
        return f"op {self.index} ({self.op.op} {self.op.path}): {self.reason}"


@dataclass(frozen=True)
class PatchOp:
    op: str  # replace | add | remove
    path: str
    value: Any = None
    # displaced or removed value; kept for inversion, never serialized
    prior: Any = None
    # True when the final segment names a flag-set member (or "-" append)
    set_member: bool = False

    def __post_init__(self) -> None:
        if self.op not in ("replace", "add", "remove"):
            raise ValueError(f"unknown patch op {self.op!r}")
        if not self.path.startswith("/"):
            raise ValueError(f"path must start with '/': {self.path!r}")

    def to_wire(self) -> dict[str, Any]:
        wire: dict[str, Any] = {"op": self.op, "path": self.path}
        if self.op != "remove":
            wire["value"] = self.value
        return wire

    def invert(self) -> "PatchOp":
        if self.op == "replace":
            if self.prior is None:
                raise PatchInvertError(f"replace at {self.path} lacks prior value")
            return PatchOp("replace", self.path, self.prior, self.value)
        if self.op == "add":
            if self.set_member:
                parent = self.path.rsplit("/", 1)[0]
                member = f"{parent}/{escape_pointer(str(self.value))}"
                return PatchOp("remove", member, prior=self.value, set_member=True)
            return PatchOp("remove", self.path, prior=self.value)
        if self.prior is None:
            raise PatchInvertError(f"remove at {self.path} lacks prior value")
        if self.set_member:
            parent = self.path.rsplit("/", 1)[0]
            return PatchOp("add", f"{parent}/-", self.prior, set_member=True)
        return PatchOp("add", self.path, self.prior)


@dataclass(frozen=True)
class StatePatch:
    ops: tuple[PatchOp, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.ops

    def __iter__(self) -> Iterator[PatchOp]:
        return iter(self.ops)

    def __len__(self) -> int:
        return len(self.ops)

    def invert(self) -> "StatePatch":
        return StatePatch(tuple(op.invert() for op in reversed(self.ops)))

    def to_json(self) -> str:
        if not self.ops:
            return "[]\n"
        rows = ",\n".join(
            "  " + json.dumps(op.to_wire(), separators=(",", ":")) for op in self.ops
        )
        return f"[\n{rows}\n]\n"

    @classmethod
    def from_json(cls, text: str) -> "StatePatch":
        raw = json.loads(text)
        if not isinstance(raw, list):
            raise ValueError("a patch document must be a JSON array")
        ops = []
        for row in raw:
            if not isinstance(row, dict) or "op" not in row or "path" not in row:
                raise ValueError(f"malformed patch op: {row!r}")
            ops.append(
                PatchOp(
                    row["op"],
                    row["path"],
                    row.get("value"),
                    set_member=row["path"].endswith("/-"),
                )
            )
        return cls(tuple(ops))


# ---------------------------------------------------------------------------
# Diffing
# ---------------------------------------------------------------------------


@dataclass
class _OpGroups:
    replaces: list[PatchOp] = field(default_factory=list)
    adds: list[PatchOp] = field(default_factory=list)
    removes: list[PatchOp] = field(default_factory=list)

    def ordered(self) -> tuple[PatchOp, ...]:
        return tuple(self.replaces + self.adds + self.removes)


def _is_flag_set(value: CclValue) -> bool:
    return value.kind == CclKind.MAP and all(item.is_flag for item in value.pairs)


def _item_value(item: MapItem) -> CclValue:
    return CclValue.boolean(True) if item.is_flag else item.value


def diff_docs(before: CclDocument, after: CclDocument) -> StatePatch:
    """Operations that carry the grouped state of one packet onto another."""
    groups = _OpGroups()
    after_entries = {entry.key: entry for entry in after.entries}
    before_keys = set(before.keys())
    for entry in before.entries:
        path = "/" + escape_pointer(entry.key)
        other = after_entries.get(entry.key)
        if other is None:
            groups.removes.append(
                PatchOp("remove", path, prior=plain_value(entry.value))
            )
        else:
            _diff_value(path, entry.value, other.value, groups)
    for entry in after.entries:
        if entry.key not in before_keys:
            path = "/" + escape_pointer(entry.key)
            groups.adds.append(PatchOp("add", path, plain_value(entry.value)))
    return StatePatch(groups.ordered())


def _diff_value(path: str, before: CclValue, after: CclValue, groups: _OpGroups) -> None:
    if before == after:
        return
    flags_before, flags_after = _is_flag_set(before), _is_flag_set(after)
    if flags_before and flags_after:
        _diff_flag_set(path, before, after, groups)
    elif (
        before.kind == CclKind.MAP
        and after.kind == CclKind.MAP
        and not flags_before
        and not flags_after
    ):
        # a flag set turning into a keyed map (or back) is a shape change,
        # which falls through to the whole-value replace below
        _diff_map(path, before, after, groups)
    elif before.kind == CclKind.LIST and after.kind == CclKind.LIST:
        _diff_list(path, before, after, groups)
    else:
        groups.replaces.append(
            PatchOp("replace", path, plain_value(after), plain_value(before))
        )


def _diff_flag_set(path: str, before: CclValue, after: CclValue, groups: _OpGroups) -> None:
    have = {item.key for item in before.pairs}
    want = {item.key for item in after.pairs}
    for item in after.pairs:
        if item.key not in have:
            groups.adds.append(PatchOp("add", f"{path}/-", item.key, set_member=True))
    for item in before.pairs:
        if item.key not in want:
            groups.removes.append(
                PatchOp(
                    "remove",
                    f"{path}/{escape_pointer(item.key)}",
                    prior=item.key,
                    set_member=True,
                )
            )


def _diff_map(path: str, before: CclValue, after: CclValue, groups: _OpGroups) -> None:
    after_items = {item.key: item for item in after.pairs}
    before_keys = {item.key for item in before.pairs}
    for item in before.pairs:
        child = f"{path}/{escape_pointer(item.key)}"
        other = after_items.get(item.key)
        if other is None:
            groups.removes.append(
                PatchOp("remove", child, prior=plain_value(_item_value(item)))
            )
        else:
            _diff_value(child, _item_value(item), _item_value(other), groups)
    for item in after.pairs:
        if item.key not in before_keys:
            child = f"{path}/{escape_pointer(item.key)}"
            groups.adds.append(PatchOp("add", child, plain_value(_item_value(item))))


def _diff_list(path: str, before: CclValue, after: CclValue, groups: _OpGroups) -> None:
    b, a = list(before.items), list(after.items)
    prefix = 0
    while prefix < len(b) and prefix < len(a) and b[prefix] == a[prefix]:
        prefix += 1
    suffix = 0
    while (
        suffix < len(b) - prefix
        and suffix < len(a) - prefix
        and b[len(b) - 1 - suffix] == a[len(a) - 1 - suffix]
    ):
        suffix += 1
    mid_b = b[prefix : len(b) - suffix]
    mid_a = a[prefix : len(a) - suffix]
    overlap = min(len(mid_b), len(mid_a))
    for i in range(overlap):
        _diff_value(f"{path}/{prefix + i}", mid_b[i], mid_a[i], groups)
    for i in range(overlap, len(mid_a)):
        groups.adds.append(
            PatchOp("add", f"{path}/{prefix + i}", plain_value(mid_a[i]))
        )
    # deepest index first keeps every remove valid during sequential apply
    for i in reversed(range(overlap, len(mid_b))):
        groups.removes.append(
            PatchOp("remove", f"{path}/{prefix + i}", prior=plain_value(mid_b[i]))
        )


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def apply_patch(state: dict[str, Any], patch: StatePatch) -> dict[str, Any]:
    """Sequentially apply every op; raises :class:`PatchApplyError` on conflict."""
    new_state, conflicts = apply_patch_report(state, patch)
    if conflicts:
        raise PatchApplyError(conflicts)
    return new_state


def apply_patch_report(
    state: dict[str, Any], patch: StatePatch
) -> tuple[dict[str, Any], tuple[PatchConflict, ...]]:
    """Apply what can be applied; conflicting ops are skipped and reported."""
    current = copy.deepcopy(state)
    conflicts: list[PatchConflict] = []
    for index, op in enumerate(patch.ops):
        reason = _apply_one(current, op)
        if reason is not None:
            conflicts.append(PatchConflict(index, op, reason))
    return current, tuple(conflicts)


def _apply_one(state: dict[str, Any], op: PatchOp) -> str | None:
    segments = [unescape_pointer(s) for s in op.path.split("/")[1:]]
    if not segments or segments == [""]:
        return "empty path"
    parent: Any = state
    for segment in segments[:-1]:
        parent = _descend(parent, segment)
        if isinstance(parent, str):
            return f"unresolved path at {segment!r}: {parent}"
        parent = parent[0] if isinstance(parent, tuple) else parent
    return _apply_leaf(parent, segments[-1], op)


def _descend(container: Any, segment: str) -> Any:
    if isinstance(container, dict):
        if segment not in container:
            return f"no member {segment!r}"
        return (container[segment],)
    if isinstance(container, list):
        index = _as_index(segment)
        if index is None or not 0 <= index < len(container):
            return f"no element {segment!r}"
        return (container[index],)
    return "not a container"


def _as_index(segment: str) -> int | None:
    if segment.isdigit() or (segment.startswith("-") and segment[1:].isdigit()):
        return int(segment)
    return None


def _apply_leaf(parent: Any, segment: str, op: PatchOp) -> str | None:
    if isinstance(parent, dict):
        present = segment in parent
        if op.op == "add":
            if present:
                return "member already present"
            parent[segment] = copy.deepcopy(op.value)
        elif op.op == "replace":
            if not present:
                return "no member to replace"
            parent[segment] = copy.deepcopy(op.value)
        else:
            if not present:
                return "no member to remove"
            del parent[segment]
        return None
    if isinstance(parent, list):
        if segment == "-":
            if op.op != "add":
                return "'-' is append-only"
            parent.append(copy.deepcopy(op.value))
            return None
        index = _as_index(segment)
        if index is None:
            # flag-set member addressed by name
            if op.op != "remove":
                return "named list members support only remove"
            if segment not in parent:
                return "no such flag"
            parent.remove(segment)
            return None
        if op.op == "add":
            if not 0 <= index <= len(parent):
                return "index out of range"
            parent.insert(index, copy.deepcopy(op.value))
        elif not 0 <= index < len(parent):
            return "index out of range"
        elif op.op == "replace":
            parent[index] = copy.deepcopy(op.value)
        else:
            del parent[index]
        return None
    return "not a container"
