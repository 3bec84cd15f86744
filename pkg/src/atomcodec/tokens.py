"""Lexical token counting and ingestion of external tokenizer counts.

The lexical rule is a transparent, deterministic proxy: a token is either a
maximal run of word characters ([A-Za-z0-9_]) or a single other non-space
character.  The rule was frozen by calibrating against the six published
reference counts (see CALIBRATION_TARGETS); the frozen rule reproduces all
six exactly.  External encoder counts (BPE tokenizers) are never computed
here -- they are ingested from a count table produced out of band.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+|[^\sA-Za-z0-9_]")

#: Published lexical counts the splitting rule is calibrated against,
#: keyed by example label.
CALIBRATION_TARGETS: dict[str, int] = {
    "epidemic_ccl_core": 125,
    "epidemic_ccl_min": 62,
    "trip_ccl_trace": 67,
    "diff_ccl_before": 48,
    "diff_ccl_after": 56,
    "json_patch_diff": 115,
}

#: Tolerance allowed per example if the rule cannot match every target
#: simultaneously.  The frozen rule matches all six exactly, so this is
#: only consulted when recalibrating against new reference texts.
CALIBRATION_TOLERANCE = 4


def lexical_tokens(text: str) -> int:
    """Count lexical tokens in ``text`` under the frozen splitting rule."""
    return len(_TOKEN_RE.findall(text))


def lexical_split(text: str) -> list[str]:
    """Return the token strings themselves (mainly for debugging reports)."""
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class TokenCount:
    """A count of one text under one encoder ("lexical" or an external label)."""

    encoder_label: str
    count: int

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError(f"token count must be >= 0, got {self.count}")


class UnknownExampleError(ValueError):
    """A count-table row references an example label the caller does not know."""


def ingest_external_counts(
    path: str | Path,
    known_examples: set[str] | None = None,
) -> dict[tuple[str, str], TokenCount]:
    """Load a count table of (example_label, encoder_label, count) rows.

    Rows are tab- or comma-separated; blank lines and lines starting with
    ``#`` are skipped.  The result is keyed by (example_label,
    encoder_label).  If ``known_examples`` is given, a row naming any other
    example raises :class:`UnknownExampleError`; missing encoders are simply
    absent from the result, never imputed.
    """
    table: dict[tuple[str, str], TokenCount] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in re.split(r"\t|,", line)]
        if len(parts) != 3:
            raise ValueError(
                f"{path}:{lineno}: expected (example_label, encoder_label, count), got {line!r}"
            )
        example, encoder, raw_count = parts
        if known_examples is not None and example not in known_examples:
            raise UnknownExampleError(f"{path}:{lineno}: unknown example label {example!r}")
        try:
            count = int(raw_count)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: count is not an integer: {raw_count!r}") from None
        key = (example, encoder)
        if key in table:
            raise ValueError(f"{path}:{lineno}: duplicate row for {key}")
        table[key] = TokenCount(encoder, count)
    return table


@dataclass(frozen=True)
class CalibrationRow:
    label: str
    counted: int
    target: int

    @property
    def residual(self) -> int:
        return self.counted - self.target

    @property
    def within_tolerance(self) -> bool:
        return abs(self.residual) <= CALIBRATION_TOLERANCE


def calibration_table(reference_texts: dict[str, str]) -> list[CalibrationRow]:
    """Compare the frozen rule against the calibration targets.

    ``reference_texts`` maps example labels (a subset of
    ``CALIBRATION_TARGETS``) to their exact source texts.  Returns one row
    per example; a nonzero residual documents a discrepancy rather than
    hiding it.
    """
    rows: list[CalibrationRow] = []
    for label, target in CALIBRATION_TARGETS.items():
        if label not in reference_texts:
            continue
        rows.append(CalibrationRow(label, lexical_tokens(reference_texts[label]), target))
    return rows
