"""Lexical token rule: calibration exactness and counting invariants."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atomcodec.tokens import (
    CALIBRATION_TARGETS,
    TokenCount,
    UnknownExampleError,
    calibration_table,
    ingest_external_counts,
    lexical_split,
    lexical_tokens,
)
from tests.reference_texts import REFERENCE_TEXTS


def test_calibration_exact_on_all_published_texts():
    for label, text in REFERENCE_TEXTS.items():
        assert lexical_tokens(text) == CALIBRATION_TARGETS[label], label


def test_calibration_table_reports_zero_residuals():
    rows = calibration_table(REFERENCE_TEXTS)
    assert {row.label for row in rows} == set(CALIBRATION_TARGETS)
    for row in rows:
        assert row.counted == row.target
        assert row.residual == 0


def test_word_runs_and_punctuation():
    assert lexical_split("GRID{w:80,h:50}") == [
        "GRID", "{", "w", ":", "80", ",", "h", ":", "50", "}",
    ]
    # underscores join; other punctuation splits
    assert lexical_tokens("single_html_file") == 1
    assert lexical_tokens("p:0.08") == 5


def test_empty_and_whitespace_only():
    assert lexical_tokens("") == 0
    assert lexical_tokens(" \n\t  ") == 0


@given(st.text())
def test_split_is_deterministic_and_counts_match(text):
    first = lexical_split(text)
    assert first == lexical_split(text)
    assert lexical_tokens(text) == len(first)


@given(st.text(), st.text())
def test_concatenation_bounds(a, b):
    # joining two texts can merge at most one boundary pair of word runs
    joined = lexical_tokens(a + b)
    assert joined <= lexical_tokens(a) + lexical_tokens(b)
    assert joined >= max(lexical_tokens(a), lexical_tokens(b))


def test_token_count_rejects_negative():
    with pytest.raises(ValueError):
        TokenCount("cl100k_base", -1)


def test_ingest_external_counts(tmp_path):
    table = tmp_path / "counts.tsv"
    table.write_text(
        "# example\tencoder\tcount\n"
        "epidemic_ccl_core\tcl100k_base\t115\n"
        "epidemic_ccl_core\to200k_base\t117\n"
        "trip_ccl_trace,cl100k_base,74\n",
        encoding="utf-8",
    )
    counts = ingest_external_counts(table)
    assert counts[("epidemic_ccl_core", "cl100k_base")] == TokenCount("cl100k_base", 115)
    assert counts[("trip_ccl_trace", "cl100k_base")].count == 74
    assert len(counts) == 3


def test_ingest_rejects_unknown_example(tmp_path):
    table = tmp_path / "counts.tsv"
    table.write_text("mystery_doc\tcl100k_base\t10\n", encoding="utf-8")
    with pytest.raises(UnknownExampleError):
        ingest_external_counts(table, known_examples={"epidemic_ccl_core"})


def test_ingest_never_invents_rows(tmp_path):
    table = tmp_path / "counts.tsv"
    table.write_text("epidemic_ccl_core\tcl100k_base\t115\n", encoding="utf-8")
    counts = ingest_external_counts(table)
    assert ("epidemic_ccl_core", "o200k_base") not in counts
