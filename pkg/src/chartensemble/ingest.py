"""Turn raw sampler text into a NormalizedTable.

The pipeline is ``extract_tsv_block`` -> ``parse_raw`` -> ``normalize``.
Sampler replies are messy: fences go missing, rows come back ragged, values
arrive with commas, currency symbols, or percent signs. This module is
deliberately forgiving about formatting and strict about structure (a table
must have a header row, a label column, and at least one value cell).
"""

from __future__ import annotations

import math
import re
from collections import Counter

from .tables import NormalizedTable, RawTable, transpose


class IngestError(ValueError):
    """Base class for ingest failures."""


class EmptyOutput(IngestError):
    """The reply contains nothing that could be a table."""


class ParseFailure(IngestError):
    """The text was table-like but no usable data region exists."""


_FENCE = re.compile(r"```tsv[ \t]*\r?\n?(.*?)(?:```|\Z)", re.DOTALL | re.IGNORECASE)

_CURRENCY = "$€£¥"  # $ EUR GBP JPY


def extract_tsv_block(text: str) -> str:
    """Return the body of the first ```tsv fenced block.

    Falls back to the whole reply when no fence is present (samplers
    occasionally drop them and the table is usually still there).

    Raises:
        EmptyOutput: the result has neither a tab nor a newline, so it
            cannot contain a table.
    """
    m = _FENCE.search(text)
    block = m.group(1) if m else text
    # Strip only line boundaries: a leading tab is the canonical empty
    # top-left header cell and must survive.
    block = block.strip("\r\n")
    if "\t" not in block and "\n" not in block:
        raise EmptyOutput("no tab or newline in sampler output")
    return block


def parse_raw(tsv: str, source_id: int) -> RawTable:
    """Split TSV text into a rectangular grid, repairing ragged rows.

    Rows are padded with empty cells or truncated to the modal (most
    frequent) row length; mode ties break toward the larger length. Lines
    with no content and no tab are skipped as formatting junk, but a line
    of empty tab-separated cells is kept (it is a real all-missing row).

    Raises:
        ParseFailure: fewer than 2 rows, or the modal length is below 2
            (no data region exists).
    """
    rows: list[list[str]] = []
    for line in tsv.split("\n"):
        line = line.rstrip("\r")
        if not line.strip() and "\t" not in line:
            continue
        rows.append(line.split("\t"))
    if len(rows) < 2:
        raise ParseFailure(f"need at least 2 rows, got {len(rows)}")

    counts = Counter(len(r) for r in rows)
    target = max(counts, key=lambda length: (counts[length], length))
    if target < 2:
        raise ParseFailure("modal row length below 2: no value columns")

    repaired = tuple(
        tuple(r[:target]) + ("",) * (target - len(r)) if len(r) != target else tuple(r)
        for r in rows
    )
    return RawTable(rows=repaired, source_id=source_id)


def parse_number(cell: str) -> float | None:
    """Convert one cell to a float, or None when it is missing.

    Strips thousands commas, one leading currency symbol ($, EUR, GBP, JPY),
    and a trailing percent sign (without rescaling). Parenthesized values
    are treated as accounting negatives. Anything that still fails float
    conversion, including the empty string, is missing.
    """
    s = cell.strip()
    if not s:
        return None
    negate = False
    if len(s) >= 2 and s[0] == "(" and s[-1] == ")":
        s = s[1:-1].strip()
        negate = True
    if s[:1] in _CURRENCY:
        s = s[1:].strip()
    s = s.replace(",", "")
    if s.endswith("%"):
        s = s[:-1].strip()
    try:
        v = float(s)
    except ValueError:
        return None
    if not math.isfinite(v):  # rejects textual "nan"/"inf"
        return None
    return -v if negate else v


def normalize(raw: RawTable) -> NormalizedTable:
    """Type a repaired grid: header row, label column, numeric body.

    The first row becomes column labels (dropping the top-left cell), the
    first column of the remaining rows becomes row labels, and the rest is
    converted with :func:`parse_number`. The result is transposed when the
    value grid has strictly more columns than rows, so downstream alignment
    always sees the long axis on rows.

    Raises:
        ParseFailure: the value region is empty.
    """
    header, *body = raw.rows
    col_labels = tuple(header[1:])
    row_labels = tuple(r[0] for r in body)
    if not row_labels or not col_labels:
        raise ParseFailure("empty value region after header stripping")
    values = tuple(tuple(parse_number(c) for c in r[1:]) for r in body)
    table = NormalizedTable(
        row_labels=row_labels,
        col_labels=col_labels,
        values=values,
        source_id=raw.source_id,
    )
    if len(table.col_labels) > len(table.row_labels):
        table = transpose(table)
    return table


def ingest(text: str, source_id: int) -> NormalizedTable:
    """Full pipeline from sampler reply to NormalizedTable."""
    return normalize(parse_raw(extract_tsv_block(text), source_id))
