"""Core table value objects shared across the pipeline.

Three representations, in the order a sample flows through them:

* :class:`RawTable` -- a repaired grid of strings straight out of the
  sampler text, before any typing.
* :class:`NormalizedTable` -- labeled rows/columns with numeric values;
  the unit of sampling.
* :class:`AggregatedTable` -- the consensus grid with per-cell support
  counts and relative-dispersion uncertainty.

All three are immutable; missing values are ``None``, never a sentinel
number, and every stored number is finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class RawTable:
    """Rectangular grid of string cells from one sampled output."""

    rows: tuple[tuple[str, ...], ...]
    source_id: int

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValueError("RawTable requires at least one row")
        width = len(self.rows[0])
        if any(len(r) != width for r in self.rows):
            raise ValueError("RawTable rows must have identical length")


@dataclass(frozen=True)
class NormalizedTable:
    """Labeled numeric table for a single sample.

    ``values[i][j]`` is the number for ``row_labels[i]`` / ``col_labels[j]``,
    or ``None`` when the cell is missing.
    """

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: tuple[tuple[float | None, ...], ...]
    source_id: int = 0

    def __post_init__(self) -> None:
        if not self.row_labels or not self.col_labels:
            raise ValueError("NormalizedTable requires at least one row and one column")
        if len(self.values) != len(self.row_labels):
            raise ValueError("value grid height does not match row labels")
        for row in self.values:
            if len(row) != len(self.col_labels):
                raise ValueError("value grid width does not match column labels")
            for v in row:
                if v is not None and not math.isfinite(v):
                    raise ValueError(f"non-finite value {v!r} in table")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.row_labels), len(self.col_labels))


@dataclass(frozen=True)
class CellAggregate:
    """One consensus cell: value, number of contributing samples, uncertainty.

    ``uncertainty`` is the relative median absolute deviation of the
    contributing values and is defined only when ``value`` is present and
    nonzero.
    """

    value: float | None
    support: int
    uncertainty: float | None

    def __post_init__(self) -> None:
        if (self.support == 0) != (self.value is None):
            raise ValueError("support must be 0 exactly when the value is missing")
        if self.uncertainty is not None and (self.value is None or self.value == 0):
            raise ValueError("uncertainty defined for a missing or zero value")
        if self.uncertainty is not None and self.uncertainty < 0:
            raise ValueError("uncertainty must be non-negative")


@dataclass(frozen=True)
class AggregatedTable:
    """Consensus table; labels are canonical and lexicographically sorted."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    cells: tuple[tuple[CellAggregate, ...], ...]

    def __post_init__(self) -> None:
        if list(self.row_labels) != sorted(self.row_labels):
            raise ValueError("row labels must be sorted")
        if list(self.col_labels) != sorted(self.col_labels):
            raise ValueError("column labels must be sorted")
        if len(self.cells) != len(self.row_labels):
            raise ValueError("cell grid height does not match row labels")
        for row in self.cells:
            if len(row) != len(self.col_labels):
                raise ValueError("cell grid width does not match column labels")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.row_labels), len(self.col_labels))

    def value_grid(self) -> tuple[tuple[float | None, ...], ...]:
        return tuple(tuple(c.value for c in row) for row in self.cells)


def transpose(t: NormalizedTable) -> NormalizedTable:
    """Swap rows and columns; an involution."""
    flipped = tuple(
        tuple(t.values[i][j] for i in range(len(t.row_labels)))
        for j in range(len(t.col_labels))
    )
    return NormalizedTable(
        row_labels=t.col_labels,
        col_labels=t.row_labels,
        values=flipped,
        source_id=t.source_id,
    )


def format_value(v: float | None) -> str:
    """Render a cell for canonical TSV; round-trips exactly through float()."""
    if v is None:
        return ""
    return repr(float(v))


def to_tsv(t: NormalizedTable | AggregatedTable) -> str:
    """Canonical TSV: header row with empty top-left cell, row labels first.

    Missing cells are empty strings. The same layout is used for both
    per-sample and aggregated tables (aggregated support/uncertainty are
    carried in the run record, not the TSV).
    """
    if isinstance(t, AggregatedTable):
        grid = t.value_grid()
    else:
        grid = t.values
    lines = ["\t".join(("",) + tuple(t.col_labels))]
    for label, row in zip(t.row_labels, grid):
        lines.append("\t".join((label,) + tuple(format_value(v) for v in row)))
    return "\n".join(lines)
