"""Build a chart-extraction benchmark from a long-format time-series CSV.

Input schema: a CSV with columns ``indicator``, ``country``, ``year``,
``value`` (extra columns are ignored; empty or non-numeric values are
missing). Series with too many holes or interior gaps are pruned, then each
chart samples one indicator and 2-3 countries over their shared year span,
never reusing a series. Chart type and rendering backend are assigned
uniformly (exactly balanced by default), visual style is randomized from
fixed pools, and the output is a set of ground-truth TSVs, a dataset index,
and a machine-readable render spec for the standalone renderer.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .runio import IndexEntry, write_index
from .tables import NormalizedTable, to_tsv

CHART_TYPES = ("line", "area", "grouped_bar", "stacked_bar")
BACKENDS = ("matplotlib", "seaborn", "pandas", "pillow")

FONT_POOL = (
    "DejaVu Sans",
    "DejaVu Serif",
    "DejaVu Sans Mono",
    "serif",
    "sans-serif",
    "monospace",
)
PALETTES = {
    "classic": ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"),
    "muted": ("#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"),
    "dark": ("#001c7f", "#b1400d", "#12711c", "#8c0800", "#591e71", "#592f0d"),
    "pastel": ("#a1c9f4", "#ffb482", "#8de5a1", "#ff9f9b", "#d0bbff", "#debb9b"),
    "bright": ("#023eff", "#ff7c00", "#1ac938", "#e8000b", "#8b2be2", "#9f4800"),
    "earth": ("#4e3910", "#8c6d31", "#bd9e39", "#637939", "#8ca252", "#b5cf6b"),
}
GRID_STYLES = ("solid", "dashed", "dotted")
LINE_STYLES = ("solid", "dashed", "dashdot", "dotted")
MARKERS = ("circle", "square", "triangle", "diamond", "x")
FIGURE_WIDTHS = (6.0, 7.0, 8.0, 9.0, 10.0)
FIGURE_HEIGHTS = (4.0, 4.5, 5.0, 5.5, 6.0)
FONT_SIZES = (9, 10, 11, 12, 13, 14, 15, 16)

GROUPED_BAR_MAX_CATEGORIES = 12


class InsufficientSeries(RuntimeError):
    """The source data cannot supply the requested number of charts."""


@dataclass(frozen=True)
class Series:
    indicator: str
    country: str
    years: tuple[int, ...]  # contiguous
    values: tuple[float, ...]

    @property
    def span(self) -> tuple[int, int]:
        return (self.years[0], self.years[-1])


def load_long_csv(path: Path | str) -> dict[tuple[str, str], dict[int, float]]:
    """Read (indicator, country, year, value) rows into per-series maps."""
    table: dict[tuple[str, str], dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InsufficientSeries("source CSV is empty")
        fields = {name.strip().lower(): name for name in reader.fieldnames}
        for required in ("indicator", "country", "year", "value"):
            if required not in fields:
                raise InsufficientSeries(f"source CSV lacks a {required!r} column")
        for row in reader:
            try:
                year = int(str(row[fields["year"]]).strip())
            except (TypeError, ValueError):
                continue
            raw = str(row[fields["value"]] or "").strip()
            if not raw:
                continue
            try:
                value = float(raw)
            except ValueError:
                continue
            if not math.isfinite(value):
                continue
            key = (str(row[fields["indicator"]]).strip(), str(row[fields["country"]]).strip())
            table.setdefault(key, {})[year] = value
    return table


def usable_series(raw: dict[tuple[str, str], dict[int, float]]) -> list[Series]:
    """Prune series that are mostly missing or have interior gaps.

    Missingness is judged against the global year range of the source:
    more than half absent drops the series. Holes strictly between a
    series' first and last observed year also drop it; gaps at the ends
    merely shorten the series to its contiguous core.
    """
    all_years = [y for points in raw.values() for y in points]
    if not all_years:
        return []
    global_span = max(all_years) - min(all_years) + 1
    kept: list[Series] = []
    for (indicator, country), points in sorted(raw.items()):
        if len(points) < 2:
            continue
        if len(points) * 2 < global_span:
            continue
        years = sorted(points)
        lo, hi = years[0], years[-1]
        if len(points) != hi - lo + 1:
            continue  # a hole between first and last observed year is interior
        kept.append(
            Series(
                indicator=indicator,
                country=country,
                years=tuple(range(lo, hi + 1)),
                values=tuple(points[y] for y in range(lo, hi + 1)),
            )
        )
    return kept


def _subsample_years(n: int, limit: int) -> list[int]:
    """Evenly spaced index subset of size <= limit, always keeping both ends."""
    if n <= limit:
        return list(range(n))
    picks = np.linspace(0, n - 1, limit)
    return sorted({int(round(p)) for p in picks})


def _draw_style(rng: np.random.Generator, n_series: int) -> dict:
    palette = sorted(PALETTES)[int(rng.integers(0, len(PALETTES)))]
    return {
        "font_family": FONT_POOL[int(rng.integers(0, len(FONT_POOL)))],
        "font_size": int(FONT_SIZES[int(rng.integers(0, len(FONT_SIZES)))]),
        "palette": palette,
        "colors": list(PALETTES[palette]),
        "grid": bool(rng.random() < 0.7),
        "grid_style": GRID_STYLES[int(rng.integers(0, len(GRID_STYLES)))],
        "line_styles": [
            LINE_STYLES[int(rng.integers(0, len(LINE_STYLES)))] for _ in range(n_series)
        ],
        "markers": [MARKERS[int(rng.integers(0, len(MARKERS)))] for _ in range(n_series)],
        "transparency": round(float(rng.uniform(0.55, 1.0)), 2),
        "figure_size": [
            float(FIGURE_WIDTHS[int(rng.integers(0, len(FIGURE_WIDTHS)))]),
            float(FIGURE_HEIGHTS[int(rng.integers(0, len(FIGURE_HEIGHTS)))]),
        ],
    }


def _combo_stream(n: int, rng: np.random.Generator, balanced: bool) -> list[tuple[str, str]]:
    combos = [(ct, be) for ct in CHART_TYPES for be in BACKENDS]
    if not balanced:
        return [combos[int(rng.integers(0, len(combos)))] for _ in range(n)]
    stream: list[tuple[str, str]] = []
    while len(stream) < n:
        order = rng.permutation(len(combos))
        stream.extend(combos[int(j)] for j in order)
    return stream[:n]


def generate(
    source_csv: Path | str,
    n_charts: int,
    seed: int,
    out_dir: Path | str,
    balanced: bool = True,
    min_years: int = 5,
) -> Path:
    """Write truth TSVs, a dataset index, and a render spec; returns the spec path.

    Raises:
        InsufficientSeries: the pruned source cannot fill ``n_charts``
            without reusing a series.
    """
    out_dir = Path(out_dir)
    (out_dir / "truth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    series = usable_series(load_long_csv(source_csv))
    by_indicator: dict[str, list[Series]] = {}
    for s in series:
        by_indicator.setdefault(s.indicator, []).append(s)
    used: set[tuple[str, str]] = set()
    combos = _combo_stream(n_charts, rng, balanced)

    specs = []
    entries = []
    for i in range(n_charts):
        chart_type, backend = combos[i]
        picked: list[Series] | None = None
        for _attempt in range(100):
            eligible = sorted(
                ind
                for ind, members in by_indicator.items()
                if sum((m.indicator, m.country) not in used for m in members) >= 2
            )
            if not eligible:
                break
            indicator = eligible[int(rng.integers(0, len(eligible)))]
            available = [
                m for m in by_indicator[indicator] if (m.indicator, m.country) not in used
            ]
            k = min(int(rng.integers(2, 4)), len(available))
            chosen_idx = rng.choice(len(available), size=k, replace=False)
            candidates = [available[int(j)] for j in chosen_idx]
            lo = max(s.span[0] for s in candidates)
            hi = min(s.span[1] for s in candidates)
            if hi - lo + 1 >= min_years:
                picked = candidates
                break
        if picked is None:
            raise InsufficientSeries(
                f"could not assemble chart {i + 1} of {n_charts}; "
                f"{len(series) - len(used)} unused series remain"
            )
        for s in picked:
            used.add((s.indicator, s.country))

        lo = max(s.span[0] for s in picked)
        hi = min(s.span[1] for s in picked)
        years = list(range(lo, hi + 1))
        if chart_type == "grouped_bar":
            keep = _subsample_years(len(years), GROUPED_BAR_MAX_CATEGORIES)
            years = [years[j] for j in keep]
        truth = NormalizedTable(
            row_labels=tuple(str(y) for y in years),
            col_labels=tuple(s.country for s in picked),
            values=tuple(
                tuple(s.values[y - s.years[0]] for s in picked) for y in years
            ),
        )
        chart_id = f"chart_{i:04d}"
        tsv = to_tsv(truth) + "\n"
        (out_dir / "truth" / f"{chart_id}.tsv").write_text(tsv, encoding="utf-8")
        specs.append(
            {
                "id": chart_id,
                "chart_type": chart_type,
                "backend": backend,
                "series_tsv": tsv,
                "title": picked[0].indicator,
                "style": _draw_style(rng, len(picked)),
                "output_path": f"images/{chart_id}.png",
            }
        )
        entries.append(
            IndexEntry(
                id=chart_id,
                truth_path=out_dir / "truth" / f"{chart_id}.tsv",
                image_path=out_dir / "images" / f"{chart_id}.png",
                metadata={
                    "chart_type": chart_type,
                    "library": backend,
                    "indicator": picked[0].indicator,
                    "countries": [s.country for s in picked],
                    "n_rows": len(truth.row_labels),
                    "n_cols": len(truth.col_labels),
                },
            )
        )

    spec_path = out_dir / "render_spec.json"
    spec_path.write_text(
        json.dumps({"charts": specs}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_index(out_dir / "index.json", entries)
    return spec_path
