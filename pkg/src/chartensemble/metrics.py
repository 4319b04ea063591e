"""Score predicted tables against ground truth.

A table is compared as an unordered set of (row key, column key, value)
triples. The headline score is a mapping-level F1 built on a minimum-cost
bipartite matching of concatenated keys, with per-entry similarity that
multiplies a thresholded key score by a clipped relative-error value score,
maximized over transposition of the prediction. Two header-agnostic
companions (a value multiset similarity and the mean matched deviation) and
a five-way error decomposition round out the suite.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .editdist import normalized_distance_clipped
from .tables import AggregatedTable, NormalizedTable

# Joins row and column keys; prevents collisions like "ab"+"c" vs "a"+"bc".
KEY_SEPARATOR = "\x1f"


class MetricError(ValueError):
    """Base class for metric failures."""


class NoMatchedPairs(MetricError):
    """Mean deviation is undefined: no real value pair was matched."""


class EmptyCorpus(MetricError):
    """A corpus report over zero examples is undefined."""


@dataclass(frozen=True)
class Triple:
    """One table entry: (row key, column key, finite value)."""

    row_key: str
    col_key: str
    value: float


@dataclass(frozen=True)
class MetricConfig:
    """Thresholds: key distances above ``key_tau`` clip to 1; value relative
    errors above ``value_theta`` score as total mismatches."""

    key_tau: float = 0.5
    value_theta: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.key_tau <= 1.0:
            raise ValueError("key_tau must be in (0, 1]")
        if not 0.0 < self.value_theta <= 1.0:
            raise ValueError("value_theta must be in (0, 1]")


@dataclass(frozen=True)
class RmsScores:
    """Mapping-level precision/recall/F1, as percentages."""

    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ErrorBreakdown:
    """Decomposition of 100% into correct mass plus four error categories."""

    correct: float
    value_err: float
    label_err: float
    missing: float
    extra: float

    def total(self) -> float:
        return self.correct + self.value_err + self.label_err + self.missing + self.extra


def to_triples(table: NormalizedTable | AggregatedTable) -> tuple[Triple, ...]:
    """One triple per non-missing cell, in row-major order."""
    if isinstance(table, AggregatedTable):
        grid: Sequence[Sequence[float | None]] = table.value_grid()
    else:
        grid = table.values
    return tuple(
        Triple(row_key=r, col_key=c, value=grid[i][j])
        for i, r in enumerate(table.row_labels)
        for j, c in enumerate(table.col_labels)
        if grid[i][j] is not None
    )


def _key(t: Triple) -> str:
    return t.row_key + KEY_SEPARATOR + t.col_key


def key_distance(p: Triple, t: Triple, cfg: MetricConfig) -> float:
    """Normalized edit distance between concatenated keys, clipped above tau."""
    return normalized_distance_clipped(_key(p), _key(t), cfg.key_tau)


def _relative_distance(p: float, t: float) -> float:
    if t == 0.0:
        return 0.0 if p == 0.0 else 1.0
    return min(1.0, abs(p - t) / abs(t))


def value_distance(p: float, t: float, cfg: MetricConfig) -> float:
    """Clipped relative error; anything beyond theta is a total mismatch."""
    d = _relative_distance(p, t)
    return 1.0 if d > cfg.value_theta else d


def entry_similarity(p: Triple, t: Triple, cfg: MetricConfig) -> float:
    """High only when both the headers and the value agree."""
    return (1.0 - key_distance(p, t, cfg)) * (1.0 - value_distance(p.value, t.value, cfg))


@dataclass(frozen=True)
class MatchDetail:
    """The winning matching, for error decomposition."""

    scores: RmsScores
    pairs: tuple[tuple[Triple, Triple], ...]  # (prediction, truth)
    unmatched_pred: tuple[Triple, ...]
    unmatched_truth: tuple[Triple, ...]
    swapped: bool  # True when the transposed prediction won


def _swap(triples: Sequence[Triple]) -> tuple[Triple, ...]:
    return tuple(Triple(row_key=t.col_key, col_key=t.row_key, value=t.value) for t in triples)


def _match_one(
    pred: Sequence[Triple], truth: Sequence[Triple], cfg: MetricConfig, swapped: bool
) -> MatchDetail:
    n, m = len(pred), len(truth)
    if n == 0 and m == 0:
        return MatchDetail(RmsScores(100.0, 100.0, 100.0), (), (), (), swapped)
    if n == 0 or m == 0:
        return MatchDetail(RmsScores(0.0, 0.0, 0.0), (), tuple(pred), tuple(truth), swapped)
    cost = np.empty((n, m))
    for i, p in enumerate(pred):
        for j, t in enumerate(truth):
            cost[i, j] = key_distance(p, t, cfg)
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple((pred[i], truth[j]) for i, j in zip(rows, cols))
    similarity = sum(entry_similarity(p, t, cfg) for p, t in pairs)
    precision = 100.0 * similarity / n
    recall = 100.0 * similarity / m
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    matched_p = set(rows.tolist())
    matched_t = set(cols.tolist())
    return MatchDetail(
        scores=RmsScores(precision=precision, recall=recall, f1=f1),
        pairs=pairs,
        unmatched_pred=tuple(p for i, p in enumerate(pred) if i not in matched_p),
        unmatched_truth=tuple(t for j, t in enumerate(truth) if j not in matched_t),
        swapped=swapped,
    )


def rms_matching(
    pred: Sequence[Triple], truth: Sequence[Triple], cfg: MetricConfig
) -> MatchDetail:
    """Match keys at minimum cost, for the prediction and its transpose.

    Returns whichever variant yields the higher F1 (ties keep the
    untransposed prediction).
    """
    base = _match_one(pred, truth, cfg, swapped=False)
    alt = _match_one(_swap(pred), truth, cfg, swapped=True)
    return alt if alt.scores.f1 > base.scores.f1 else base


def rms_scores(
    pred: Sequence[Triple], truth: Sequence[Triple], cfg: MetricConfig | None = None
) -> RmsScores:
    """Transposition-invariant mapping precision/recall/F1 in [0, 100]."""
    return rms_matching(pred, truth, cfg or MetricConfig()).scores


def error_breakdown(
    pred: Sequence[Triple], truth: Sequence[Triple], cfg: MetricConfig | None = None
) -> ErrorBreakdown:
    """Split 100% into correct + value/label/missing/extra error masses.

    Correct equals the example's F1; the four raw error masses (value and
    label disagreement over matched pairs, one unit per unmatched truth or
    prediction entry) are rescaled proportionally to fill 100 - F1.
    """
    cfg = cfg or MetricConfig()
    detail = rms_matching(pred, truth, cfg)
    f1 = detail.scores.f1
    value_mass = 0.0
    label_mass = 0.0
    for p, t in detail.pairs:
        kd = key_distance(p, t, cfg)
        vd = value_distance(p.value, t.value, cfg)
        value_mass += (1.0 - kd) * vd
        label_mass += kd
    missing_mass = float(len(detail.unmatched_truth))
    extra_mass = float(len(detail.unmatched_pred))
    raw_total = value_mass + label_mass + missing_mass + extra_mass
    if raw_total == 0.0:
        return ErrorBreakdown(correct=f1, value_err=0.0, label_err=0.0, missing=0.0, extra=0.0)
    scale = (100.0 - f1) / raw_total
    return ErrorBreakdown(
        correct=f1,
        value_err=value_mass * scale,
        label_err=label_mass * scale,
        missing=missing_mass * scale,
        extra=extra_mass * scale,
    )


def _value_matching(
    pred_values: Sequence[float], truth_values: Sequence[float]
) -> tuple[list[float], int, int]:
    """Min-cost matching of value multisets; returns (matched distances, N, M)."""
    n, m = len(pred_values), len(truth_values)
    if n == 0 or m == 0:
        return ([], n, m)
    d = np.empty((n, m))
    for i, p in enumerate(pred_values):
        for j, g in enumerate(truth_values):
            d[i, j] = _relative_distance(p, g)
    rows, cols = linear_sum_assignment(d)
    return ([float(d[i, j]) for i, j in zip(rows, cols)], n, m)


def rnss(pred_values: Sequence[float], truth_values: Sequence[float]) -> float:
    """Header-agnostic value multiset similarity in [0, 1].

    Unpaired entries on either side cost a full unit each (the cardinality
    penalty); matched pairs cost their clipped relative distance. Two empty
    sets are identical.
    """
    matched, n, m = _value_matching(pred_values, truth_values)
    if n == 0 and m == 0:
        return 1.0
    return 1.0 - (sum(matched) + abs(n - m)) / max(n, m)


def rd(pred_values: Sequence[float], truth_values: Sequence[float]) -> float:
    """Mean clipped relative distance over the matched real value pairs.

    Raises:
        NoMatchedPairs: either side is empty, so no real pair exists.
    """
    matched, _, _ = _value_matching(pred_values, truth_values)
    if not matched:
        raise NoMatchedPairs("no real value pairs were matched")
    return statistics.fmean(matched)


def triple_values(triples: Sequence[Triple]) -> list[float]:
    return [t.value for t in triples]


@dataclass(frozen=True)
class ExampleScore:
    """Per-example metric bundle; ``rd`` is None when undefined."""

    example_id: str
    rms: RmsScores
    rnss: float
    rd: float | None
    breakdown: ErrorBreakdown
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class GroupStats:
    """Macro-averaged scores for one group of examples."""

    name: str
    count: int
    precision: float
    recall: float
    f1: float
    rnss: float
    rd: float | None
    breakdown: ErrorBreakdown
    avg_samples_used: float | None


@dataclass(frozen=True)
class CorpusReport:
    overall: GroupStats
    groups: dict[str, tuple[GroupStats, ...]]  # group-by key -> group rows
    examples: tuple[ExampleScore, ...]


def score_example(
    example_id: str,
    pred: Sequence[Triple],
    truth: Sequence[Triple],
    cfg: MetricConfig | None = None,
    metadata: Mapping[str, Any] | None = None,
) -> ExampleScore:
    cfg = cfg or MetricConfig()
    pv, tv = triple_values(pred), triple_values(truth)
    try:
        deviation: float | None = rd(pv, tv)
    except NoMatchedPairs:
        deviation = None
    return ExampleScore(
        example_id=example_id,
        rms=rms_scores(pred, truth, cfg),
        rnss=rnss(pv, tv),
        rd=deviation,
        breakdown=error_breakdown(pred, truth, cfg),
        metadata=dict(metadata or {}),
    )


def _aggregate_group(name: str, scores: Sequence[ExampleScore]) -> GroupStats:
    deviations = [s.rd for s in scores if s.rd is not None]
    samples = [
        float(s.metadata["samples_used"])
        for s in scores
        if isinstance(s.metadata.get("samples_used"), (int, float))
    ]
    breakdown = ErrorBreakdown(
        correct=statistics.fmean(s.breakdown.correct for s in scores),
        value_err=statistics.fmean(s.breakdown.value_err for s in scores),
        label_err=statistics.fmean(s.breakdown.label_err for s in scores),
        missing=statistics.fmean(s.breakdown.missing for s in scores),
        extra=statistics.fmean(s.breakdown.extra for s in scores),
    )
    return GroupStats(
        name=name,
        count=len(scores),
        precision=statistics.fmean(s.rms.precision for s in scores),
        recall=statistics.fmean(s.rms.recall for s in scores),
        f1=statistics.fmean(s.rms.f1 for s in scores),
        rnss=statistics.fmean(s.rnss for s in scores),
        rd=statistics.fmean(deviations) if deviations else None,
        breakdown=breakdown,
        avg_samples_used=statistics.fmean(samples) if samples else None,
    )


def corpus_report(
    pairs: Iterable[
        tuple[str, Sequence[Triple], Sequence[Triple], Mapping[str, Any] | None]
    ],
    cfg: MetricConfig | None = None,
    group_by: Sequence[str] = (),
) -> CorpusReport:
    """Macro-averaged scores overall and per metadata group.

    ``pairs`` yields (example_id, predicted triples, truth triples,
    metadata). Every key in ``group_by`` produces one block of group rows
    keyed by the examples' metadata values; ``samples_used`` metadata, when
    present, is averaged into each row.

    Raises:
        EmptyCorpus: no examples were supplied.
    """
    cfg = cfg or MetricConfig()
    scores = [
        score_example(example_id, pred, truth, cfg, metadata)
        for example_id, pred, truth, metadata in pairs
    ]
    if not scores:
        raise EmptyCorpus("corpus_report needs at least one example")
    groups: dict[str, tuple[GroupStats, ...]] = {}
    for key in group_by:
        buckets: dict[str, list[ExampleScore]] = {}
        for s in scores:
            buckets.setdefault(str(s.metadata.get(key, "<unset>")), []).append(s)
        groups[key] = tuple(
            _aggregate_group(name, bucket) for name, bucket in sorted(buckets.items())
        )
    return CorpusReport(
        overall=_aggregate_group("overall", scores),
        groups=groups,
        examples=tuple(scores),
    )


def report_to_tsv(report: CorpusReport) -> str:
    """Flatten a corpus report into a TSV summary table."""
    header = [
        "group_key",
        "group",
        "n",
        "precision",
        "recall",
        "f1",
        "rnss",
        "rd",
        "correct",
        "value_err",
        "label_err",
        "missing",
        "extra",
        "avg_samples_used",
    ]

    def row(key: str, g: GroupStats) -> list[str]:
        return [
            key,
            g.name,
            str(g.count),
            f"{g.precision:.2f}",
            f"{g.recall:.2f}",
            f"{g.f1:.2f}",
            f"{g.rnss:.4f}",
            "" if g.rd is None else f"{g.rd:.4f}",
            f"{g.breakdown.correct:.2f}",
            f"{g.breakdown.value_err:.2f}",
            f"{g.breakdown.label_err:.2f}",
            f"{g.breakdown.missing:.2f}",
            f"{g.breakdown.extra:.2f}",
            "" if g.avg_samples_used is None else f"{g.avg_samples_used:.2f}",
        ]

    lines = ["\t".join(header), "\t".join(row("", report.overall))]
    for key, rows in report.groups.items():
        for g in rows:
            lines.append("\t".join(row(key, g)))
    return "\n".join(lines)
