"""Consensus aggregation and the adaptive sampling loop.

Given a stream of sampled tables for one chart, this module aligns their
labels, takes a robust per-cell estimate over the aligned values, attaches a
relative-MAD uncertainty to every cell, and keeps drawing samples until the
aggregate stops moving (or the budget runs out).
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

from .align import AlignConfig, LabelCluster, greedy_cluster, prune
from .ingest import IngestError, ingest
from .tables import AggregatedTable, CellAggregate, NormalizedTable

STRATEGIES = ("median", "mean", "huber", "weighted_confidence", "ransac")

# Standard 95%-efficiency Huber configuration.
_HUBER_C = 1.345
_HUBER_SCALE = 1.4826
_HUBER_MAX_ITER = 50
_HUBER_TOL = 1e-8


class EnsembleError(RuntimeError):
    """Base class for ensemble failures."""


class EmptyEnsemble(EnsembleError):
    """No retained cluster; the samples share no usable structure."""


class NoValidSamples(EnsembleError):
    """Every sample up to the budget failed to parse."""


@dataclass(frozen=True)
class EnsembleConfig:
    """Aggregation strategy plus sampling-loop controls.

    The loop draws ``initial_samples`` tables up front, then adds one at a
    time; it stops once ``patience`` consecutive updates leave at least
    ``coverage`` of cells within relative ``tolerance``, or at ``k_max``.
    """

    strategy: str = "median"
    k_max: int = 20
    patience: int = 2
    coverage: float = 0.95
    tolerance: float = 0.01
    initial_samples: int = 2
    align: AlignConfig = field(default_factory=AlignConfig)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.initial_samples < 2:
            raise ValueError("initial_samples must be >= 2")
        if self.k_max < self.initial_samples:
            raise ValueError("k_max must be >= initial_samples")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")
        if not 0.0 < self.tolerance <= 1.0:
            raise ValueError("tolerance must be in (0, 1]")


class UpdateLogEntry(NamedTuple):
    k: int
    fraction_unchanged: float
    stable: bool


@dataclass(frozen=True)
class ConvergenceState:
    consecutive_stable: int
    converged: bool
    samples_used: int
    per_update_log: tuple[UpdateLogEntry, ...]


class SampleFailure(NamedTuple):
    draw: int
    reason: str


@dataclass(frozen=True)
class EnsembleResult:
    table: AggregatedTable
    convergence: ConvergenceState
    u_med: float | None
    u_mean: float | None
    u_max: float | None
    raw_samples: tuple[NormalizedTable, ...]
    sample_texts: tuple[str, ...]
    failures: tuple[SampleFailure, ...]


def _median(values: Sequence[float]) -> float:
    return statistics.median(values)


def _mad(values: Sequence[float], center: float) -> float:
    return statistics.median([abs(v - center) for v in values])


def robust_estimate(values: Sequence[float], strategy: str) -> float:
    """Collapse a non-empty multiset of sampled values to one number.

    All strategies return a value inside [min(values), max(values)].
    """
    if not values:
        raise ValueError("robust_estimate requires at least one value")
    ordered = sorted(values)
    if strategy == "median":
        return _median(ordered)
    if strategy == "mean":
        return statistics.fmean(ordered)
    med = _median(ordered)
    mad = _mad(ordered, med)
    if strategy == "ransac":
        if mad == 0.0:
            inliers = [v for v in ordered if v == med]
        else:
            bound = 2.0 * mad
            inliers = [v for v in ordered if abs(v - med) <= bound]
        return _median(inliers)
    if strategy == "weighted_confidence":
        # Keep the 60% of values most consistent with the median, then average.
        # The epsilon keeps exact multiples (0.6 * 5) from rounding up.
        keep = max(1, math.ceil(0.6 * len(ordered) - 1e-9))
        nearest = sorted(ordered, key=lambda v: (abs(v - med), v))[:keep]
        return statistics.fmean(nearest)
    if strategy == "huber":
        if mad == 0.0:
            return med
        scale = _HUBER_SCALE * mad
        cutoff = _HUBER_C * scale
        mu = med
        for _ in range(_HUBER_MAX_ITER):
            weights = [1.0 if abs(v - mu) <= cutoff else cutoff / abs(v - mu) for v in ordered]
            total = sum(weights)
            mu_next = sum(w * v for w, v in zip(weights, ordered)) / total
            if abs(mu_next - mu) < _HUBER_TOL:
                return mu_next
            mu = mu_next
        return mu
    raise ValueError(f"unknown strategy {strategy!r}")


def cell_uncertainty(values: Sequence[float], estimate: float | None) -> float | None:
    """Relative MAD of the sampled values around the consensus estimate.

    Undefined (None) for empty cells and for a zero estimate, which would
    divide by zero; such cells are excluded from table-level summaries.
    """
    if estimate is None or estimate == 0.0 or not values:
        return None
    return _mad(values, estimate) / abs(estimate)


def summarize_uncertainty(
    table: AggregatedTable,
) -> tuple[float | None, float | None, float | None]:
    """(median, mean, max) of the defined per-cell uncertainties."""
    defined = [c.uncertainty for row in table.cells for c in row if c.uncertainty is not None]
    if not defined:
        return (None, None, None)
    return (statistics.median(defined), statistics.fmean(defined), max(defined))


def _sorted_clusters(clusters: Sequence[LabelCluster]) -> list[LabelCluster]:
    # Stable sort: equal canonical labels keep creation order.
    return sorted(clusters, key=lambda c: c.canonical)


def aggregate(tables: Sequence[NormalizedTable], cfg: EnsembleConfig) -> AggregatedTable:
    """Align row/column labels across samples and aggregate cell-wise.

    For each retained (row cluster, column cluster) pair, the values of
    every sample whose labels fall in both clusters are pooled and reduced
    with the configured strategy; a cell with no contributing value is
    missing. Output rows and columns are ordered by canonical label.

    Raises:
        EmptyEnsemble: pruning left no row or no column cluster.
    """
    if not tables:
        raise ValueError("aggregate requires at least one table")
    n = len(tables)
    row_clusters = prune(
        greedy_cluster([(t.source_id, t.row_labels) for t in tables], cfg.align), n, cfg.align
    )
    col_clusters = prune(
        greedy_cluster([(t.source_id, t.col_labels) for t in tables], cfg.align), n, cfg.align
    )
    if not row_clusters or not col_clusters:
        raise EmptyEnsemble("no cluster survived pruning")

    row_clusters = _sorted_clusters(row_clusters)
    col_clusters = _sorted_clusters(col_clusters)
    by_source = {t.source_id: t for t in tables}
    source_order = sorted(by_source)

    grid: list[tuple[CellAggregate, ...]] = []
    for rc in row_clusters:
        row_index = {m.source_id: m.index for m in rc.members}
        row_cells: list[CellAggregate] = []
        for cc in col_clusters:
            col_index = {m.source_id: m.index for m in cc.members}
            pooled: list[float] = []
            for sid in source_order:
                i = row_index.get(sid)
                j = col_index.get(sid)
                if i is None or j is None:
                    continue
                v = by_source[sid].values[i][j]
                if v is not None:
                    pooled.append(v)
            if pooled:
                estimate = robust_estimate(pooled, cfg.strategy)
                cell = CellAggregate(
                    value=estimate,
                    support=len(pooled),
                    uncertainty=cell_uncertainty(pooled, estimate),
                )
            else:
                cell = CellAggregate(value=None, support=0, uncertainty=None)
            row_cells.append(cell)
        grid.append(tuple(row_cells))

    return AggregatedTable(
        row_labels=tuple(c.canonical for c in row_clusters),
        col_labels=tuple(c.canonical for c in col_clusters),
        cells=tuple(grid),
    )


def _keyed_values(table: AggregatedTable) -> dict[tuple[tuple[str, int], tuple[str, int]], float | None]:
    # Disambiguate duplicate canonical labels by occurrence index so the
    # union universe stays well-defined.
    def occ(labels: Sequence[str]) -> list[tuple[str, int]]:
        seen: dict[str, int] = {}
        keys = []
        for label in labels:
            k = seen.get(label, 0)
            seen[label] = k + 1
            keys.append((label, k))
        return keys

    row_keys = occ(table.row_labels)
    col_keys = occ(table.col_labels)
    return {
        (rk, ck): table.cells[i][j].value
        for i, rk in enumerate(row_keys)
        for j, ck in enumerate(col_keys)
    }


def update_is_stable(
    prev: AggregatedTable, nxt: AggregatedTable, cfg: EnsembleConfig
) -> tuple[bool, float]:
    """Compare consecutive aggregates cell-by-cell over their union.

    A cell is unchanged when present in both with relative change within
    tolerance (or exactly zero in both, or missing in both). Cells that
    appear, disappear, or jump from zero count as changed, so structural
    churn delays convergence.
    """
    old = _keyed_values(prev)
    new = _keyed_values(nxt)
    universe = set(old) | set(new)
    if not universe:
        return (True, 1.0)
    unchanged = 0
    for key in universe:
        if key not in old or key not in new:
            continue
        a, b = old[key], new[key]
        if a is None and b is None:
            unchanged += 1
        elif a is None or b is None:
            continue
        elif a == 0.0:
            unchanged += b == 0.0
        elif abs(b - a) / abs(a) <= cfg.tolerance:
            unchanged += 1
    fraction = unchanged / len(universe)
    return (fraction >= cfg.coverage, fraction)


Sampler = Callable[[int], str]


def run_ensemble(sampler: Sampler, cfg: EnsembleConfig, seed: int = 0) -> EnsembleResult:
    """Drive the sample/aggregate loop for one chart.

    ``sampler`` maps a draw index to raw reply text. ``seed`` offsets the
    draw indices handed to the sampler, so repeated runs with different
    seeds consume independent streams; the controller itself is
    deterministic. Samples that fail to parse consume budget but
    contribute no table.

    Raises:
        NoValidSamples: every draw up to ``k_max`` failed to parse.
        EmptyEnsemble: samples parsed but no cluster survived pruning in
            the final aggregate.
    """
    tables: list[NormalizedTable] = []
    texts: list[str] = []
    failures: list[SampleFailure] = []
    log: list[UpdateLogEntry] = []
    samples_used = 0

    def draw() -> None:
        nonlocal samples_used
        k = samples_used
        samples_used += 1
        text = sampler(seed + k)
        texts.append(text)
        try:
            tables.append(ingest(text, source_id=k))
        except IngestError as exc:
            failures.append(SampleFailure(draw=k, reason=str(exc)))

    def try_aggregate() -> AggregatedTable | None:
        if not tables:
            return None
        try:
            return aggregate(tables, cfg)
        except EmptyEnsemble:
            return None

    for _ in range(cfg.initial_samples):
        draw()
    prev = try_aggregate()

    consecutive = 0
    converged = False
    while samples_used < cfg.k_max and not converged:
        draw()
        current = try_aggregate()
        if prev is None or current is None:
            stable, fraction = False, 0.0
        else:
            stable, fraction = update_is_stable(prev, current, cfg)
        log.append(UpdateLogEntry(k=samples_used, fraction_unchanged=fraction, stable=stable))
        consecutive = consecutive + 1 if stable else 0
        if consecutive >= cfg.patience:
            converged = True
        prev = current

    if not tables:
        raise NoValidSamples(f"no sample parsed within budget k_max={cfg.k_max}")
    final = prev if prev is not None else aggregate(tables, cfg)
    u_med, u_mean, u_max = summarize_uncertainty(final)
    return EnsembleResult(
        table=final,
        convergence=ConvergenceState(
            consecutive_stable=consecutive,
            converged=converged,
            samples_used=samples_used,
            per_update_log=tuple(log),
        ),
        u_med=u_med,
        u_mean=u_mean,
        u_max=u_max,
        raw_samples=tuple(tables),
        sample_texts=tuple(texts),
        failures=tuple(failures),
    )
