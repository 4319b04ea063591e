"""Batch orchestration: extraction runs, simulated studies, and sweeps.

Every batch processes entries independently (one failure never aborts the
rest), persists replayable run records, and reports the convergence rate
and average samples per chart alongside accuracy.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.stats import spearmanr

from .ensemble import EnsembleConfig, EnsembleResult, run_ensemble
from .metrics import (
    MetricConfig,
    corpus_report,
    CorpusReport,
    rms_scores,
    to_triples,
)
from .runio import (
    DatasetIndex,
    IndexEntry,
    RunRecord,
    ensemble_config_to_dict,
    list_record_ids,
    load_run_record,
    read_truth,
    replay_tables,
    write_failed_record,
    write_index,
    write_run_record,
)
from .sampler import NoiseModel, SamplerConfig, make_simulated_sampler, vlm_sample
from .tables import NormalizedTable, to_tsv
from .ensemble import aggregate

COUNTRY_POOL = (
    "France",
    "Germany",
    "Brazil",
    "Japan",
    "Kenya",
    "Canada",
    "Norway",
    "India",
    "Chile",
    "Egypt",
    "Poland",
    "Mexico",
)


@dataclass(frozen=True)
class EntryOutcome:
    entry_id: str
    ok: bool
    error: str | None
    converged: bool
    samples_used: int
    u_med: float | None
    u_mean: float | None
    u_max: float | None
    wall_time_s: float
    request_count: int


def _outcome_from_result(
    entry_id: str, result: EnsembleResult, wall: float, requests: int
) -> EntryOutcome:
    return EntryOutcome(
        entry_id=entry_id,
        ok=True,
        error=None,
        converged=result.convergence.converged,
        samples_used=result.convergence.samples_used,
        u_med=result.u_med,
        u_mean=result.u_mean,
        u_max=result.u_max,
        wall_time_s=wall,
        request_count=requests,
    )


def write_summary(run_dir: Path, outcomes: Sequence[EntryOutcome]) -> None:
    header = [
        "id",
        "ok",
        "converged",
        "samples_used",
        "u_med",
        "u_mean",
        "u_max",
        "wall_time_s",
        "request_count",
        "error",
    ]

    def fmt(x: float | None) -> str:
        return "" if x is None else f"{x:.6g}"

    lines = ["\t".join(header)]
    for o in outcomes:
        lines.append(
            "\t".join(
                [
                    o.entry_id,
                    str(o.ok).lower(),
                    str(o.converged).lower(),
                    str(o.samples_used),
                    fmt(o.u_med),
                    fmt(o.u_mean),
                    fmt(o.u_max),
                    f"{o.wall_time_s:.3f}",
                    str(o.request_count),
                    o.error or "",
                ]
            )
        )
    (run_dir / "summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def batch_stats(outcomes: Sequence[EntryOutcome]) -> tuple[float, float]:
    """(convergence rate, average samples used) over successful entries."""
    done = [o for o in outcomes if o.ok]
    if not done:
        return (0.0, 0.0)
    rate = sum(o.converged for o in done) / len(done)
    s_bar = statistics.fmean(o.samples_used for o in done)
    return (rate, s_bar)


def _run_entries(
    ids: Sequence[str],
    worker: Callable[[str], EntryOutcome],
    jobs: int,
) -> list[EntryOutcome]:
    if jobs <= 1:
        return [worker(entry_id) for entry_id in ids]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, ids))


def extract_batch(
    index: DatasetIndex,
    sampler_cfg: SamplerConfig,
    cfg: EnsembleConfig,
    out_dir: Path,
    jobs: int = 1,
) -> list[EntryOutcome]:
    """Run the live sampler over every indexed chart image."""
    out_dir.mkdir(parents=True, exist_ok=True)
    config_dict = ensemble_config_to_dict(cfg)
    by_id = {e.id: e for e in index.entries}

    def worker(entry_id: str) -> EntryOutcome:
        entry = by_id[entry_id]
        started = time.monotonic()
        requests = 0
        try:
            if entry.image_path is None:
                raise FileNotFoundError("index entry has no image_path")
            image_bytes = Path(entry.image_path).read_bytes()

            def sample(_draw: int) -> str:
                nonlocal requests
                requests += 1
                return vlm_sample(image_bytes, sampler_cfg)

            result = run_ensemble(sample, cfg)
            wall = time.monotonic() - started
            write_run_record(out_dir, entry_id, result, config_dict, wall, requests)
            return _outcome_from_result(entry_id, result, wall, requests)
        except Exception as exc:  # per-entry isolation
            wall = time.monotonic() - started
            write_failed_record(out_dir, entry_id, f"{type(exc).__name__}: {exc}")
            return EntryOutcome(
                entry_id=entry_id,
                ok=False,
                error=f"{type(exc).__name__}: {exc}",
                converged=False,
                samples_used=0,
                u_med=None,
                u_mean=None,
                u_max=None,
                wall_time_s=wall,
                request_count=requests,
            )

    outcomes = _run_entries([e.id for e in index.entries], worker, jobs)
    write_summary(out_dir, outcomes)
    return outcomes


def generate_truth_tables(
    n_charts: int, rows: int, cols: int, seed: int
) -> list[tuple[str, NormalizedTable]]:
    """Synthetic ground truth: year rows, country columns, positive values."""
    if cols > len(COUNTRY_POOL):
        raise ValueError(f"at most {len(COUNTRY_POOL)} columns supported")
    charts = []
    for i in range(n_charts):
        rng = np.random.default_rng((seed, i))
        start = 1980 + int(rng.integers(0, 30))
        countries = [COUNTRY_POOL[int(j)] for j in rng.choice(len(COUNTRY_POOL), cols, replace=False)]
        values = tuple(
            tuple(float(v) for v in rng.uniform(20.0, 500.0, size=cols)) for _ in range(rows)
        )
        truth = NormalizedTable(
            row_labels=tuple(str(start + r) for r in range(rows)),
            col_labels=tuple(countries),
            values=values,
        )
        charts.append((f"sim_{i:04d}", truth))
    return charts


@dataclass(frozen=True)
class SimEntry:
    entry_id: str
    truth: NormalizedTable
    noise: NoiseModel
    metadata: Mapping[str, Any]


@dataclass(frozen=True)
class SimulateReport:
    ensemble_f1: float
    single_sample_f1: float
    convergence_rate: float
    avg_samples: float
    uncertainty_f1_spearman: float | None
    per_entry: tuple[dict[str, Any], ...]


def simulate_batch(
    entries: Sequence[SimEntry],
    cfg: EnsembleConfig,
    out_dir: Path,
    metric_cfg: MetricConfig | None = None,
    jobs: int = 1,
    run_seed: int = 0,
) -> SimulateReport:
    """Run simulated ensembles, persist records + truth, and score them."""
    metric_cfg = metric_cfg or MetricConfig()
    out_dir.mkdir(parents=True, exist_ok=True)
    truth_dir = out_dir / "truth"
    truth_dir.mkdir(exist_ok=True)
    config_dict = ensemble_config_to_dict(cfg)
    by_id = {e.entry_id: e for e in entries}

    index_entries = []
    for e in entries:
        truth_path = truth_dir / f"{e.entry_id}.tsv"
        truth_path.write_text(to_tsv(e.truth) + "\n", encoding="utf-8")
        index_entries.append(
            IndexEntry(id=e.entry_id, truth_path=truth_path, metadata=dict(e.metadata))
        )
    write_index(out_dir / "index.json", index_entries)

    rows: dict[str, dict[str, Any]] = {}

    def worker(entry_id: str) -> EntryOutcome:
        e = by_id[entry_id]
        started = time.monotonic()
        sampler = make_simulated_sampler(e.truth, e.noise)
        result = run_ensemble(sampler, cfg, seed=run_seed)
        wall = time.monotonic() - started
        write_run_record(out_dir, entry_id, result, config_dict, wall, result.convergence.samples_used)
        truth_triples = to_triples(e.truth)
        ens_f1 = rms_scores(to_triples(result.table), truth_triples, metric_cfg).f1
        singles = [
            rms_scores(to_triples(t), truth_triples, metric_cfg).f1 for t in result.raw_samples
        ]
        rows[entry_id] = {
            "id": entry_id,
            "ensemble_f1": ens_f1,
            "single_sample_f1": statistics.fmean(singles) if singles else 0.0,
            "converged": result.convergence.converged,
            "samples_used": result.convergence.samples_used,
            "u_med": result.u_med,
            "u_mean": result.u_mean,
            "u_max": result.u_max,
            **dict(e.metadata),
        }
        return _outcome_from_result(entry_id, result, wall, result.convergence.samples_used)

    outcomes = _run_entries([e.entry_id for e in entries], worker, jobs)
    write_summary(out_dir, outcomes)

    ordered = [rows[e.entry_id] for e in entries]
    rate, s_bar = batch_stats(outcomes)
    u stad = None  # placeholder; replaced below
    return _finalize_simulate_report(ordered, rate, s_bar, out_dir)


def _finalize_simulate_report(
    ordered: Sequence[dict[str, Any]], rate: float, s_bar: float, out_dir: Path
) -> SimulateReport:
    import json

    defined = [
        (row["u_mean"], row["ensemble_f1"]) for row in ordered if row["u_mean"] is not None
    ]
    rho: float | None = None
    if len(defined) >= 3:
        coeff = spearmanr([u for u, _ in defined], [f for _, f in defined]).statistic
        rho = None if np.isnan(coeff) else float(coeff)
    report = SimulateReport(
        ensemble_f1=statistics.fmean(row["ensemble_f1"] for row in ordered) if ordered else 0.0,
        single_sample_f1=(
            statistics.fmean(row["single_sample_f1"] for row in ordered) if ordered else 0.0
        ),
        convergence_rate=rate,
        avg_samples=s_bar,
        uncertainty_f1_spearman=rho,
        per_entry=tuple(ordered),
    )
    payload = {
        "ensemble_f1": report.ensemble_f1,
        "single_sample_f1": report.single_sample_f1,
        "convergence_rate": report.convergence_rate,
        "avg_samples": report.avg_samples,
        "uncertainty_f1_spearman": report.uncertainty_f1_spearman,
        "per_entry": list(report.per_entry),
    }
    (out_dir / "simulate_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return report


SWEEP_AXES = ("patience", "coverage", "tolerance", "prune", "k", "temperature")


@dataclass(frozen=True)
class SweepRow:
    value: float
    f1: float
    avg_samples: float
    convergence_rate: float


def _apply_axis(cfg: EnsembleConfig, axis: str, value: float) -> EnsembleConfig:
    if axis == "patience":
        return replace(cfg, patience=int(value))
    if axis == "coverage":
        return replace(cfg, coverage=value)
    if axis == "tolerance":
        return replace(cfg, tolerance=value)
    if axis == "prune":
        return replace(cfg, align=replace(cfg.align, prune_fraction=value))
    raise ValueError(f"axis {axis!r} cannot be applied to an ensemble config")


def rerun_on_stream(texts: Sequence[str], cfg: EnsembleConfig) -> EnsembleResult:
    """Re-drive the controller over a stored sample stream; no sampler calls."""
    capped = replace(cfg, k_max=min(cfg.k_max, max(len(texts), cfg.initial_samples)))
    return run_ensemble(lambda i: texts[i], capped, seed=0)


def sweep_stored(
    run_dir: Path,
    axis: str,
    values: Sequence[float],
    metric_cfg: MetricConfig | None = None,
) -> list[SweepRow]:
    """Sweep a convergence/pruning axis (or k) by replaying stored samples.

    Requires the run directory to contain a ``truth/`` folder (simulate
    runs write one) so F1 can be recomputed per value.
    """
    metric_cfg = metric_cfg or MetricConfig()
    run_dir = Path(run_dir)
    ids = list_record_ids(run_dir)
    if not ids:
        raise ValueError(f"no run records under {run_dir}")
    records: list[RunRecord] = [load_run_record(run_dir, i) for i in ids]
    truths = {}
    for entry_id in ids:
        truth_path = run_dir / "truth" / f"{entry_id}.tsv"
        truths[entry_id] = to_triples(read_truth(truth_path))

    out: list[SweepRow] = []
    if axis == "k":
        for value in values:
            k = int(value)
            f1s, converged = [], []
            for rec in records:
                from .runio import ensemble_config_from_dict

                cfg = ensemble_config_from_dict(rec.config)
                tables = [t for t in replay_tables(rec) if t.source_id < k]
                if tables:
                    agg = aggregate(tables, cfg)
                    f1s.append(rms_scores(to_triples(agg), truths[rec.entry_id], metric_cfg).f1)
                else:
                    f1s.append(0.0)
                conv = rec.record["convergence"]
                converged.append(bool(conv["converged"]) and conv["samples_used"] <= k)
            out.append(
                SweepRow(
                    value=float(k),
                    f1=statistics.fmean(f1s),
                    avg_samples=statistics.fmean(
                        min(k, len(rec.sample_texts)) for rec in records
                    ),
                    convergence_rate=statistics.fmean(converged),
                )
            )
        return out

    if axis == "temperature":
        raise ValueError(
            "temperature cannot be swept from stored samples; rerun extraction or simulation"
        )

    for value in values:
        f1s, samples, converged = [], [], []
        for rec in records:
            from .runio import ensemble_config_from_dict

            cfg = _apply_axis(ensemble_config_from_dict(rec.config), axis, value)
            result = rerun_on_stream(rec.sample_texts, cfg)
            f1s.append(rms_scores(to_triples(result.table), truths[rec.entry_id], metric_cfg).f1)
            samples.append(result.convergence.samples_used)
            converged.append(result.convergence.converged)
        out.append(
            SweepRow(
                value=float(value),
                f1=statistics.fmean(f1s),
                avg_samples=statistics.fmean(samples),
                convergence_rate=statistics.fmean(converged),
            )
        )
    return out


def sweep_rows_to_tsv(axis: str, rows: Sequence[SweepRow]) -> str:
    lines = ["\t".join([axis, "f1", "s_bar", "convergence_rate"])]
    for r in rows:
        lines.append(f"{r.value:g}\t{r.f1:.4f}\t{r.avg_samples:.4f}\t{r.convergence_rate:.4f}")
    return "\n".join(lines) + "\n"


def evaluate_run(
    index: DatasetIndex,
    run_dir: Path | None,
    predictions_dir: Path | None,
    metric_cfg: MetricConfig | None = None,
    group_by: Sequence[str] = (),
) -> tuple[CorpusReport, list[str]]:
    """Score stored predictions against indexed ground truth.

    A missing prediction file scores as an empty prediction (everything
    missing) with a warning; a missing truth file is an error for that
    entry and is reported in the warning list.
    """
    metric_cfg = metric_cfg or MetricConfig()
    warnings: list[str] = []
    pairs = []
    for entry in index.entries:
        try:
            truth = to_triples(read_truth(entry.truth_path))
        except Exception as exc:
            warnings.append(f"{entry.id}: unreadable truth ({exc})")
            continue
        metadata = dict(entry.metadata)
        pred_table = None
        if run_dir is not None:
            table_path = Path(run_dir) / entry.id / "table.tsv"
            record_path = Path(run_dir) / entry.id / "record.json"
            if record_path.exists():
                import json

                record = json.loads(record_path.read_text(encoding="utf-8"))
                conv = record.get("convergence")
                if conv:
                    metadata["samples_used"] = conv["samples_used"]
        else:
            table_path = Path(predictions_dir or ".") / f"{entry.id}.tsv"
        if table_path.exists():
            try:
                pred_table = read_truth(table_path)
            except Exception as exc:
                warnings.append(f"{entry.id}: unreadable prediction ({exc}); scored as empty")
        else:
            warnings.append(f"{entry.id}: no prediction at {table_path}; scored as empty")
        pred = to_triples(pred_table) if pred_table is not None else ()
        pairs.append((entry.id, pred, truth, metadata))
    if not pairs:
        raise ValueError("no scoreable entries (all truths unreadable or index empty)")
    return corpus_report(pairs, metric_cfg, group_by=group_by), warnings
