"""Dataset indexes and on-disk run records.

A run directory holds one subdirectory per chart with the raw sample texts,
the final consensus table, and a JSON record of configuration, parse
statuses, convergence log, uncertainty, and timing. Records are plain files
so they stay diffable, and they are replayable: re-aggregating the stored
samples must reproduce the stored table byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .align import AlignConfig
from .ensemble import EnsembleConfig, EnsembleResult, aggregate
from .ingest import IngestError, ingest
from .tables import AggregatedTable, NormalizedTable, to_tsv


class RunIOError(RuntimeError):
    """Base class for persistence failures."""


class MissingTruth(RunIOError):
    """An index entry points at a ground-truth file that does not exist."""


@dataclass(frozen=True)
class IndexEntry:
    id: str
    truth_path: Path
    image_path: Path | None = None
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple[IndexEntry, ...]

    def __post_init__(self) -> None:
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("dataset index ids must be unique")


def load_index(path: Path | str) -> DatasetIndex:
    """Read a dataset index; relative paths resolve against the index file."""
    path = Path(path)
    base = path.parent
    data = json.loads(path.read_text(encoding="utf-8"))
    entries = []
    for raw in data["entries"]:
        image = raw.get("image_path")
        entries.append(
            IndexEntry(
                id=str(raw["id"]),
                truth_path=base / raw["truth_path"],
                image_path=(base / image) if image else None,
                metadata=dict(raw.get("metadata", {})),
            )
        )
    return DatasetIndex(entries=tuple(entries))


def write_index(path: Path, entries: Sequence[IndexEntry]) -> None:
    base = path.parent

    def rel(p: Path | None) -> str | None:
        if p is None:
            return None
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    payload = {
        "entries": [
            {
                "id": e.id,
                "truth_path": rel(e.truth_path),
                **({"image_path": rel(e.image_path)} if e.image_path else {}),
                "metadata": dict(e.metadata),
            }
            for e in entries
        ]
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_truth(path: Path | str) -> NormalizedTable:
    """Parse a canonical ground-truth TSV file."""
    path = Path(path)
    if not path.exists():
        raise MissingTruth(f"ground-truth file not found: {path}")
    return ingest(path.read_text(encoding="utf-8"), source_id=0)


def ensemble_config_to_dict(cfg: EnsembleConfig) -> dict[str, Any]:
    return {
        "strategy": cfg.strategy,
        "k_max": cfg.k_max,
        "patience": cfg.patience,
        "coverage": cfg.coverage,
        "tolerance": cfg.tolerance,
        "initial_samples": cfg.initial_samples,
        "cluster_tau": cfg.align.cluster_tau,
        "prune_fraction": cfg.align.prune_fraction,
    }


def ensemble_config_from_dict(d: Mapping[str, Any]) -> EnsembleConfig:
    return EnsembleConfig(
        strategy=d["strategy"],
        k_max=int(d["k_max"]),
        patience=int(d["patience"]),
        coverage=float(d["coverage"]),
        tolerance=float(d["tolerance"]),
        initial_samples=int(d["initial_samples"]),
        align=AlignConfig(
            cluster_tau=float(d["cluster_tau"]),
            prune_fraction=float(d["prune_fraction"]),
        ),
    )


def config_hash(config: Mapping[str, Any]) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _sample_name(draw: int) -> str:
    return f"sample_{draw:03d}.txt"


def write_run_record(
    run_dir: Path,
    entry_id: str,
    result: EnsembleResult,
    config: Mapping[str, Any],
    wall_time_s: float,
    request_count: int,
) -> Path:
    entry_dir = run_dir / entry_id
    samples_dir = entry_dir / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)
    for draw, text in enumerate(result.sample_texts):
        (samples_dir / _sample_name(draw)).write_text(text, encoding="utf-8")
    (entry_dir / "table.tsv").write_text(to_tsv(result.table) + "\n", encoding="utf-8")
    failures = {f.draw: f.reason for f in result.failures}
    record = {
        "id": entry_id,
        "config": dict(config),
        "config_hash": config_hash(config),
        "samples": [
            {"draw": draw, "parse_ok": draw not in failures, "error": failures.get(draw)}
            for draw in range(len(result.sample_texts))
        ],
        "convergence": {
            "converged": result.convergence.converged,
            "samples_used": result.convergence.samples_used,
            "consecutive_stable": result.convergence.consecutive_stable,
            "per_update_log": [
                [entry.k, entry.fraction_unchanged, entry.stable]
                for entry in result.convergence.per_update_log
            ],
        },
        "uncertainty": {"u_med": result.u_med, "u_mean": result.u_mean, "u_max": result.u_max},
        "wall_time_s": wall_time_s,
        "request_count": request_count,
    }
    (entry_dir / "record.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return entry_dir


def write_failed_record(run_dir: Path, entry_id: str, error: str) -> Path:
    entry_dir = run_dir / entry_id
    entry_dir.mkdir(parents=True, exist_ok=True)
    record = {"id": entry_id, "error": error}
    (entry_dir / "record.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return entry_dir


@dataclass(frozen=True)
class RunRecord:
    """A stored per-chart run, sufficient for replay and re-sweeping."""

    entry_id: str
    config: dict[str, Any]
    sample_texts: tuple[str, ...]
    table_tsv: str
    record: dict[str, Any]

    @property
    def samples_used(self) -> int:
        return int(self.record["convergence"]["samples_used"])

    @property
    def converged(self) -> bool:
        return bool(self.record["convergence"]["converged"])

    def uncertainty(self, which: str) -> float | None:
        return self.record["uncertainty"][which]


def load_run_record(run_dir: Path, entry_id: str) -> RunRecord:
    entry_dir = Path(run_dir) / entry_id
    record = json.loads((entry_dir / "record.json").read_text(encoding="utf-8"))
    if "error" in record and "config" not in record:
        raise RunIOError(f"entry {entry_id} failed during extraction: {record['error']}")
    samples_dir = entry_dir / "samples"
    texts = []
    for draw in range(len(record["samples"])):
        texts.append((samples_dir / _sample_name(draw)).read_text(encoding="utf-8"))
    return RunRecord(
        entry_id=entry_id,
        config=record["config"],
        sample_texts=tuple(texts),
        table_tsv=(entry_dir / "table.tsv").read_text(encoding="utf-8"),
        record=record,
    )


def list_record_ids(run_dir: Path) -> list[str]:
    run_dir = Path(run_dir)
    return sorted(
        p.parent.name for p in run_dir.glob("*/record.json")
    )


def replay_tables(record: RunRecord) -> list[NormalizedTable]:
    """Re-parse the stored raw samples with their original source ids."""
    tables = []
    for draw, text in enumerate(record.sample_texts):
        try:
            tables.append(ingest(text, source_id=draw))
        except IngestError:
            continue
    return tables


def replay_aggregate(record: RunRecord) -> AggregatedTable:
    """Re-aggregate the stored samples under the stored configuration."""
    cfg = ensemble_config_from_dict(record.config)
    tables = replay_tables(record)
    if not tables:
        raise RunIOError(f"record {record.entry_id} has no parseable sample")
    return aggregate(tables, cfg)
