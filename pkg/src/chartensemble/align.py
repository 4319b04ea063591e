"""Cluster noisy row/column labels across samples into canonical groups.

Labels for the same chart element drift between samples ("France",
"Frace", "FRANCE"); greedy clustering under normalized Levenshtein
similarity groups them, with the constraint that no cluster may hold two
labels from the same sampled table (within-table duplicates are distinct
elements by definition). Low-support clusters are pruned as spurious.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .editdist import nls

__all__ = ["AlignConfig", "ClusterMember", "LabelCluster", "greedy_cluster", "prune", "nls"]


@dataclass(frozen=True)
class AlignConfig:
    """Clustering threshold and pruning fraction.

    ``cluster_tau`` is the minimum similarity to a cluster representative
    for membership; ``prune_fraction`` is the minimum fraction of sampled
    tables a cluster must appear in to survive (0 disables pruning).
    """

    cluster_tau: float = 0.5
    prune_fraction: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.cluster_tau <= 1.0:
            raise ValueError(f"cluster_tau must be in [0, 1], got {self.cluster_tau}")
        if not 0.0 <= self.prune_fraction <= 1.0:
            raise ValueError(f"prune_fraction must be in [0, 1], got {self.prune_fraction}")


@dataclass(frozen=True)
class ClusterMember:
    label: str
    source_id: int
    index: int  # position of the label within its table's label list


@dataclass
class LabelCluster:
    """One group of near-identical labels, at most one per source table."""

    representative: str  # first label assigned; anchor for similarity tests
    members: list[ClusterMember] = field(default_factory=list)
    _sources: set[int] = field(default_factory=set, repr=False)

    def add(self, member: ClusterMember) -> None:
        if member.source_id in self._sources:
            raise ValueError(f"cluster already has a member from table {member.source_id}")
        self.members.append(member)
        self._sources.add(member.source_id)

    def has_source(self, source_id: int) -> bool:
        return source_id in self._sources

    @property
    def support(self) -> int:
        """Number of distinct source tables contributing a member."""
        return len(self._sources)

    @property
    def canonical(self) -> str:
        """Most frequent member label; ties break to the lexicographically smallest."""
        if not self.members:
            raise ValueError("empty cluster has no canonical label")
        counts = Counter(m.label for m in self.members)
        top = max(counts.values())
        return min(label for label, n in counts.items() if n == top)

    def member_for(self, source_id: int) -> ClusterMember | None:
        for m in self.members:
            if m.source_id == source_id:
                return m
        return None


def greedy_cluster(
    labels_by_table: Iterable[tuple[int, Sequence[str]]],
    cfg: AlignConfig,
) -> list[LabelCluster]:
    """Assign labels to clusters greedily, in (source_id, position) order.

    Each label joins the existing cluster whose representative it is most
    similar to, provided the similarity meets ``cluster_tau`` and the
    cluster has no member from the same table; otherwise it founds a new
    cluster. Similarity ties keep the earliest-created cluster, so output
    is deterministic.
    """
    clusters: list[LabelCluster] = []
    for source_id, labels in sorted(labels_by_table, key=lambda pair: pair[0]):
        for index, label in enumerate(labels):
            best: LabelCluster | None = None
            best_sim = -1.0
            for cluster in clusters:
                if cluster.has_source(source_id):
                    continue
                sim = nls(label, cluster.representative)
                if sim >= cfg.cluster_tau and sim > best_sim:
                    best, best_sim = cluster, sim
            member = ClusterMember(label=label, source_id=source_id, index=index)
            if best is None:
                fresh = LabelCluster(representative=label)
                fresh.add(member)
                clusters.append(fresh)
            else:
                best.add(member)
    return clusters


def prune(clusters: Sequence[LabelCluster], n_tables: int, cfg: AlignConfig) -> list[LabelCluster]:
    """Drop clusters supported by too few tables.

    Retains clusters with support >= ceil(prune_fraction * n_tables); a
    fraction of 0 retains everything. The epsilon keeps exact multiples
    (e.g. 0.2 * 10) from rounding up through float error.
    """
    if n_tables < 1:
        raise ValueError("n_tables must be >= 1")
    if cfg.prune_fraction <= 0.0:
        return list(clusters)
    threshold = math.ceil(cfg.prune_fraction * n_tables - 1e-9)
    return [c for c in clusters if c.support >= threshold]
