"""Normalized Levenshtein similarity, shared by label clustering and metrics.

No edit-distance package is available in this environment, so the core is a
small banded dynamic program with a cost cap: callers that only need to know
whether the distance exceeds a threshold (cluster membership, metric key
clipping) get an early exit, and results are memoized because the same label
pairs recur across samples and charts.
"""

from __future__ import annotations

from functools import lru_cache


@lru_cache(maxsize=1 << 18)
def levenshtein_capped(a: str, b: str, cap: int) -> int:
    """Edit distance between ``a`` and ``b``, or ``cap + 1`` when it exceeds ``cap``."""
    if a == b:
        return 0
    if len(a) > len(b):
        a, b = b, a
    la, lb = len(a), len(b)
    if lb - la > cap:
        return cap + 1
    if la == 0:
        return lb if lb <= cap else cap + 1
    prev = list(range(la + 1))
    for j in range(1, lb + 1):
        bj = b[j - 1]
        cur = [j] + [0] * la
        best = j
        for i in range(1, la + 1):
            c = prev[i] + 1
            d = cur[i - 1] + 1
            if d < c:
                c = d
            d = prev[i - 1] + (a[i - 1] != bj)
            if d < c:
                c = d
            cur[i] = c
            if c < best:
                best = c
        if best > cap:
            return cap + 1
        prev = cur
    d = prev[la]
    return d if d <= cap else cap + 1


def levenshtein(a: str, b: str) -> int:
    """Exact edit distance."""
    return levenshtein_capped(a, b, max(len(a), len(b)))


def _fold(s: str) -> str:
    return s.strip().lower()


def nls(a: str, b: str) -> float:
    """Normalized Levenshtein similarity in [0, 1].

    Comparison is case-insensitive and whitespace-trimmed. Two empty
    strings are identical (1.0); an empty string is maximally far from any
    non-empty one (0.0).
    """
    a2, b2 = _fold(a), _fold(b)
    if a2 == b2:
        return 1.0
    m = max(len(a2), len(b2))
    return 1.0 - levenshtein(a2, b2) / m


def normalized_distance_clipped(a: str, b: str, tau: float) -> float:
    """Normalized edit distance with values above ``tau`` clipped to 1.

    Same case/whitespace folding as :func:`nls`. Both inputs empty gives 0.
    """
    a2, b2 = _fold(a), _fold(b)
    if a2 == b2:
        return 0.0
    m = max(len(a2), len(b2))
    # d/m <= tau  <=>  d <= floor(tau*m); epsilon absorbs float fuzz in tau*m
    cap = int(tau * m + 1e-9)
    d = levenshtein_capped(a2, b2, cap)
    return 1.0 if d > cap else d / m
