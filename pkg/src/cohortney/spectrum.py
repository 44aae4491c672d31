"""Greedy proximity ordering of a similarity matrix and its spectrum splits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .distances import dtw
from .errors import ConfigError, DomainError
from .sequences import EventSequence

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class ConnectionMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError("connection matrix must be square")
        if np.any(a < 0):
            raise DomainError("similarities must be non-negative")
        if not np.allclose(a, a.T, atol=SYMMETRY_TOL, rtol=0):
            raise DomainError("connection matrix must be symmetric")
        a = a.copy()
        np.fill_diagonal(a, 1.0)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class SpectrumOrdering:
    order: tuple[int, ...]
    spectrum: tuple[float, ...]


def _series(seq: EventSequence) -> list[float]:
    # a sequence without events compares as a single point at the origin
    return [float(x) for x in seq.offsets] or [0.0]


def pairwise_dtw(seqs: Sequence[EventSequence]) -> np.ndarray:
    m = len(seqs)
    series = [_series(s) for s in seqs]
    dist = np.zeros((m, m))
    for i, j in combinations(range(m), 2):
        dist[i, j] = dist[j, i] = dtw(series[i], series[j], "L1")
    return dist


def similarity_matrix(seqs: Sequence[EventSequence], scale: float | None = None) -> ConnectionMatrix:
    """``exp(-dtw / scale)`` over all pairs; ``scale`` defaults to the median distance."""
    if len(seqs) < 2:
        raise DomainError("need at least two sequences")
    dist = pairwise_dtw(seqs)
    if scale is None:
        off = dist[np.triu_indices(len(seqs), k=1)]
        scale = float(np.median(off)) or 1.0
    if not scale > 0:
        raise ConfigError("similarity scale must be positive")
    return ConnectionMatrix(np.exp(-dist / scale))


def proximity(members: Sequence[int], candidate: int, matrix: ConnectionMatrix) -> float:
    """Mean similarity between ``candidate`` and the elements of ``members``."""
    if len(members) == 0:
        raise DomainError("proximity needs a non-empty group")
    if candidate in set(members):
        raise DomainError("candidate already belongs to the group")
    return float(np.mean(matrix.entries[list(members), candidate]))


def build_spectrum(matrix: ConnectionMatrix, start: int = 0) -> SpectrumOrdering:
    """Grow a group from ``start`` by repeatedly adding the closest element.

    ``spectrum[k]`` is the proximity of the element added at step ``k + 1``.
    Ties go to the smallest element index.
    """
    m = matrix.size
    if not 0 <= start < m:
        raise DomainError(f"start index {start} out of range")
    a = matrix.entries
    sums = a[start].copy()
    free = np.ones(m, dtype=bool)
    free[start] = False
    order, spec = [start], []
    for k in range(1, m):
        score = np.where(free, sums / k, -np.inf)
        nxt = int(np.argmax(score))
        order.append(nxt)
        spec.append(float(score[nxt]))
        free[nxt] = False
        sums += a[nxt]
    return SpectrumOrdering(tuple(order), tuple(spec))


def _cut_positions(spec: Sequence[float], n_cuts: int, rule: str) -> list[int]:
    """Spectrum positions before whose element a new group starts."""
    s = np.asarray(spec, dtype=np.float64)
    pos = np.arange(len(s))
    if rule == "rule1":
        ranked = sorted(pos, key=lambda k: (s[k], k))
    elif rule == "rule2":
        drop = np.full(len(s), -math.inf)
        for k in range(1, len(s)):
            drop[k] = (s[k - 1] - s[k]) / s[k - 1] if s[k - 1] != 0 else 0.0
        ranked = sorted(pos, key=lambda k: (-drop[k], k))
    else:
        raise DomainError(f"unknown split rule {rule!r}")
    return sorted(int(k) for k in ranked[:n_cuts])


def split_spectrum(ordering: SpectrumOrdering, groups: int, rule: str = "rule1") -> list[list[int]]:
    """Cut the ordering into ``groups`` contiguous sections.

    rule1 starts sections at the smallest spectrum values, rule2 at the
    largest relative drops. The first spectrum position has no relative drop
    and is ranked last by rule2.
    """
    m = len(ordering.order)
    if not 1 <= groups <= m:
        raise DomainError(f"number of groups must be in [1, {m}]")
    cuts = _cut_positions(ordering.spectrum, groups - 1, rule)
    starts = [0] + [k + 1 for k in cuts] + [m]
    return [list(ordering.order[a:b]) for a, b in zip(starts, starts[1:])]
