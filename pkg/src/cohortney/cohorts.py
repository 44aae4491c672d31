"""Geometric time grid, triplet cohort index, nearest-cohort search, persistence."""

from __future__ import annotations

import hashlib
import io
import logging
import math
import os
import struct
import warnings
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ChecksumError,
    ConfigError,
    IndexFormatError,
    MalformedInputError,
    NoCohortError,
    VersionError,
)
from .sequences import EventSequence, ObservationContext
from .weights import (
    ClusterKey,
    cell_index,
    coarsen,
    digits_of_counts,
    digits_text,
    weight_vectors_upto,
)

log = logging.getLogger(__name__)

RATIO_TOL = 1e-9


class BelowGridWarning(UserWarning):
    """The present moment precedes the first grid node."""


@dataclass(frozen=True)
class GridConfig:
    t_base: float = 86400.0
    gamma: float = 1.04
    t_horizon: float = 15 * 86400.0
    t_min: float | None = None
    delta: float = 600.0
    min_cluster: int = 100

    def __post_init__(self):
        if self.t_min is None:
            object.__setattr__(self, "t_min", float(self.delta))
        if not self.gamma > 1:
            raise ConfigError(f"gamma must exceed 1, got {self.gamma}")
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.min_cluster < 1:
            raise ConfigError(f"min_cluster must be at least 1, got {self.min_cluster}")
        if not 0 < self.t_min <= self.t_horizon:
            raise ConfigError(
                f"need 0 < t_min <= t_horizon, got t_min={self.t_min}, t_horizon={self.t_horizon}"
            )
        if not 0 < self.t_base:
            raise ConfigError("t_base must be positive")


@dataclass(frozen=True)
class TimeGrid:
    nodes: tuple[float, ...]

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def build_grid(config: GridConfig) -> TimeGrid:
    """Nodes ``t_base * gamma**j`` for every integer j inside [t_min, t_horizon]."""
    lg = math.log(config.gamma)
    j_lo = math.floor(math.log(config.t_min / config.t_base) / lg) - 1
    j_hi = math.ceil(math.log(config.t_horizon / config.t_base) / lg) + 1
    nodes = []
    for j in range(j_lo, j_hi + 1):
        t = config.t_base * config.gamma**j
        if config.t_min <= t <= config.t_horizon:
            nodes.append(t)
    if not nodes:
        raise ConfigError("time grid has no nodes in [t_min, t_horizon]")
    return TimeGrid(tuple(nodes))


def max_level(node: float, delta: float) -> int:
    """Finest level n with ``node / 2**n >= delta``; level 0 is always allowed."""
    n = 0
    while node / (1 << (n + 1)) >= delta:
        n += 1
    return n


def snap_to_grid(grid: TimeGrid, t: float) -> float:
    """Largest node <= t; below the grid, the first node with a BelowGridWarning."""
    k = bisect_right(grid.nodes, t)
    if k == 0:
        warnings.warn(
            f"time {t} precedes the first grid node {grid.nodes[0]}", BelowGridWarning, stacklevel=2
        )
        return grid.nodes[0]
    return grid.nodes[k - 1]


@dataclass(frozen=True)
class Cohort:
    key: ClusterKey
    member_ids: tuple[str, ...]
    first_event_times: tuple[int, ...]
    survivor_count: int

    @property
    def size(self) -> int:
        return len(self.member_ids)

    @property
    def with_events(self) -> int:
        return len(self.first_event_times)


@dataclass
class CohortIndex:
    config: GridConfig
    grid: TimeGrid
    cohorts: dict[str, Cohort] = field(default_factory=dict)

    def __post_init__(self):
        self._level0: dict[float, list[Cohort]] = {}
        self._nodes_used: set[float] = set()
        for c in self.cohorts.values():
            self._nodes_used.add(c.key.node)
            if c.key.level == 0:
                self._level0.setdefault(c.key.node, []).append(c)

    def __len__(self):
        return len(self.cohorts)

    def __eq__(self, other):
        if not isinstance(other, CohortIndex):
            return NotImplemented
        return (self.config, self.grid, self.cohorts) == (other.config, other.grid, other.cohorts)

    def get(self, key: ClusterKey) -> Cohort | None:
        return self.cohorts.get(key.text)

    def level0(self, node: float) -> list[Cohort]:
        return self._level0.get(node, [])

    def has_node(self, node: float) -> bool:
        return node in self._nodes_used


def _threads() -> int:
    env = os.environ.get("COHORTNEY_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"COHORTNEY_THREADS must be an integer, got {env!r}") from None
    return min(8, os.cpu_count() or 1)


class _Flat:
    """All training offsets in one array, grouped by sequence."""

    def __init__(self, training: Sequence[EventSequence]):
        lengths = np.array([len(s) for s in training], dtype=np.int64)
        self.size = len(training)
        self.start = np.concatenate([[0], np.cumsum(lengths)])
        self.offsets = np.fromiter(
            (x for s in training for x in s.offsets), dtype=np.float64, count=int(lengths.sum())
        )
        self.owner = np.repeat(np.arange(self.size), lengths)
        span = float(self.offsets.max()) + 2.0 if len(self.offsets) else 2.0
        # owner-major, offset-minor sort key; exact while size * span < 2**53
        self._span = span
        self._combined = self.owner * span + self.offsets

    def first_after(self, t: float) -> np.ndarray:
        """Per-sequence first offset > t, NaN when there is none."""
        pos = np.searchsorted(self._combined, np.arange(self.size) * self._span + t, side="right")
        out = np.full(self.size, np.nan)
        has = pos < self.start[1:]
        out[has] = self.offsets[pos[has]]
        return out


def _cohorts_at_node(
    flat: _Flat, ids: np.ndarray, node: float, config: GridConfig
) -> list[Cohort]:
    top = max_level(node, config.delta)
    within = flat.offsets <= node
    active, row = np.unique(flat.owner[within], return_inverse=True)
    cells = cell_index(flat.offsets[within], node, top)
    ncell = 1 << top
    counts = np.bincount(row * ncell + cells, minlength=len(active) * ncell)
    counts = counts.reshape(len(active), ncell).astype(np.int32)
    n_empty = flat.size - len(active)
    empty_mask = np.ones(flat.size, dtype=bool)
    empty_mask[active] = False
    empty_members = np.flatnonzero(empty_mask)

    first = flat.first_after(node)
    per_level = []
    for level in range(top, -1, -1):
        if level < top:
            counts = coarsen(counts)
        per_level.append((level, digits_of_counts(counts)))

    out = []
    for level, digits in reversed(per_level):
        groups: list[tuple[str, np.ndarray]] = []
        if n_empty >= config.min_cluster:
            groups.append(("0" * (1 << level), empty_members))
        if len(active):
            width = digits.shape[1]
            rows = np.ascontiguousarray(digits).view(np.dtype((np.void, width))).ravel()
            uniq, inverse, sizes = np.unique(rows, return_inverse=True, return_counts=True)
            keep = np.flatnonzero(sizes >= config.min_cluster)
            if len(keep):
                order = np.argsort(inverse, kind="stable")
                bounds = np.concatenate([[0], np.cumsum(sizes)])
                for g in keep:
                    members = active[order[bounds[g] : bounds[g + 1]]]
                    text = digits_text(np.frombuffer(uniq[g].tobytes(), dtype=np.uint8))
                    groups.append((text, members))
        for text, members in groups:
            out.append(_make_cohort(ClusterKey(node, level, text), members, ids, first))
    return out


def _make_cohort(key: ClusterKey, members: np.ndarray, ids: np.ndarray, first: np.ndarray) -> Cohort:
    fe = first[members]
    has = ~np.isnan(fe)
    times = tuple(int(x) for x in np.sort(fe[has]))
    member_ids = tuple(sorted(ids[members].tolist()))
    return Cohort(key, member_ids, times, int((~has).sum()))


def build_cohorts(training: Sequence[EventSequence], config: GridConfig) -> CohortIndex:
    """Cluster ``training`` at every grid node and every admissible level.

    Cohorts below ``config.min_cluster`` members are dropped. The result does
    not depend on the order of ``training``.
    """
    grid = build_grid(config)
    if not training:
        return CohortIndex(config, grid, {})
    ids = np.array([s.id for s in training], dtype=object)
    if len(set(ids.tolist())) != len(ids):
        raise MalformedInputError("training sequence ids must be unique")
    flat = _Flat(training)

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            shards = list(pool.map(lambda t: _cohorts_at_node(flat, ids, t, config), grid.nodes))
    else:
        shards = [_cohorts_at_node(flat, ids, t, config) for t in grid.nodes]

    cohorts = {}
    for c in sorted((c for shard in shards for c in shard), key=lambda c: c.key):
        cohorts[c.key.text] = c
    log.info("built %d cohorts over %d grid nodes", len(cohorts), len(grid))
    return CohortIndex(config, grid, cohorts)


def _l1(a: str, b: str) -> int:
    return sum(abs(int(x) - int(y)) for x, y in zip(a, b))


def nearest_cohort(index: CohortIndex, ctx: ObservationContext) -> Cohort:
    """Level-wise search for the cohort closest to the observed sequence.

    Snaps the present moment to a grid node, then refines the partition level
    while an exact key match exists, returning the deepest match. When level 0
    has no exact match, the level-0 cohort with the smallest L1 digit distance
    is returned (ties: larger cohort, then smaller digits).
    """
    node = snap_to_grid(index.grid, ctx.now)
    if not index.has_node(node):
        raise NoCohortError(f"no cohorts at grid node {node}")
    top = max_level(node, index.config.delta)
    query = weight_vectors_upto(ctx.sequence, node, top)

    best = index.get(ClusterKey(node, 0, query[0]))
    if best is None:
        candidates = index.level0(node)
        if not candidates:
            raise NoCohortError(f"no level-0 cohorts at grid node {node}")
        return min(candidates, key=lambda c: (_l1(c.key.digits, query[0]), -c.size, c.key.digits))
    for level in range(1, top + 1):
        hit = index.get(ClusterKey(node, level, query[level]))
        if hit is None:
            break
        best = hit
    return best


# --- persistence -----------------------------------------------------------

MAGIC = b"CHRTNDX\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHQ")
_DIGEST = 32


def _put_str(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _get(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise IndexFormatError("index payload is truncated")
    return struct.unpack(fmt, raw)


def _get_str(buf: io.BytesIO) -> str:
    (n,) = _get(buf, "<I")
    raw = buf.read(n)
    if len(raw) != n:
        raise IndexFormatError("index payload is truncated")
    return raw.decode("utf-8")


def _encode(index: CohortIndex) -> bytes:
    cfg = index.config
    buf = io.BytesIO()
    buf.write(struct.pack("<5dQ", cfg.t_base, cfg.gamma, cfg.t_horizon, cfg.t_min, cfg.delta, cfg.min_cluster))
    buf.write(struct.pack("<Q", len(index.grid)))
    buf.write(np.asarray(index.grid.nodes, dtype="<f8").tobytes())
    buf.write(struct.pack("<Q", len(index.cohorts)))
    for text, c in index.cohorts.items():
        _put_str(buf, text)
        buf.write(struct.pack("<QQQ", c.size, c.survivor_count, len(c.first_event_times)))
        buf.write(np.asarray(c.first_event_times, dtype="<i8").tobytes())
        for m in c.member_ids:
            _put_str(buf, m)
    return buf.getvalue()


def _decode(payload: bytes) -> CohortIndex:
    buf = io.BytesIO(payload)
    t_base, gamma, t_h, t_min, delta, n_min = _get(buf, "<5dQ")
    config = GridConfig(t_base, gamma, t_h, t_min, delta, int(n_min))
    (n_nodes,) = _get(buf, "<Q")
    raw = buf.read(8 * n_nodes)
    if len(raw) != 8 * n_nodes:
        raise IndexFormatError("index payload is truncated")
    grid = TimeGrid(tuple(float(x) for x in np.frombuffer(raw, dtype="<f8")))
    (n_cohorts,) = _get(buf, "<Q")
    cohorts = {}
    for _ in range(n_cohorts):
        text = _get_str(buf)
        size, survivors, n_first = _get(buf, "<QQQ")
        raw = buf.read(8 * n_first)
        if len(raw) != 8 * n_first:
            raise IndexFormatError("index payload is truncated")
        first = tuple(int(x) for x in np.frombuffer(raw, dtype="<i8"))
        members = tuple(_get_str(buf) for _ in range(size))
        cohorts[text] = Cohort(ClusterKey.parse(text), members, first, int(survivors))
    if buf.read(1):
        raise IndexFormatError("trailing bytes after index payload")
    return CohortIndex(config, grid, cohorts)


def save_index(index: CohortIndex, path: str | os.PathLike) -> None:
    """Write ``index`` as: magic, version, payload length, payload, SHA-256."""
    payload = _encode(index)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(payload)))
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def load_index(path: str | os.PathLike) -> CohortIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise IndexFormatError("file too short for an index header")
    magic, version, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise IndexFormatError("not a cohort index file")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported index format version {version} (expected {FORMAT_VERSION})")
    body = data[_HEADER.size :]
    if len(body) != length + _DIGEST:
        raise IndexFormatError("index file is truncated")
    payload, digest = body[:length], body[length:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError("index checksum mismatch")
    return _decode(payload)
