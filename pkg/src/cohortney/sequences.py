"""Event sequences: normalized offsets from a start epoch, plus JSONL I/O."""

from __future__ import annotations

import bisect
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DomainError, MalformedInputError

#: Sentinel for "no further event" in extended-time arithmetic.
NEVER = math.inf


@dataclass(frozen=True)
class EventSequence:
    """Event times of one entity, as integer seconds after ``start_epoch``.

    Offsets are non-decreasing and strictly positive; duplicates are kept.
    """

    id: str
    start_epoch: int = 0
    offsets: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        offs = tuple(_as_seconds(x) for x in self.offsets)
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "start_epoch", _as_seconds(self.start_epoch))
        for a, b in zip(offs, offs[1:]):
            if b < a:
                raise MalformedInputError(f"offsets of {self.id!r} are not sorted")
        if offs and offs[0] <= 0:
            raise DomainError(f"sequence {self.id!r} has an event at or before its start epoch")

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def last(self) -> int | None:
        return self.offsets[-1] if self.offsets else None

    def truncated(self, now: float) -> "EventSequence":
        """The sequence as known at ``now``: events with offset <= now."""
        k = bisect.bisect_right(self.offsets, now)
        if k == len(self.offsets):
            return self
        return EventSequence(self.id, self.start_epoch, self.offsets[:k])

    def denormalize(self) -> list[int]:
        return [self.start_epoch] + [self.start_epoch + x for x in self.offsets]


@dataclass(frozen=True)
class ObservationContext:
    """A sequence observed at the present moment ``now`` (relative seconds)."""

    sequence: EventSequence
    now: float

    def __post_init__(self):
        last = self.sequence.last
        if last is not None and last > self.now:
            raise DomainError(
                f"present moment {self.now} precedes the last known event {last}"
            )


def _as_seconds(x) -> int:
    if isinstance(x, bool):
        raise MalformedInputError(f"not a time value: {x!r}")
    if isinstance(x, int):
        return x
    try:
        xf = float(x)
    except (TypeError, ValueError):
        raise MalformedInputError(f"not a time value: {x!r}") from None
    if not math.isfinite(xf) or xf != int(xf):
        raise MalformedInputError(f"time must be whole seconds: {x!r}")
    return int(xf)


def normalize(raw_times: Sequence[int], id: str = "") -> EventSequence:
    """Turn absolute timestamps ``(t0, t1, ..., tn)`` into an EventSequence.

    The first element is the start epoch; the remaining ones must be sorted
    and strictly later than it.
    """
    if len(raw_times) == 0:
        raise MalformedInputError("empty timestamp list")
    t0 = _as_seconds(raw_times[0])
    rest = [_as_seconds(t) for t in raw_times[1:]]
    for a, b in zip(rest, rest[1:]):
        if b < a:
            raise MalformedInputError("timestamps are not sorted")
    offsets = [t - t0 for t in rest]
    if offsets and offsets[0] < 0:
        raise MalformedInputError("event precedes the start epoch")
    if offsets and offsets[0] == 0:
        raise DomainError("event coincides with the start epoch")
    return EventSequence(id, t0, tuple(offsets))


def count_in(seq: EventSequence, lo: float, hi: float) -> int:
    """Number of events with ``lo <= offset < hi``."""
    if lo > hi:
        raise DomainError(f"empty interval bounds: lo={lo} > hi={hi}")
    return bisect.bisect_left(seq.offsets, hi) - bisect.bisect_left(seq.offsets, lo)


def first_after(seq: EventSequence, t: float) -> float:
    """Smallest offset strictly greater than ``t``, or NEVER."""
    k = bisect.bisect_right(seq.offsets, t)
    return seq.offsets[k] if k < len(seq.offsets) else NEVER


def to_record(seq: EventSequence) -> dict:
    return {"id": seq.id, "start_epoch": seq.start_epoch, "offsets": list(seq.offsets)}


def from_record(rec: dict, line: int | None = None) -> EventSequence:
    if not isinstance(rec, dict) or "id" not in rec:
        raise MalformedInputError("record needs an 'id' field", line)
    offsets = rec.get("offsets", [])
    if not isinstance(offsets, list):
        raise MalformedInputError("'offsets' must be a list", line)
    try:
        return EventSequence(str(rec["id"]), rec.get("start_epoch", 0), tuple(offsets))
    except (MalformedInputError, DomainError) as exc:
        raise MalformedInputError(str(exc), line) from None


def read_jsonl(path: str | os.PathLike) -> list[EventSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedInputError(f"invalid JSON ({exc.msg})", lineno) from None
            out.append(from_record(rec, lineno))
    return out


def write_jsonl(path: str | os.PathLike, seqs: Iterable[EventSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in seqs:
            fh.write(json.dumps(to_record(s), separators=(",", ":")))
            fh.write("\n")
