"""Digit encoding of event density over dyadic partitions of (0, T].

A sequence seen at grid node ``T`` and partition level ``n`` is summarised by
``2**n`` decimal digits, one per cell of width ``T / 2**n``. Each digit is
``min(floor(log2(count + 1)), 9)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MalformedInputError
from .sequences import EventSequence

MAX_DIGIT = 9

# floor(log2(c + 1)) clamped at MAX_DIGIT, for c in 0..1023
_DIGIT_TABLE = np.minimum(
    np.array([(c + 1).bit_length() - 1 for c in range(1 << (MAX_DIGIT + 1))]), MAX_DIGIT
).astype(np.uint8)
_DIGIT_CHARS = np.frombuffer(b"0123456789", dtype=np.uint8)


def interval_weight(event_count: int) -> int:
    if event_count < 0:
        raise DomainError("event count must be non-negative")
    return min((int(event_count) + 1).bit_length() - 1, MAX_DIGIT)


def digits_of_counts(counts: np.ndarray) -> np.ndarray:
    """Vectorised ``interval_weight`` over an integer array."""
    c = np.minimum(np.asarray(counts), len(_DIGIT_TABLE) - 1)
    return _DIGIT_TABLE[c]


def cell_index(offsets: np.ndarray, node: float, level: int) -> np.ndarray:
    """Dyadic cell of each offset at ``level``; offsets must lie in (0, node].

    Cells are ``[i*T/2^n, (i+1)*T/2^n)`` with the last one closed at ``T``.
    Scaling by ``2**level`` is exact in floating point, so the index at a
    coarser level equals the finer index shifted right; this keeps all levels
    mutually consistent.
    """
    ncell = 1 << level
    idx = np.floor(np.asarray(offsets, dtype=np.float64) * ncell / node).astype(np.int64)
    return np.minimum(idx, ncell - 1)


def cell_counts(seq: EventSequence, node: float, level: int) -> np.ndarray:
    if node <= 0:
        raise DomainError("grid node must be positive")
    if level < 0:
        raise DomainError("partition level must be non-negative")
    offs = np.asarray(seq.offsets, dtype=np.float64)
    offs = offs[offs <= node]
    return np.bincount(cell_index(offs, node, level), minlength=1 << level)


def coarsen(counts: np.ndarray) -> np.ndarray:
    """Merge neighbouring cell pairs (last axis) to go one level down."""
    return counts.reshape(counts.shape[:-1] + (counts.shape[-1] // 2, 2)).sum(axis=-1)


def digits_text(digits: np.ndarray) -> str:
    return _DIGIT_CHARS[np.asarray(digits, dtype=np.uint8)].tobytes().decode("ascii")


def weight_vector(seq: EventSequence, node: float, level: int) -> str:
    """The digit string of ``seq`` at ``(node, level)``; events after node are ignored."""
    return digits_text(digits_of_counts(cell_counts(seq, node, level)))


def weight_vectors_upto(seq: EventSequence, node: float, max_level: int) -> list[str]:
    """Digit strings for levels ``0..max_level``, sharing one histogram pass."""
    counts = cell_counts(seq, node, max_level)
    out = [digits_text(digits_of_counts(counts))]
    for _ in range(max_level):
        counts = coarsen(counts)
        out.append(digits_text(digits_of_counts(counts)))
    return out[::-1]


def node_text(node: float) -> str:
    return repr(float(node))


@dataclass(frozen=True, order=True)
class ClusterKey:
    """Triplet identifying a cohort: grid node, partition level, digit string."""

    node: float
    level: int
    digits: str

    def __post_init__(self):
        if len(self.digits) != 1 << self.level:
            raise MalformedInputError(
                f"key digits have length {len(self.digits)}, expected {1 << self.level}"
            )
        if not self.digits.isdigit() or not self.digits.isascii():
            raise MalformedInputError(f"key digits must be decimal: {self.digits!r}")

    @property
    def text(self) -> str:
        return f"{node_text(self.node)}|{self.level}|{self.digits}"

    @classmethod
    def parse(cls, text: str) -> "ClusterKey":
        try:
            node, level, digits = text.split("|")
            return cls(float(node), int(level), digits)
        except ValueError:
            raise MalformedInputError(f"bad cluster key text: {text!r}") from None

    def __str__(self) -> str:
        return self.text


def make_key(seq: EventSequence, node: float, level: int) -> ClusterKey:
    return ClusterKey(float(node), level, weight_vector(seq, node, level))
