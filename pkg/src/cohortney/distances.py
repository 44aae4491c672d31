"""Dynamic time warping and an O(m + n) lower bound on it."""

from __future__ import annotations

import math
from typing import Sequence

from .errors import DomainError

BASES = ("L1", "L2sq")


def _check(x: Sequence[float], y: Sequence[float]) -> None:
    if len(x) == 0 or len(y) == 0:
        raise DomainError("DTW needs non-empty sequences")


def dtw(x: Sequence[float], y: Sequence[float], base: str = "L1") -> float:
    """Unconstrained DTW distance.

    ``L1`` sums ``|x_i - y_j|`` along the optimal path; ``L2sq`` sums squared
    differences and returns the square root of the total.
    """
    _check(x, y)
    if base == "L1":
        cost = lambda a, b: abs(a - b)  # noqa: E731
    elif base == "L2sq":
        cost = lambda a, b: (a - b) * (a - b)  # noqa: E731
    else:
        raise DomainError(f"unknown DTW base {base!r}")
    xs = [float(v) for v in x]
    ys = [float(v) for v in y]
    inf = math.inf
    prev = [inf] * (len(ys) + 1)
    prev[0] = 0.0
    for a in xs:
        cur = [inf] * (len(ys) + 1)
        left = inf
        for j, b in enumerate(ys, start=1):
            m = prev[j - 1]
            if prev[j] < m:
                m = prev[j]
            if left < m:
                m = left
            left = cost(a, b) + m
            cur[j] = left
        cur[0] = inf
        prev = cur
    total = prev[-1]
    return math.sqrt(total) if base == "L2sq" else total


def dtw_lower_bound(x: Sequence[float], y: Sequence[float]) -> float:
    """Range-based lower bound on ``dtw(x, y, "L1")``.

    Sequences are swapped if needed so that ``max(x) >= max(y)``; the three
    cases are overlapping ranges, ``y``'s range inside ``x``'s, and disjoint
    ranges.
    """
    _check(x, y)
    if max(y) > max(x):
        x, y = y, x
    lo_x, hi_x = min(x), max(x)
    lo_y, hi_y = min(y), max(y)
    if lo_x > hi_y:
        return max(sum(abs(v - hi_y) for v in x), sum(abs(v - lo_x) for v in y))
    above = sum(v - hi_y for v in x if v > hi_y)
    if lo_x < lo_y:
        return above + sum(lo_y - v for v in x if v < lo_y)
    return above + sum(lo_x - v for v in y if v < lo_x)
