"""Next-observation time rules over a cohort's empirical first-event law.

For a cohort anchored at grid node ``T``, the next event time after ``T`` of a
random member has survival values ``alpha_i`` on ``[t_i, t_{i+1})``. The risk
of peeking at ``tau`` is

    S(tau) = P(tau <= theta) + c * E G((tau - theta)^+)

and its minimum over ``tau`` is attained at a breakpoint (or at "never" for
bounded penalties), so every solver here is a scan over breakpoints.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

import numpy as np

from .cohorts import Cohort, CohortIndex, nearest_cohort
from .errors import ConfigError, DomainError, IntegrityError
from .sequences import NEVER, ObservationContext
from .weights import ClusterKey

PENALTY_KINDS = ("linear", "tanh", "rational")
TIE_TOL = 1e-12


@dataclass(frozen=True)
class PenaltyConfig:
    kind: str = "linear"
    c: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ConfigError(f"unknown penalty kind {self.kind!r}")
        if not self.c > 0:
            raise ConfigError("c must be positive")
        if self.kind != "linear" and not self.beta > 0:
            raise ConfigError("beta must be positive for bounded penalties")


@dataclass(frozen=True)
class QuantileConfig:
    alpha: float = 0.2

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")


Rule = Union[PenaltyConfig, QuantileConfig]


@dataclass(frozen=True)
class EmpiricalStepFunction:
    origin: float
    breakpoints: tuple[float, ...]
    survival: tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.breakpoints)

    @property
    def drops(self) -> np.ndarray:
        return -np.diff(np.asarray(self.survival, dtype=np.float64))


@dataclass(frozen=True)
class ForecastResult:
    """``tau_star`` is NEVER (``math.inf``) when no further peek is advised.

    ``index`` is the 1-based breakpoint index for penalty rules and the
    order-statistic rank D for the quantile rule.
    """

    tau_star: float
    risk: float | None
    index: int | None
    key: ClusterKey | None = None
    sample_size: int | None = None
    with_events: int | None = None

    @property
    def never(self) -> bool:
        return math.isinf(self.tau_star)


def _steps_from(origin: float, times: Sequence[float], survivors: int) -> EmpiricalStepFunction:
    q = len(times) + survivors
    if q < 1:
        raise DomainError("cohort is empty")
    bps, counts = np.unique(np.asarray(times, dtype=np.float64), return_counts=True)
    # members whose first event is strictly later than each breakpoint
    later = len(times) - np.cumsum(counts)
    survival = (1.0,) + tuple(float(x) for x in (later + survivors) / q)
    return EmpiricalStepFunction(float(origin), tuple(float(b) for b in bps), survival)


def survival_steps(cohort: Cohort) -> EmpiricalStepFunction:
    if cohort.size < 1:
        raise DomainError("cohort is empty")
    return _steps_from(cohort.key.node, cohort.first_event_times, cohort.survivor_count)


def event_count_pmf(
    cohort: Cohort, training: Mapping[str, object], lo: float, hi: float
) -> dict[int, float]:
    """Share of cohort members with exactly k events in ``(lo, hi]``."""
    if lo > hi:
        raise DomainError("lo must not exceed hi")
    tally: dict[int, int] = {}
    for mid in cohort.member_ids:
        seq = training.get(mid)
        if seq is None:
            raise IntegrityError(f"cohort member {mid!r} is not in the sequence store")
        k = sum(1 for x in seq.offsets if lo < x <= hi)
        tally[k] = tally.get(k, 0) + 1
    return {k: tally[k] / cohort.size for k in sorted(tally)}


def penalty_g(kind: str, beta: float, x):
    """Delay penalty G(x); accepts scalars or arrays."""
    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa < 0):
        raise DomainError("penalty argument must be non-negative")
    if kind == "linear":
        out = xa
    elif kind == "tanh":
        out = np.tanh(beta * xa)
    elif kind == "rational":
        with np.errstate(over="ignore", divide="ignore"):
            inv = xa ** (-beta)
            out = np.where(xa > 0, 1.0 / (1.0 + inv), 0.0)
    else:
        raise ConfigError(f"unknown penalty kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def risk(step: EmpiricalStepFunction, cfg: PenaltyConfig, tau: float) -> float:
    """Criterion value at ``tau``; ``tau = NEVER`` gives the limit value."""
    if tau < step.origin:
        raise DomainError(f"tau={tau} precedes the origin {step.origin}")
    alpha = step.survival
    if math.isinf(tau):
        if cfg.kind == "linear":
            return math.inf if alpha[-1] < 1 else 1.0
        return alpha[-1] + cfg.c * (1 - alpha[-1])
    i = int(np.searchsorted(step.breakpoints, tau, side="right"))
    if i == 0:
        return alpha[0]
    bps = np.asarray(step.breakpoints[:i], dtype=np.float64) - step.origin
    d = step.drops[:i]
    if cfg.kind == "linear":
        u = tau - step.origin
        return alpha[i] + cfg.c * u * (1 - alpha[i]) - cfg.c * float(bps @ d)
    g = penalty_g(cfg.kind, cfg.beta, (tau - step.origin) - bps)
    return alpha[i] + cfg.c * float(np.dot(g, d))


def breakpoint_risks(step: EmpiricalStepFunction, cfg: PenaltyConfig) -> np.ndarray:
    """``S(t_k)`` for k = 1..n in one pass."""
    n = step.n
    if n == 0:
        return np.empty(0)
    u = np.asarray(step.breakpoints, dtype=np.float64) - step.origin
    alpha = np.asarray(step.survival[1:], dtype=np.float64)
    d = step.drops
    if cfg.kind == "linear":
        return alpha + cfg.c * (u * (1 - alpha) - np.cumsum(u * d))
    out = np.empty(n)
    chunk = max(1, 4_000_000 // n)
    for s in range(0, n, chunk):
        rows = u[s : s + chunk, None] - u[None, :]
        mask = np.tril(np.ones((len(rows), n), dtype=bool), k=s)
        g = np.where(mask, penalty_g(cfg.kind, cfg.beta, np.where(mask, rows, 0.0)), 0.0)
        out[s : s + chunk] = alpha[s : s + chunk] + cfg.c * (g @ d)
    return out


def _argmin_earliest(values: np.ndarray) -> int | None:
    if len(values) == 0:
        return None
    return int(np.flatnonzero(values <= values.min() + TIE_TOL)[0])


def solve_linear(step: EmpiricalStepFunction, c: float) -> ForecastResult:
    """Minimise the linear-penalty risk over breakpoints (ties: earliest)."""
    cfg = PenaltyConfig("linear", c)
    s = breakpoint_risks(step, cfg)
    k = _argmin_earliest(s)
    if k is None:
        return ForecastResult(NEVER, risk(step, cfg, NEVER), None)
    return ForecastResult(step.breakpoints[k], float(s[k]), k + 1)


def solve_nonlinear(step: EmpiricalStepFunction, cfg: PenaltyConfig) -> ForecastResult:
    """Bounded-penalty rule: best breakpoint if its risk is below ``c``, else never."""
    if cfg.kind == "linear":
        raise ConfigError("solve_nonlinear needs a bounded penalty")
    s = breakpoint_risks(step, cfg)
    k = _argmin_earliest(s)
    if k is None:
        return ForecastResult(NEVER, risk(step, cfg, NEVER), None)
    if s[k] < cfg.c:
        return ForecastResult(step.breakpoints[k], float(s[k]), k + 1)
    return ForecastResult(NEVER, float(s[k]), None)


def quantile_rank(alpha: float, q: int) -> int:
    """D = floor(alpha * Q), clamped to at least 1.

    alpha is read as the decimal it prints as, so 0.29 * 100 gives 29.
    """
    return max(1, math.floor(Fraction(repr(float(alpha))) * q))


def _quantile_from(times: Sequence[float], q_size: int, alpha: float) -> tuple[float, int]:
    d = quantile_rank(alpha, q_size)
    if d > len(times):
        return NEVER, d
    return float(times[d - 1]), d


def solve_quantile(cohort: Cohort, q: QuantileConfig) -> ForecastResult:
    """D-th smallest first-event time, or never when fewer than D members have one."""
    if cohort.size < 1:
        raise DomainError("cohort is empty")
    tau, d = _quantile_from(cohort.first_event_times, cohort.size, q.alpha)
    idx = None if math.isinf(tau) else d
    return ForecastResult(tau, None, idx, cohort.key, cohort.size, cohort.with_events)


def forecast_cohort(cohort: Cohort, rule: Rule, now: float | None = None) -> ForecastResult:
    """Apply ``rule`` to ``cohort`` given that nothing happened up to ``now``.

    Members whose first event after the node falls at or before ``now`` are
    set aside, so the remaining sample describes the wait beyond ``now`` and
    every finite forecast is strictly later than ``now``.
    """
    times = cohort.first_event_times
    origin = cohort.key.node
    if now is not None and now >= origin:
        times = times[bisect.bisect_right(times, now):]
        origin = now
    q_size = len(times) + cohort.survivor_count
    if q_size == 0:
        return ForecastResult(NEVER, None, None, cohort.key, 0, 0)
    if isinstance(rule, QuantileConfig):
        tau, d = _quantile_from(times, q_size, rule.alpha)
        idx = None if math.isinf(tau) else d
        return ForecastResult(tau, None, idx, cohort.key, q_size, len(times))
    step = _steps_from(origin, times, cohort.survivor_count)
    if rule.kind == "linear":
        res = solve_linear(step, rule.c)
    else:
        res = solve_nonlinear(step, rule)
    return ForecastResult(res.tau_star, res.risk, res.index, cohort.key, q_size, len(times))


def predict(index: CohortIndex, ctx: ObservationContext, rule: Rule) -> ForecastResult:
    """Nearest cohort for ``ctx``, then ``rule``; finite results exceed ``ctx.now``."""
    cohort = nearest_cohort(index, ctx)
    return forecast_cohort(cohort, rule, ctx.now)
