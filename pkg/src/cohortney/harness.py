"""Synthetic event streams, polling policies and their evaluation metrics."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from .cohorts import BelowGridWarning, CohortIndex, nearest_cohort
from .errors import ConfigError, NoCohortError
from .forecast import PenaltyConfig, QuantileConfig, forecast_cohort
from .sequences import EventSequence, ObservationContext

HOUR = 3600
DEFAULT_SCHEDULE_HOURS = (1, 3, 12, 24, 168, 744)
METRICS = ("delay_post", "delay_comment", "rel_intensity", "probability", "abs_intensity")


# --- generators ------------------------------------------------------------


@dataclass(frozen=True)
class Poisson:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("Poisson rate must be positive")

    def sample(self, rng: np.random.Generator, horizon: float) -> np.ndarray:
        n = rng.poisson(self.rate * horizon)
        return rng.uniform(0.0, horizon, size=n)


@dataclass(frozen=True)
class Piecewise:
    """Intensity ``rates[i]`` on ``[knots[i-1], knots[i])`` with 0 and the horizon as outer knots."""

    rates: tuple[float, ...]
    knots: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.rates) != len(self.knots) + 1:
            raise ConfigError("piecewise model needs one more rate than knots")
        if any(not r > 0 for r in self.rates):
            raise ConfigError("piecewise rates must be positive")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])) or any(k <= 0 for k in self.knots):
            raise ConfigError("piecewise knots must be positive and increasing")

    def sample(self, rng: np.random.Generator, horizon: float) -> np.ndarray:
        edges = [0.0] + [k for k in self.knots if k < horizon] + [horizon]
        parts = []
        for rate, lo, hi in zip(self.rates, edges, edges[1:]):
            parts.append(rng.uniform(lo, hi, size=rng.poisson(rate * (hi - lo))))
        return np.concatenate(parts) if parts else np.empty(0)


@dataclass(frozen=True)
class DoubleLogNormal:
    """Event delays from ``k*LN(mu1, sigma1) + (1-k)*LN(mu2, sigma2)``.

    ``count_law`` is ``("poisson", mean)`` or ``("geometric", mean)`` and sets
    the number of delays drawn per sequence (delays past the horizon are lost).
    """

    k: float
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    count_law: tuple[str, float] = ("poisson", 5.0)

    def __post_init__(self):
        if not 0 <= self.k <= 1:
            raise ConfigError("mixing weight k must be in [0, 1]")
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ConfigError("log-normal sigmas must be positive")
        law, mean = self.count_law
        if law not in ("poisson", "geometric") or not mean > 0:
            raise ConfigError(f"bad event count law {self.count_law!r}")

    def sample(self, rng: np.random.Generator, horizon: float) -> np.ndarray:
        law, mean = self.count_law
        n = rng.poisson(mean) if law == "poisson" else rng.geometric(1.0 / (1.0 + mean)) - 1
        first = rng.random(n) < self.k
        t = np.where(
            first,
            rng.lognormal(self.mu1, self.sigma1, size=n),
            rng.lognormal(self.mu2, self.sigma2, size=n),
        )
        return t[t <= horizon]


@dataclass(frozen=True)
class Mixture:
    """Pick a component per sequence; ``empty_fraction`` of sequences get no events.

    Non-empty draws are resampled (up to ``MAX_RETRIES``) until they hold an
    event, so the empty share tracks ``empty_fraction``.
    """

    components: tuple
    weights: tuple[float, ...]
    empty_fraction: float = 0.0

    MAX_RETRIES = 100

    def __post_init__(self):
        if len(self.components) != len(self.weights) or not self.components:
            raise ConfigError("mixture needs one weight per component")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1) > 1e-9:
            raise ConfigError("mixture weights must be non-negative and sum to 1")
        if not 0 <= self.empty_fraction <= 1:
            raise ConfigError("empty_fraction must be in [0, 1]")

    def sample(self, rng: np.random.Generator, horizon: float) -> np.ndarray:
        if rng.random() < self.empty_fraction:
            return np.empty(0)
        comp = self.components[rng.choice(len(self.components), p=self.weights)]
        for _ in range(self.MAX_RETRIES):
            t = comp.sample(rng, horizon)
            if len(t):
                return t
        return t


Model = Union[Poisson, Piecewise, DoubleLogNormal, Mixture]


@dataclass(frozen=True)
class GeneratorSpec:
    model: Model
    horizon: float
    seed: int = 0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("generator horizon must be positive")


def _to_seconds(t: np.ndarray, horizon: float) -> tuple[int, ...]:
    s = np.maximum(np.ceil(np.sort(t)), 1).astype(np.int64)
    return tuple(int(x) for x in s[s <= math.ceil(horizon)])


def generate(spec: GeneratorSpec, count: int, prefix: str = "s") -> list[EventSequence]:
    """Draw ``count`` sequences; identical specs give identical output."""
    rng = np.random.default_rng(spec.seed)
    width = max(6, len(str(count - 1)))
    return [
        EventSequence(f"{prefix}{i:0{width}d}", 0, _to_seconds(spec.model.sample(rng, spec.horizon), spec.horizon))
        for i in range(count)
    ]


def model_from_dict(d: dict) -> Model:
    """Build a model from a JSON-style dict with a ``model`` discriminator."""
    d = dict(d)
    kind = d.pop("model", None)
    if kind == "poisson":
        return Poisson(**d)
    if kind == "piecewise":
        return Piecewise(tuple(d["rates"]), tuple(d.get("knots", ())))
    if kind == "dln":
        law = d.pop("count_law", ("poisson", 5.0))
        return DoubleLogNormal(count_law=tuple(law), **d)
    if kind == "mixture":
        comps = tuple(model_from_dict(c) for c in d["components"])
        return Mixture(comps, tuple(d["weights"]), d.get("empty_fraction", 0.0))
    raise ConfigError(f"unknown generator model {kind!r}")


def three_component_mixture(horizon: float = 15 * 86400) -> Mixture:
    """Preset used by the policy comparison: bursty, daily and slow posts.

    Half of all sequences are empty.
    """
    per_hour = 1.0 / HOUR
    burst = Piecewise((6 * per_hour, 0.2 * per_hour, 0.002 * per_hour), (2 * HOUR, 12 * HOUR))
    daily = Piecewise((0.4 * per_hour, 0.05 * per_hour, 0.004 * per_hour), (24 * HOUR, 72 * HOUR))
    slow = Piecewise((0.02 * per_hour, 0.006 * per_hour), (120 * HOUR,))
    return Mixture((burst, daily, slow), (0.4, 0.4, 0.2), empty_fraction=0.5)


def split_train_test(seqs: Sequence[EventSequence]) -> tuple[list[EventSequence], list[EventSequence]]:
    half = len(seqs) // 2
    return list(seqs[:half]), list(seqs[half:])


# --- polling ---------------------------------------------------------------


@dataclass(frozen=True)
class PeekTrace:
    peeks: tuple[float, ...]
    captured: tuple[tuple[int, ...], ...]
    stopped_reason: str

    def to_record(self, seq_id: str = "") -> dict:
        return {
            "id": seq_id,
            "peeks": list(self.peeks),
            "captured": [list(c) for c in self.captured],
            "stopped_reason": self.stopped_reason,
        }


def _capture(offsets: Sequence[int], lo: float, hi: float) -> tuple[int, ...]:
    return tuple(offsets[bisect_right(offsets, lo) : bisect_right(offsets, hi)])


def run_deterministic(
    seq: EventSequence,
    schedule: Sequence[float] = DEFAULT_SCHEDULE_HOURS,
    reset: bool = True,
    horizon: float | None = None,
) -> PeekTrace:
    """Peek at ``base + h`` hours for each ``h`` in ``schedule``.

    With ``reset``, a peek that finds an event becomes the new base and the
    schedule starts over. The run ends once the last offset finds nothing.
    """
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or not schedule or schedule[0] <= 0:
        raise ConfigError("schedule must be positive and strictly increasing")
    offsets = seq.offsets
    peeks, captured = [], []
    base = prev = 0.0
    while True:
        restarted = False
        for h in schedule:
            p = base + h * HOUR
            if horizon is not None and p > horizon:
                return PeekTrace(tuple(peeks), tuple(captured), "horizon")
            cap = _capture(offsets, prev, p)
            peeks.append(p)
            captured.append(cap)
            prev = p
            if cap and reset:
                base = p
                restarted = True
                break
        if not restarted:
            return PeekTrace(tuple(peeks), tuple(captured), "schedule_exhausted")


def run_cohort_policy(
    index: CohortIndex,
    seq: EventSequence,
    rule: QuantileConfig | PenaltyConfig,
    horizon: float,
    start: float = 0.0,
    sparse_alpha: float | None = None,
) -> PeekTrace:
    """Repeatedly peek at the forecast of the nearest cohort.

    Stops when the forecast is never, when fewer than ``alpha`` of the cohort
    members still to be heard from have an event (``sparse_alpha`` for penalty
    rules),
    when no cohort is found, or when the next peek would pass ``horizon``.
    """
    if isinstance(rule, QuantileConfig) and sparse_alpha is None:
        sparse_alpha = rule.alpha
    offsets = seq.offsets
    peeks, captured = [], []
    t = float(start)
    reason = "horizon"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BelowGridWarning)
        while True:
            ctx = ObservationContext(seq.truncated(t), t)
            try:
                cohort = nearest_cohort(index, ctx)
            except NoCohortError:
                reason = "cohort_sparse"
                break
            res = forecast_cohort(cohort, rule, now=t)
            if res.never:
                reason = "never_tau"
                break
            if sparse_alpha is not None and res.with_events < sparse_alpha * res.sample_size:
                reason = "cohort_sparse"
                break
            if res.tau_star > horizon:
                reason = "horizon"
                break
            tau = res.tau_star
            peeks.append(tau)
            captured.append(_capture(offsets, t, tau))
            t = tau
    return PeekTrace(tuple(peeks), tuple(captured), reason)


# --- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class SequenceMetrics:
    """Per-sequence metrics; None marks an undefined value."""

    delay_post: float | None
    delay_comment: float | None
    rel_intensity: float | None
    probability: float | None
    abs_intensity: int

    def get(self, name: str):
        return getattr(self, name)


def compute_metrics(trace: PeekTrace) -> SequenceMetrics:
    n = len(trace.peeks)
    if n == 0:
        return SequenceMetrics(None, None, None, None, 0)
    total = 0.0
    per_comment = 0.0
    commented = 0
    # exact rational sum so the mean is correctly rounded
    inv_gaps = Fraction(0)
    prev = 0.0
    for tau, events in zip(trace.peeks, trace.captured):
        inv_gaps += 1 / Fraction(tau - prev)
        prev = tau
        if events:
            d = sum(tau - e for e in events)
            total += d
            per_comment += d / len(events)
            commented += 1
    return SequenceMetrics(
        delay_post=total,
        delay_comment=per_comment if commented else None,
        rel_intensity=float(inv_gaps / n),
        probability=commented / n,
        abs_intensity=n,
    )


def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    s = sorted(values)
    return s[max(1, math.ceil(q * len(s))) - 1]


@dataclass(frozen=True)
class MetricsRow:
    alpha: float | None
    metric: str
    mean: float | None
    median: float | None
    q95: float | None
    n_sequences: int


def summarize(alpha: float | None, per_seq: Sequence[SequenceMetrics]) -> list[MetricsRow]:
    rows = []
    for name in METRICS:
        # unpeeked sequences carry None everywhere except abs_intensity
        vals = [v for v in (m.get(name) for m in per_seq) if v is not None]
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            rows.append(
                MetricsRow(alpha, name, float(arr.mean()), float(np.median(arr)), float(nearest_rank_quantile(vals, 0.95)), len(vals))
            )
        else:
            rows.append(MetricsRow(alpha, name, None, None, None, 0))
    return rows


@dataclass(frozen=True)
class PolicyConfig:
    """Cohort policy used in sweeps; ``kind`` is ``quantile`` or a penalty kind.

    For penalty kinds the swept alpha acts only as the sparse-cohort stop.
    """

    kind: str = "quantile"
    c: float = 1.0
    beta: float = 1.0
    horizon: float = 15 * 86400

    def rule(self, alpha: float):
        if self.kind == "quantile":
            return QuantileConfig(alpha)
        return PenaltyConfig(self.kind, self.c, self.beta)


def run_policy_metrics(
    test: Sequence[EventSequence], index: CohortIndex, alpha: float, policy: PolicyConfig
) -> list[SequenceMetrics]:
    rule = policy.rule(alpha)
    return [
        compute_metrics(run_cohort_policy(index, s, rule, policy.horizon, sparse_alpha=alpha))
        for s in test
    ]


def aggregate_sweep(
    test: Sequence[EventSequence],
    index: CohortIndex,
    alphas: Sequence[float],
    policy: PolicyConfig = PolicyConfig(),
) -> list[MetricsRow]:
    if not test:
        raise ConfigError("sweep needs a non-empty test set")
    rows = []
    for a in alphas:
        if not 0 < a < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {a}")
        rows.extend(summarize(a, run_policy_metrics(test, index, a, policy)))
    return rows


def deterministic_rows(
    test: Sequence[EventSequence],
    schedule: Sequence[float] = DEFAULT_SCHEDULE_HOURS,
    reset: bool = True,
    horizon: float | None = None,
) -> list[MetricsRow]:
    return summarize(None, [compute_metrics(run_deterministic(s, schedule, reset, horizon)) for s in test])


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if not isinstance(x, int) else str(x)


CSV_COLUMNS = ("alpha", "metric", "mean", "median", "q95", "n_sequences")


def write_metrics_csv(rows: Iterable[MetricsRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.alpha), r.metric, _fmt(r.mean), _fmt(r.median), _fmt(r.q95), r.n_sequences])


def write_traces_jsonl(path: str | os.PathLike, items: Iterable[tuple[str, PeekTrace]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, tr in items:
            fh.write(json.dumps(tr.to_record(sid), separators=(",", ":")) + "\n")
