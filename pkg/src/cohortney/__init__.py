"""Cohort clustering of event sequences and next-event peek scheduling."""

from .cohorts import (
    Cohort,
    CohortIndex,
    GridConfig,
    TimeGrid,
    build_cohorts,
    build_grid,
    load_index,
    max_level,
    nearest_cohort,
    save_index,
    snap_to_grid,
)
from .distances import dtw, dtw_lower_bound
from .forecast import (
    EmpiricalStepFunction,
    ForecastResult,
    PenaltyConfig,
    QuantileConfig,
    predict,
    risk,
    solve_linear,
    solve_nonlinear,
    solve_quantile,
    survival_steps,
)
from .sequences import NEVER, EventSequence, ObservationContext, normalize, read_jsonl, write_jsonl
from .weights import ClusterKey, interval_weight, make_key, weight_vector

__version__ = "0.1.0"
