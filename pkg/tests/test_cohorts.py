import math
import random
import time
import warnings

import numpy as np
import pytest

from cohortney.cohorts import (
    BelowGridWarning,
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
from cohortney.errors import ChecksumError, ConfigError, IndexFormatError, NoCohortError, VersionError
from cohortney.sequences import EventSequence, ObservationContext, first_after
from cohortney.weights import ClusterKey, weight_vector
from conftest import random_sequences

DEFAULT_GRID = GridConfig(t_base=86400, gamma=1.04, t_horizon=1_296_000, t_min=33)


def grid_oracle(cfg):
    return [cfg.t_base * cfg.gamma**j for j in range(-400, 400) if cfg.t_min <= cfg.t_base * cfg.gamma**j <= cfg.t_horizon]


def test_powers_of_two_grid():
    assert build_grid(GridConfig(t_base=1, gamma=2, t_min=1, t_horizon=8, delta=1)).nodes == (1, 2, 4, 8)


def test_default_grid():
    grid = build_grid(DEFAULT_GRID)
    assert list(grid.nodes) == grid_oracle(DEFAULT_GRID)
    assert len(grid) == 270
    assert 33 <= grid.nodes[0] <= 35
    assert 86400.0 in grid.nodes
    assert round(86400 * 1.04) in [round(x) for x in grid.nodes]
    ratios = np.diff(np.log(grid.nodes))
    assert np.allclose(np.exp(ratios), 1.04, rtol=1e-9, atol=0)


def test_grid_config_errors():
    with pytest.raises(ConfigError):
        GridConfig(t_min=10, t_horizon=5)
    with pytest.raises(ConfigError):
        GridConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        build_grid(GridConfig(t_base=100, gamma=10, t_min=2, t_horizon=9, delta=1))


def test_default_t_min_is_delta():
    assert GridConfig(delta=250).t_min == 250


@pytest.mark.parametrize("node, delta, level", [(86400, 600, 7), (8, 1, 3), (100, 200, 0), (1200, 600, 1), (1199, 600, 0)])
def test_max_level(node, delta, level):
    assert max_level(node, delta) == level


def test_snap():
    grid = TimeGrid((1.0, 2.0, 4.0, 8.0))
    assert snap_to_grid(grid, 5) == 4
    assert snap_to_grid(grid, 8) == 8
    assert snap_to_grid(grid, 100) == 8
    with pytest.warns(BelowGridWarning):
        assert snap_to_grid(grid, 0.5) == 1


def small_config(**kw):
    base = dict(t_base=128, gamma=2, t_min=128, t_horizon=128, delta=32, min_cluster=2)
    base.update(kw)
    return GridConfig(**base)


def test_singleton_discarded():
    seqs = [EventSequence("a", 0, (10, 60)), EventSequence("b", 0, (20, 40)), EventSequence("c", 0, (70, 100))]
    idx = build_cohorts(seqs, small_config())
    key = ClusterKey(128.0, 2, "1100")
    assert idx.get(key).member_ids == ("a", "b")
    assert idx.get(ClusterKey(128.0, 2, "0011")) is None
    assert all(c.size >= 2 for c in idx.cohorts.values())


def test_zero_event_sequences_form_one_cohort_per_node():
    seqs = [EventSequence(f"z{i}", 0, ()) for i in range(3)]
    cfg = GridConfig(t_base=100, gamma=2, t_min=50, t_horizon=400, delta=30, min_cluster=3)
    idx = build_cohorts(seqs, cfg)
    grid = build_grid(cfg)
    for node in grid:
        c = idx.get(ClusterKey(node, 0, "0"))
        assert c is not None and c.survivor_count == 3 and c.first_event_times == ()


def test_empty_training_gives_empty_index():
    idx = build_cohorts([], small_config())
    assert len(idx) == 0


def test_first_event_statistics():
    seqs = [EventSequence("a", 0, (10, 150, 170)), EventSequence("b", 0, (20, 140)), EventSequence("c", 0, (30,))]
    idx = build_cohorts(seqs, small_config(min_cluster=3))
    c = idx.get(ClusterKey(128.0, 0, "2"))
    assert c is None  # c has one event only -> digit 1
    c = idx.get(ClusterKey(128.0, 1, "10"))
    assert c.member_ids == ("a", "b", "c")
    assert c.first_event_times == (140, 150)
    assert c.survivor_count == 1


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        build_cohorts([EventSequence("a", 0, ()), EventSequence("a", 0, (3,))], small_config())


def verify_index(idx, seqs):
    """Re-encode every member and recount first-event statistics."""
    by_id = {s.id: s for s in seqs}
    for text, c in idx.cohorts.items():
        assert text == c.key.text
        assert c.size >= idx.config.min_cluster
        assert len(c.first_event_times) + c.survivor_count == c.size
        assert list(c.first_event_times) == sorted(c.first_event_times)
        firsts = []
        for m in c.member_ids:
            s = by_id[m]
            assert weight_vector(s, c.key.node, c.key.level) == c.key.digits
            f = first_after(s, c.key.node)
            if not math.isinf(f):
                firsts.append(f)
        assert tuple(sorted(firsts)) == c.first_event_times


def test_index_integrity_random(rng):
    seqs = random_sequences(rng, 600, horizon=300_000, max_events=6)
    cfg = GridConfig(t_base=86400, gamma=1.3, t_horizon=300_000, t_min=600, delta=600, min_cluster=5)
    idx = build_cohorts(seqs, cfg)
    assert len(idx) > 0
    verify_index(idx, seqs)
    # multiplicity bound
    per_seq = {}
    for c in idx.cohorts.values():
        for m in c.member_ids:
            per_seq[m] = per_seq.get(m, 0) + 1
    bound = sum(max_level(t, cfg.delta) + 1 for t in idx.grid)
    assert max(per_seq.values()) <= bound


def test_build_is_permutation_invariant(rng):
    seqs = random_sequences(rng, 400, horizon=300_000, max_events=5)
    cfg = GridConfig(t_base=86400, gamma=1.3, t_horizon=300_000, t_min=600, delta=600, min_cluster=4)
    shuffled = list(seqs)
    random.Random(3).shuffle(shuffled)
    assert build_cohorts(seqs, cfg) == build_cohorts(shuffled, cfg)


def test_thread_count_does_not_change_result(rng, monkeypatch):
    seqs = random_sequences(rng, 300, horizon=300_000, max_events=5)
    cfg = GridConfig(t_base=86400, gamma=1.3, t_horizon=300_000, t_min=600, delta=600, min_cluster=4)
    monkeypatch.setenv("COHORTNEY_THREADS", "1")
    a = build_cohorts(seqs, cfg)
    monkeypatch.setenv("COHORTNEY_THREADS", "4")
    assert build_cohorts(seqs, cfg) == a


def hand_index(cohorts, nodes=(128.0,), delta=32.0, min_cluster=1):
    cfg = GridConfig(t_base=nodes[0], gamma=2, t_min=nodes[0], t_horizon=nodes[-1], delta=delta, min_cluster=min_cluster)
    return CohortIndex(cfg, TimeGrid(tuple(nodes)), {c.key.text: c for c in cohorts})


def cohort(digits, level, size=3, node=128.0, first=()):
    return Cohort(ClusterKey(node, level, digits), tuple(f"m{i}" for i in range(size)), tuple(first), size - len(first))


def test_nearest_falls_back_to_previous_level():
    idx = hand_index([cohort("1", 0), cohort("10", 1), cohort("1000", 2), cohort("00000001", 3)])
    seq = EventSequence("q", 0, (5,))
    got = nearest_cohort(idx, ObservationContext(seq, 130))
    assert got.key == ClusterKey(128.0, 2, "1000")


def test_nearest_takes_deepest_level_when_everything_matches():
    idx = hand_index([cohort("1", 0), cohort("10", 1), cohort("1000", 2)])
    got = nearest_cohort(idx, ObservationContext(EventSequence("q", 0, (5,)), 128))
    assert got.key.level == 2


def test_nearest_level0_uses_l1_distance():
    idx = hand_index([cohort("2", 0), cohort("9", 0)])
    seq = EventSequence("q", 0, tuple(range(1, 8)))  # 7 events -> digit 3
    assert nearest_cohort(idx, ObservationContext(seq, 128)).key.digits == "2"


def test_nearest_level0_ties_prefer_larger_then_smaller_digits():
    idx = hand_index([cohort("2", 0, size=3), cohort("4", 0, size=5)])
    seq = EventSequence("q", 0, tuple(range(1, 8)))
    assert nearest_cohort(idx, ObservationContext(seq, 128)).key.digits == "4"
    idx = hand_index([cohort("2", 0, size=3), cohort("4", 0, size=3)])
    assert nearest_cohort(idx, ObservationContext(seq, 128)).key.digits == "2"


def test_nearest_without_cohorts_at_node():
    idx = hand_index([cohort("0", 0, node=128.0)], nodes=(128.0, 256.0))
    with pytest.raises(NoCohortError):
        nearest_cohort(idx, ObservationContext(EventSequence("q", 0, ()), 300))


def test_nearest_finds_member_at_node(rng):
    seqs = random_sequences(rng, 500, horizon=200_000, max_events=4)
    cfg = GridConfig(t_base=86400, gamma=1.5, t_horizon=200_000, t_min=5000, delta=5000, min_cluster=5)
    idx = build_cohorts(seqs, cfg)
    checked = 0
    for s in seqs[:100]:
        for node in idx.grid:
            if not any(s.id in c.member_ids for c in idx.cohorts.values() if c.key.node == node):
                continue
            ctx = ObservationContext(s.truncated(node), node)
            assert s.id in nearest_cohort(idx, ctx).member_ids
            checked += 1
    assert checked > 50


def test_save_load_round_trip(tmp_path, rng):
    seqs = random_sequences(rng, 300, horizon=300_000, max_events=5)
    cfg = GridConfig(t_base=86400, gamma=1.3, t_horizon=300_000, t_min=600, delta=600, min_cluster=4)
    idx = build_cohorts(seqs, cfg)
    path = tmp_path / "idx.bin"
    save_index(idx, path)
    assert load_index(path) == idx


def test_corruption_detected(tmp_path):
    idx = hand_index([cohort("1", 0, first=(140,))])
    path = tmp_path / "idx.bin"
    save_index(idx, path)
    raw = bytearray(path.read_bytes())
    raw[40] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        load_index(path)


def test_truncation_detected(tmp_path):
    idx = hand_index([cohort("1", 0, first=(140,))])
    path = tmp_path / "idx.bin"
    save_index(idx, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(IndexFormatError):
        load_index(path)


def test_newer_version_rejected(tmp_path):
    idx = hand_index([cohort("1", 0)])
    path = tmp_path / "idx.bin"
    save_index(idx, path)
    raw = bytearray(path.read_bytes())
    raw[8] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_index(path)
