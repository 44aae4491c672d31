import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cohortney.sequences import EventSequence
from cohortney.weights import (
    ClusterKey,
    cell_counts,
    interval_weight,
    make_key,
    weight_vector,
    weight_vectors_upto,
)
from oracles import digit_by_counting


@pytest.mark.parametrize("count, digit", [(0, 0), (1, 1), (2, 1), (3, 2), (5, 2), (7, 3), (510, 8), (511, 9), (10**6, 9)])
def test_interval_weight(count, digit):
    assert interval_weight(count) == digit


def test_weight_vector_examples():
    s = EventSequence("a", 0, (10, 60))
    assert weight_vector(s, 128, 2) == "1100"
    assert weight_vector(s, 128, 0) == "1"
    assert weight_vector(EventSequence("e", 0, ()), 500, 3) == "00000000"


def test_event_at_node_lands_in_last_cell():
    s = EventSequence("a", 0, (128,))
    assert weight_vector(s, 128, 2) == "0001"


def test_events_after_node_ignored():
    s = EventSequence("a", 0, (10, 129, 500))
    assert weight_vector(s, 128, 1) == "10"


def test_cell_boundary_is_left_closed():
    s = EventSequence("a", 0, (32,))
    assert weight_vector(s, 128, 2) == "0100"


def test_worked_key_examples():
    empty = EventSequence("z", 0, ())
    assert make_key(empty, 1000.0, 0) == ClusterKey(1000.0, 0, "0")
    late = EventSequence("l", 0, (700,))
    assert make_key(late, 1000.0, 1).digits == "01"


def test_key_text_round_trip():
    k = ClusterKey(89856.0, 2, "0130")
    assert k.text == "89856.0|2|0130"
    assert ClusterKey.parse(k.text) == k
    odd = ClusterKey(86400 * 1.04**-7, 1, "10")
    assert ClusterKey.parse(odd.text) == odd


def test_equal_digits_equal_keys():
    a = EventSequence("a", 0, (10, 60))
    b = EventSequence("b", 0, (20, 40))
    assert make_key(a, 128, 2) == make_key(b, 128, 2)


seq_st = st.lists(st.integers(1, 5000), max_size=60).map(lambda xs: EventSequence("h", 0, tuple(sorted(xs))))
node_st = st.floats(1.0, 6000.0, allow_nan=False)


@given(seq_st, node_st, st.integers(0, 6))
def test_matches_counting_oracle(seq, node, level):
    digits = weight_vector(seq, node, level)
    assert len(digits) == 1 << level
    expected = "".join(str(digit_by_counting(seq.offsets, node, level, i)) for i in range(1 << level))
    assert digits == expected


@given(seq_st, node_st, st.integers(0, 6), st.integers(1, 5000))
def test_adding_event_never_lowers_digits(seq, node, level, extra):
    bigger = EventSequence("h", 0, tuple(sorted(seq.offsets + (extra,))))
    before = weight_vector(seq, node, level)
    after = weight_vector(bigger, node, level)
    assert all(b >= a for a, b in zip(before, after))


@given(seq_st, node_st, st.integers(0, 7))
def test_level_zero_digit_from_total_count(seq, node, level):
    total = int(cell_counts(seq, node, level).sum())
    assert weight_vector(seq, node, 0) == str(interval_weight(total))


@settings(max_examples=50)
@given(seq_st, node_st, st.integers(0, 8))
def test_all_levels_pass_agrees_with_single_level(seq, node, top):
    all_levels = weight_vectors_upto(seq, node, top)
    assert all_levels == [weight_vector(seq, node, n) for n in range(top + 1)]


def test_bad_key_rejected():
    with pytest.raises(ValueError):
        ClusterKey(1.0, 2, "012")
