import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cohortney.errors import DomainError, MalformedInputError
from cohortney.sequences import (
    NEVER,
    EventSequence,
    ObservationContext,
    count_in,
    first_after,
    normalize,
    read_jsonl,
    write_jsonl,
)
from conftest import random_sequences


def test_normalize_subtracts_start():
    s = normalize([100, 101, 105])
    assert s.start_epoch == 100
    assert s.offsets == (1, 5)


def test_normalize_post_without_events():
    s = normalize([100])
    assert s.start_epoch == 100 and s.offsets == ()


def test_normalize_rejects_unsorted():
    with pytest.raises(MalformedInputError):
        normalize([100, 105, 101])


def test_normalize_rejects_event_at_start():
    with pytest.raises(DomainError):
        normalize([100, 100, 101])


def test_normalize_rejects_empty():
    with pytest.raises(MalformedInputError):
        normalize([])


@pytest.mark.parametrize(
    "offsets, lo, hi, expected",
    [((1, 5), 0, 4, 1), ((1, 5), 5, 5, 0), ((2, 2, 2), 0, 10, 3), ((1, 5), 1, 5, 1), ((1, 5), 1, 6, 2)],
)
def test_count_in(offsets, lo, hi, expected):
    assert count_in(EventSequence("a", 0, offsets), lo, hi) == expected


def test_count_in_bad_interval():
    with pytest.raises(DomainError):
        count_in(EventSequence("a", 0, (1,)), 5, 4)


@pytest.mark.parametrize("offsets, t, expected", [((1, 5), 1, 5), ((1, 5), 7, NEVER), ((), 0, NEVER), ((1, 5), 0, 1)])
def test_first_after(offsets, t, expected):
    assert first_after(EventSequence("a", 0, offsets), t) == expected


def test_duplicates_kept():
    assert EventSequence("a", 0, (3, 3, 4)).offsets == (3, 3, 4)


def test_observation_context_requires_events_before_now():
    seq = EventSequence("a", 0, (3, 9))
    ObservationContext(seq, 9)
    with pytest.raises(DomainError):
        ObservationContext(seq, 8)


def test_truncated():
    seq = EventSequence("a", 0, (3, 9, 12))
    assert seq.truncated(9).offsets == (3, 9)
    assert seq.truncated(100) is seq


offsets_st = st.lists(st.integers(1, 10**9), max_size=40).map(sorted)


@given(st.integers(0, 2**40), offsets_st)
def test_normalize_inverts_denormalize(t0, offs):
    seq = EventSequence("x", t0, tuple(offs))
    assert normalize(seq.denormalize(), "x") == seq


@given(offsets_st)
def test_count_over_everything(offs):
    seq = EventSequence("x", 0, tuple(offs))
    assert count_in(seq, 0, math.inf) == len(offs)


@given(offsets_st, st.integers(0, 10**9))
def test_first_after_is_later(offs, t):
    f = first_after(EventSequence("x", 0, tuple(offs)), t)
    assert f > t


def test_jsonl_round_trip(tmp_path, rng):
    seqs = random_sequences(rng, 1000)
    path = tmp_path / "s.jsonl"
    write_jsonl(path, seqs)
    assert read_jsonl(path) == seqs


def test_jsonl_negative_offset_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "start_epoch": 0, "offsets": [1]}\n{"id": "b", "start_epoch": 0, "offsets": [-3]}\n')
    with pytest.raises(MalformedInputError) as err:
        read_jsonl(path)
    assert err.value.line == 2


def test_jsonl_bad_json_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"}\n{oops\n')
    with pytest.raises(MalformedInputError, match="line 2"):
        read_jsonl(path)


def test_jsonl_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_jsonl(path) == []


def test_jsonl_missing_offsets_means_empty(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text('{"id": "a", "start_epoch": 7}\n')
    assert read_jsonl(path) == [EventSequence("a", 7, ())]


def test_missing_file_propagates(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_jsonl(tmp_path / "nope.jsonl")
