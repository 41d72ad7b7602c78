"""Event stream, accumulation, and chunking tests.

Expected event-map values are recomputed with independent per-event Python
loops rather than the vectorized implementation under test.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsplat.events import (
    Chunk,
    Event,
    EventMap,
    EventStream,
    accumulate,
    chunk_stream,
    merge_streams,
    sample_interval,
)

W, H = 8, 6


def make_stream(rows, **kwargs):
    rows = sorted(rows)
    return EventStream([r[0] for r in rows], [r[1] for r in rows],
                       [r[2] for r in rows], [r[3] for r in rows], W, H, **kwargs)


def brute_force_map(rows, t0, t1, c):
    # independent oracle: per-event loop
    vals = np.zeros((H, W))
    for t, x, y, p in rows:
        if t0 <= t < t1:
            vals[y, x] += p
    return c * vals


class TestEventValidation:
    def test_event_rejects_negative_time(self):
        with pytest.raises(ValueError):
            Event(t=-1, x=0, y=0, polarity=1)

    def test_event_rejects_bad_polarity(self):
        with pytest.raises(ValueError):
            Event(t=0, x=0, y=0, polarity=2)

    def test_stream_rejects_unsorted(self):
        with pytest.raises(ValueError):
            EventStream([5, 3], [0, 0], [0, 0], [1, 1], W, H)

    def test_stream_rejects_out_of_bounds(self):
        with pytest.raises(ValueError):
            EventStream([0], [W], [0], [1], W, H)

    def test_stream_default_span_covers_last_event(self):
        s = make_stream([(10, 0, 0, 1), (20, 1, 1, -1)])
        assert s.time_span() == (10, 21)

    def test_iteration_round_trip(self):
        rows = [(10, 0, 0, 1), (20, 1, 1, -1)]
        s = make_stream(rows)
        assert [(e.t, e.x, e.y, e.polarity) for e in s] == rows


class TestAccumulate:
    def test_signed_counts_match_per_event_loop(self):
        rng = np.random.default_rng(11)
        rows = [(int(t), int(rng.integers(W)), int(rng.integers(H)),
                 int(rng.choice([-1, 1])))
                for t in np.sort(rng.integers(0, 1000, size=200))]
        s = make_stream(rows, t_start=0, t_end=1000)
        m = accumulate(s, 100, 500, 0.2)
        np.testing.assert_array_equal(m.values, brute_force_map(rows, 100, 600, 0.2))

    def test_half_open_interval_splits_exactly(self):
        # splitting [t0, t1) at any interior point is exact: no event
        # double-counted, none lost
        rng = np.random.default_rng(7)
        rows = [(int(t), int(rng.integers(W)), int(rng.integers(H)),
                 int(rng.choice([-1, 1])))
                for t in np.sort(rng.integers(0, 100, size=300))]
        s = make_stream(rows, t_start=0, t_end=100)
        whole = accumulate(s, 0, 100, 1.0)
        for split in [1, 37, 50, 99]:
            left = accumulate(s, 0, split, 1.0)
            right = accumulate(s, split, 100 - split, 1.0)
            np.testing.assert_array_equal(left.values + right.values, whole.values)

    def test_value_scale_is_contrast_threshold(self):
        s = make_stream([(0, 2, 3, 1), (1, 2, 3, 1), (2, 2, 3, -1)],
                        t_start=0, t_end=10)
        m = accumulate(s, 0, 10, 0.25)
        assert m.values[3, 2] == pytest.approx(0.25 * (2 - 1))

    def test_empty_interval_is_zero_map(self):
        s = make_stream([(0, 0, 0, 1)], t_start=0, t_end=100)
        m = accumulate(s, 50, 10, 0.2)
        assert not m.values.any()

    def test_outside_span_is_error(self):
        s = make_stream([(0, 0, 0, 1)], t_start=0, t_end=100)
        with pytest.raises(ValueError):
            accumulate(s, 50, 100, 0.2)

    def test_bad_dt_and_threshold(self):
        s = make_stream([(0, 0, 0, 1)], t_start=0, t_end=100)
        with pytest.raises(ValueError):
            accumulate(s, 0, 0, 0.2)
        with pytest.raises(ValueError):
            accumulate(s, 0, 10, 0.0)


class TestSampleInterval:
    def test_bounds_inclusive(self):
        rng = np.random.default_rng(0)
        dts = {sample_interval(rng, 5, 2, 4)[1] - 5 for _ in range(200)}
        assert dts == {2, 3, 4}

    def test_degenerate_range(self):
        rng = np.random.default_rng(0)
        assert sample_interval(rng, 7, 3, 3) == (7, 10)

    def test_invalid_range(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            sample_interval(rng, 0, 5, 4)
        with pytest.raises(ValueError):
            sample_interval(rng, 0, 0, 4)


class TestChunkStream:
    def test_partition_is_exact(self):
        rng = np.random.default_rng(3)
        rows = [(int(t), int(rng.integers(W)), int(rng.integers(H)),
                 int(rng.choice([-1, 1])))
                for t in np.sort(rng.integers(0, 1000, size=400))]
        s = make_stream(rows, t_start=0, t_end=1000)
        chunks = chunk_stream(s, 300)
        assert [(c.t_start, c.t_end) for c in chunks] == \
            [(0, 300), (300, 600), (600, 900), (900, 1000)]
        assert sum(len(c.events) for c in chunks) == len(s)
        for c in chunks:
            assert c.duration == c.t_end - c.t_start
            if len(c.events):
                assert c.events.t.min() >= c.t_start
                assert c.events.t.max() < c.t_end

    def test_every_event_in_exactly_one_chunk(self):
        rows = [(t, 0, 0, 1) for t in [0, 299, 300, 301, 899, 999]]
        s = make_stream(rows, t_start=0, t_end=1000)
        chunks = chunk_stream(s, 300)
        counts = [len(c.events) for c in chunks]
        assert counts == [2, 2, 1, 1]

    def test_indices_are_sequential(self):
        s = make_stream([(0, 0, 0, 1)], t_start=0, t_end=1000)
        assert [c.index for c in chunk_stream(s, 250)] == [0, 1, 2, 3]

    def test_empty_stream_without_span_is_error(self):
        with pytest.raises(ValueError):
            chunk_stream(EventStream.empty(W, H), 100)


class TestMergeStreams:
    def test_merge_is_sorted_and_complete(self):
        a = make_stream([(0, 0, 0, 1), (10, 1, 1, -1)], t_start=0, t_end=20)
        b = make_stream([(5, 2, 2, 1), (15, 3, 3, 1)], t_start=0, t_end=20)
        m = merge_streams(a, b)
        assert list(m.t) == [0, 5, 10, 15]
        assert len(m) == 4
        assert m.time_span() == (0, 20)

    def test_resolution_mismatch(self):
        a = make_stream([(0, 0, 0, 1)])
        b = EventStream([0], [0], [0], [1], W + 1, H)
        with pytest.raises(ValueError):
            merge_streams(a, b)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 999), st.integers(0, W - 1),
                          st.integers(0, H - 1), st.sampled_from([-1, 1])),
                min_size=1, max_size=60),
       st.integers(1, 999))
def test_property_split_accumulation_matches_whole(rows, split):
    """For any stream and interior split, left + right == whole."""
    s = make_stream(rows, t_start=0, t_end=1000)
    whole = accumulate(s, 0, 1000, 0.2)
    left = accumulate(s, 0, split, 0.2)
    right = accumulate(s, split, 1000 - split, 0.2)
    np.testing.assert_allclose(left.values + right.values, whole.values,
                               rtol=0, atol=0)
