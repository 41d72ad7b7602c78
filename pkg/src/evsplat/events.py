"""Event streams, interval accumulation into event maps, and chunking.

Timestamps are integer microseconds.  Accumulation intervals are half-open
``[t, t + dt)`` so that splitting an interval at any interior point is exact
(no event counted twice).  Event-map values carry the contrast-threshold
scale: ``value = contrast_threshold * (signed event count)``, which makes a
measured map directly comparable to a synthesized log-brightness difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Event:
    """A single brightness-change impulse."""

    t: int  # microseconds, >= 0
    x: int
    y: int
    polarity: int  # +1 or -1

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("timestamp must be non-negative")
        if self.polarity not in (1, -1):
            raise ValueError("polarity must be +1 or -1")


class EventStream:
    """A time-sorted collection of events with a fixed sensor resolution.

    Stored as parallel numpy arrays.  Immutable by convention: operations
    return new streams.  ``t_start``/``t_end`` declare the covered time span
    (defaulting to the first/last event timestamp), which bounds the valid
    accumulation intervals.
    """

    def __init__(self, t, x, y, polarity, width: int, height: int,
                 t_start: int | None = None, t_end: int | None = None):
        self.t = np.ascontiguousarray(t, dtype=np.int64)
        self.x = np.ascontiguousarray(x, dtype=np.int32)
        self.y = np.ascontiguousarray(y, dtype=np.int32)
        self.polarity = np.ascontiguousarray(polarity, dtype=np.int8)
        if not (len(self.t) == len(self.x) == len(self.y) == len(self.polarity)):
            raise ValueError("field arrays must have equal length")
        self.width = int(width)
        self.height = int(height)
        if len(self.t):
            if np.any(np.diff(self.t) < 0):
                raise ValueError("events must be sorted non-decreasing in t")
            if self.t[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if (self.x.min() < 0 or self.x.max() >= self.width
                    or self.y.min() < 0 or self.y.max() >= self.height):
                raise ValueError("event coordinates outside sensor resolution")
            if not np.all(np.abs(self.polarity) == 1):
                raise ValueError("polarity must be +1 or -1")
        self.t_start = int(t_start) if t_start is not None else (int(self.t[0]) if len(self.t) else None)
        self.t_end = int(t_end) if t_end is not None else (int(self.t[-1]) + 1 if len(self.t) else None)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i]))

    @staticmethod
    def from_events(events, width: int, height: int, **kwargs) -> "EventStream":
        events = list(events)
        return EventStream(
            [e.t for e in events], [e.x for e in events], [e.y for e in events],
            [e.polarity for e in events], width, height, **kwargs)

    @staticmethod
    def empty(width: int, height: int, t_start: int | None = None,
              t_end: int | None = None) -> "EventStream":
        return EventStream([], [], [], [], width, height, t_start=t_start, t_end=t_end)

    def slice_time(self, t0: int, t1: int) -> "EventStream":
        """Events with t in [t0, t1), declared span [t0, t1)."""
        lo = int(np.searchsorted(self.t, t0, side="left"))
        hi = int(np.searchsorted(self.t, t1, side="left"))
        return EventStream(self.t[lo:hi], self.x[lo:hi], self.y[lo:hi],
                           self.polarity[lo:hi], self.width, self.height,
                           t_start=t0, t_end=t1)

    def time_span(self):
        return self.t_start, self.t_end


@dataclass(frozen=True)
class EventMap:
    """Signed per-pixel accumulation over [t_start, t_end), scaled by the
    contrast threshold (units: log-brightness)."""

    values: np.ndarray  # (H, W) float64
    t_start: int
    t_end: int

    @property
    def resolution(self):
        h, w = self.values.shape
        return w, h


@dataclass(frozen=True)
class Chunk:
    """A contiguous temporal slice of a stream."""

    events: EventStream
    t_start: int
    t_end: int
    index: int

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start


def accumulate(stream: EventStream, t: int, dt: int, contrast_threshold: float) -> EventMap:
    """Accumulate events over [t, t+dt) into a signed event map.

    value(x, y) = contrast_threshold * (N+ - N-) at that pixel within the
    interval.  The empty interval yields an all-zero map; an interval
    outside the stream's declared span is an error.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if contrast_threshold <= 0:
        raise ValueError("contrast_threshold must be positive")
    span0, span1 = stream.time_span()
    if span0 is not None and (t < span0 or t + dt > span1):
        raise ValueError(
            f"interval [{t}, {t + dt}) outside stream span [{span0}, {span1})")
    lo = int(np.searchsorted(stream.t, t, side="left"))
    hi = int(np.searchsorted(stream.t, t + dt, side="left"))
    # integer intermediate keeps the parallel/sequential reduction bit-identical
    counts = np.zeros((stream.height, stream.width), dtype=np.int64)
    np.add.at(counts, (stream.y[lo:hi], stream.x[lo:hi]),
              stream.polarity[lo:hi].astype(np.int64))
    return EventMap(values=contrast_threshold * counts.astype(np.float64),
                    t_start=int(t), t_end=int(t + dt))


def sample_interval(rng: np.random.Generator, t: int, dt_min: int, dt_max: int):
    """Draw (t, t + dt) with dt uniform over the integers [dt_min, dt_max]."""
    if not (0 < dt_min <= dt_max):
        raise ValueError("require 0 < dt_min <= dt_max")
    dt = int(rng.integers(dt_min, dt_max + 1))
    return int(t), int(t) + dt


def chunk_stream(stream: EventStream, chunk_duration: int) -> list[Chunk]:
    """Partition a stream into contiguous chunks of `chunk_duration`.

    Chunks share boundary timestamps; the last chunk may be shorter.  The
    half-open slicing guarantees every event lands in exactly one chunk.
    """
    if chunk_duration <= 0:
        raise ValueError("chunk_duration must be positive")
    span0, span1 = stream.time_span()
    if span0 is None:
        raise ValueError("cannot chunk an empty stream with no declared span")
    chunks = []
    index = 0
    t0 = span0
    while t0 < span1:
        t1 = min(t0 + chunk_duration, span1)
        sub = stream.slice_time(t0, t1)
        # last chunk must also own events exactly at span1 (if declared span
        # equals the last event timestamp + 1 this is already the case)
        chunks.append(Chunk(events=sub, t_start=t0, t_end=t1, index=index))
        index += 1
        t0 = t1
    return chunks


def merge_streams(a: EventStream, b: EventStream) -> EventStream:
    """Merge two streams over the same sensor into one sorted stream."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("resolution mismatch")
    t = np.concatenate([a.t, b.t])
    order = np.argsort(t, kind="stable")
    span0 = min(s for s in (a.t_start, b.t_start) if s is not None) \
        if (a.t_start is not None or b.t_start is not None) else None
    span1 = max(s for s in (a.t_end, b.t_end) if s is not None) \
        if (a.t_end is not None or b.t_end is not None) else None
    return EventStream(
        t[order],
        np.concatenate([a.x, b.x])[order],
        np.concatenate([a.y, b.y])[order],
        np.concatenate([a.polarity, b.polarity])[order],
        a.width, a.height, t_start=span0, t_end=span1)
