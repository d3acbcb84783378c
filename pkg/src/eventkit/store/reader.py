"""Lazy container reader, slicers and iterators."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from ..core import EventStream, FlowField, FlowSequence, GraySequence, SensorProps
from .. import flow as flowlib
from . import format as fmt
from .maps import US_PER_MS, TimeIndexMaps
from .writer import EVENT_COLUMNS, EVENTS_FILE, FLOW_FILE, GRAY_FILE, MAPS_FILE, PROPS_FILE, delta_decode


@dataclass(frozen=True, eq=False)
class GrayFrame:
    index: int
    ts: int
    image: np.ndarray


@dataclass(eq=False)
class Slice:
    """Events of one slice plus the gray frames bracketing it and the flow over it.

    ``gray_start``/``gray_end`` are ``None`` when no frame exists on that side;
    ``flow`` is ``None`` when the flow channel does not cover ``[t0_us, t1_us]``.
    """

    events: EventStream
    i0: int
    i1: int
    t0_us: int
    t1_us: int
    gray_start: Optional[GrayFrame] = None
    gray_end: Optional[GrayFrame] = None
    flow: Optional[FlowField] = None


@dataclass
class ReadStats:
    chunks_decoded: int = 0
    ts_blocks_decoded: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, chunks=0, ts_blocks=0):
        with self._lock:
            self.chunks_decoded += chunks
            self.ts_blocks_decoded += ts_blocks

    def reset(self):
        with self._lock:
            self.chunks_decoded = 0
            self.ts_blocks_decoded = 0


class Reader:
    """Handle on a container directory.

    Opening parses headers, offset tables, props and the millisecond maps;
    event payload is only decompressed chunk by chunk when slices ask for it.
    """

    def __init__(self, path):
        self.path = Path(path)
        if not (self.path / EVENTS_FILE).exists():
            raise fmt.ContainerError(f"missing header: no {EVENTS_FILE} in {self.path}")
        self._events = fmt.BlockFile(
            self.path / EVENTS_FILE, fmt.EVENTS_HEADER, b"EVKZ", lambda h: 4 * (-(-h[4] // h[3]))
        )
        _, _, self.codec_id, self.chunk_size, self.num_events, width, height = self._events.header
        self.codec = fmt.CODEC_NAMES[self.codec_id]

        props_path = self.path / PROPS_FILE
        if not props_path.exists():
            raise fmt.ContainerError(f"missing {PROPS_FILE} in {self.path}")
        with open(props_path, encoding="utf-8") as fh:
            doc = json.load(fh)
        self.props = SensorProps.from_dict(doc)
        if (self.props.width, self.props.height) != (width, height):
            raise fmt.ContainerError("props.json resolution disagrees with events header")
        self.meta = doc.get("meta", {})
        known = set(self.props.to_dict()) | {"meta"}
        self.extra = {k: v for k, v in doc.items() if k not in known}

        self._gray = fmt.BlockFile(self.path / GRAY_FILE, fmt.GRAY_HEADER, b"EVKG", lambda h: 1 + h[3])
        self.num_gray = self._gray.header[3]
        self.gray_ts = self._gray.read(0, "<i8", self.num_gray).astype(np.int64)

        self._flow = fmt.BlockFile(self.path / FLOW_FILE, fmt.FLOW_HEADER, b"EVKF", lambda h: 2 + 2 * h[3])
        self.num_flow = self._flow.header[3]
        self.flow_t0s = self._flow.read(0, "<i8", self.num_flow).astype(np.int64)
        self.flow_t1s = self._flow.read(1, "<i8", self.num_flow).astype(np.int64)

        self._maps_file = fmt.BlockFile(self.path / MAPS_FILE, fmt.MAPS_HEADER, b"EVKM", lambda h: 1 + h[3])
        self._map_lengths = self._maps_file.read(0, "<i8", self._maps_file.header[3])
        self._maps = {}
        for k in range(3):  # time_to_* maps are small, event_to_* are loaded on demand
            self._load_map(k)
        self._maps_lock = threading.Lock()
        self.stats = ReadStats()

    # -- plumbing -----------------------------------------------------------

    def close(self):
        for bf in (self._events, self._gray, self._flow, self._maps_file):
            bf.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _load_map(self, k):
        name = TimeIndexMaps.NAMES[k]
        self._maps[name] = self._maps_file.read(1 + k, "<i8", int(self._map_lengths[k])).astype(np.int64)
        return self._maps[name]

    def map(self, name: str) -> np.ndarray:
        arr = self._maps.get(name)
        if arr is None:
            with self._maps_lock:
                arr = self._maps.get(name)
                if arr is None:
                    arr = self._load_map(TimeIndexMaps.NAMES.index(name))
        return arr

    @property
    def maps(self) -> TimeIndexMaps:
        return TimeIndexMaps(**{name: self.map(name) for name in TimeIndexMaps.NAMES})

    @property
    def duration_ms(self) -> int:
        return len(self.map("time_to_event")) - 1

    @property
    def num_chunks(self) -> int:
        return -(-self.num_events // self.chunk_size)

    def __len__(self):
        return self.num_events

    def _chunk_len(self, c: int) -> int:
        return min(self.chunk_size, self.num_events - c * self.chunk_size)

    def _read_chunk(self, c: int):
        n = self._chunk_len(c)
        cols = [self._events.read(4 * c + j, dtype, n) for j, (_, dtype) in enumerate(EVENT_COLUMNS)]
        cols[2] = delta_decode(cols[2])
        self.stats.add(chunks=1)
        return cols

    def _read_chunk_ts(self, c: int) -> np.ndarray:
        ts = delta_decode(self._events.read(4 * c + 2, "<i8", self._chunk_len(c)))
        self.stats.add(ts_blocks=1)
        return ts

    # -- raw access ---------------------------------------------------------

    def read_events(self, i0: int = 0, i1: Optional[int] = None) -> EventStream:
        """Events ``[i0, i1)``; only the overlapping chunks are decompressed."""
        i1 = self.num_events if i1 is None else i1
        if not 0 <= i0 <= i1 <= self.num_events:
            raise IndexError(f"event range [{i0}, {i1}) outside [0, {self.num_events}]")
        if i0 == i1:
            return EventStream.empty()
        c0, c1 = i0 // self.chunk_size, (i1 - 1) // self.chunk_size
        parts = [[], [], [], []]
        for c in range(c0, c1 + 1):
            base = c * self.chunk_size
            lo, hi = max(i0 - base, 0), min(i1 - base, self._chunk_len(c))
            for j, col in enumerate(self._read_chunk(c)):
                parts[j].append(col[lo:hi])
        return EventStream(*(np.concatenate(p) for p in parts))

    def read_all(self) -> EventStream:
        return self.read_events(0, self.num_events)

    def event_ts(self, i: int) -> int:
        c = i // self.chunk_size
        return int(self._read_chunk_ts(c)[i - c * self.chunk_size])

    def gray_frame(self, g: int) -> GrayFrame:
        if not 0 <= g < self.num_gray:
            raise IndexError(f"gray index {g} outside [0, {self.num_gray})")
        h, w = self.props.shape
        img = self._gray.read(1 + g, "|u1", h * w).reshape(h, w)
        return GrayFrame(g, int(self.gray_ts[g]), img)

    def read_grays(self) -> GraySequence:
        if not self.num_gray:
            return GraySequence.empty(self.props.shape)
        return GraySequence(np.stack([self.gray_frame(g).image for g in range(self.num_gray)]), self.gray_ts)

    def flow_field(self, k: int) -> FlowField:
        if not 0 <= k < self.num_flow:
            raise IndexError(f"flow index {k} outside [0, {self.num_flow})")
        h, w = self.props.shape
        u = self._flow.read(2 + 2 * k, "<f8", h * w).reshape(h, w)
        v = self._flow.read(3 + 2 * k, "<f8", h * w).reshape(h, w)
        return FlowField(u, v, int(self.flow_t0s[k]), int(self.flow_t1s[k]))

    def read_flows(self) -> FlowSequence:
        return FlowSequence(tuple(self.flow_field(k) for k in range(self.num_flow)))

    # -- index lookups ------------------------------------------------------

    def event_index_at(self, t_us: int) -> int:
        """Leftmost event index with ``ts >= t_us``.

        The ms map narrows the search to one millisecond bucket; only the ts
        blocks of chunks holding that bucket are decoded.
        """
        t_us = int(t_us)
        tte = self.map("time_to_event")
        if t_us <= 0:
            return 0
        m = t_us // US_PER_MS
        if m >= len(tte) - 1:  # past the last event
            return self.num_events
        lo, hi = int(tte[m]), int(tte[m + 1])
        if t_us == m * US_PER_MS or lo == hi:
            return lo
        c0, c1 = lo // self.chunk_size, (hi - 1) // self.chunk_size
        for c in range(c0, c1 + 1):
            ts = self._read_chunk_ts(c)
            base = c * self.chunk_size
            start = max(lo - base, 0)
            stop = min(hi - base, len(ts))
            k = int(np.searchsorted(ts[start:stop], t_us, side="left"))
            if start + k < stop:
                return base + start + k
        return hi

    def _gray_at_or_before(self, t_us: int) -> Optional[int]:
        g = int(np.searchsorted(self.gray_ts, t_us, side="right")) - 1
        return g if g >= 0 else None

    def _gray_at_or_after(self, t_us: int) -> Optional[int]:
        g = int(np.searchsorted(self.gray_ts, t_us, side="left"))
        return g if g < self.num_gray else None

    def _gray_start_from_map(self, t0_ms: int) -> Optional[int]:
        ttg = self.map("time_to_gray")
        if t0_ms >= len(ttg):
            return self._gray_at_or_before(t0_ms * US_PER_MS)
        g = int(ttg[t0_ms])
        if g < self.num_gray and self.gray_ts[g] == t0_ms * US_PER_MS:
            return g
        return g - 1 if g > 0 else None

    def _gray_end_from_map(self, t1_ms: int) -> Optional[int]:
        ttg = self.map("time_to_gray")
        if t1_ms >= len(ttg):
            return self._gray_at_or_after(t1_ms * US_PER_MS)
        g = int(ttg[t1_ms])
        return g if g < self.num_gray else None

    def synchronized_flow(self, t0_us: int, t1_us: int) -> Optional[FlowField]:
        """Flow over ``[t0_us, t1_us]`` built from scaled and composed fields.

        Returns ``None`` when the flow channel is empty or does not cover the
        interval.
        """
        t0_us, t1_us = int(t0_us), int(t1_us)
        if self.num_flow == 0 or t1_us <= t0_us:
            return None
        if t0_us < self.flow_t0s[0] or t1_us > self.flow_t1s[-1]:
            return None
        k0 = int(np.searchsorted(self.flow_t0s, t0_us, side="right")) - 1
        k1 = int(np.searchsorted(self.flow_t1s, t1_us, side="left"))
        parts = []
        for k in range(k0, k1 + 1):
            f = self.flow_field(k)
            a, b = max(t0_us, f.t0), min(t1_us, f.t1)
            if b > a:
                parts.append(flowlib.scale_flow(f, a, b))
        return flowlib.accumulate(parts)

    # -- slicers ------------------------------------------------------------

    def _frame(self, g):
        return None if g is None else self.gray_frame(g)

    def slice_by_time(self, t0_ms: int, t1_ms: int, with_flow: bool = True) -> Slice:
        """Events with ``t0_ms*1000 <= ts < t1_ms*1000`` plus bracketing frames and flow."""
        t0_ms, t1_ms = int(t0_ms), int(t1_ms)
        if not 0 <= t0_ms < t1_ms <= self.duration_ms:
            raise ValueError(f"time range [{t0_ms}, {t1_ms}) ms outside [0, {self.duration_ms}]")
        tte = self.map("time_to_event")
        i0, i1 = int(tte[t0_ms]), int(tte[t1_ms])
        t0_us, t1_us = t0_ms * US_PER_MS, t1_ms * US_PER_MS
        return Slice(
            self.read_events(i0, i1), i0, i1, t0_us, t1_us,
            self._frame(self._gray_start_from_map(t0_ms)),
            self._frame(self._gray_end_from_map(t1_ms)),
            self.synchronized_flow(t0_us, t1_us) if with_flow else None,
        )

    def slice_by_time_us(self, t0_us: int, t1_us: int, with_flow: bool = True) -> Slice:
        """Microsecond-resolution variant of :meth:`slice_by_time`."""
        t0_us, t1_us = int(t0_us), int(t1_us)
        if not t0_us < t1_us:
            raise ValueError("empty time range")
        i0, i1 = self.event_index_at(t0_us), self.event_index_at(t1_us)
        return Slice(
            self.read_events(i0, i1), i0, i1, t0_us, t1_us,
            self._frame(self._gray_at_or_before(t0_us)),
            self._frame(self._gray_at_or_after(t1_us)),
            self.synchronized_flow(t0_us, t1_us) if with_flow else None,
        )

    def slice_by_event_index(self, i0: int, i1: int, with_flow: bool = True) -> Slice:
        """Events ``[i0, i1)``; the interval is ``[ts[i0], ts[i1-1]]``."""
        i0, i1 = int(i0), int(i1)
        if i0 == i1:
            raise ValueError("empty range")
        if not 0 <= i0 < i1 <= self.num_events:
            raise IndexError(f"event range [{i0}, {i1}) outside [0, {self.num_events}]")
        events = self.read_events(i0, i1)
        t0_us, t1_us = int(events.ts[0]), int(events.ts[-1])
        e2g = self.map("event_to_gray")
        g0 = int(e2g[i0])
        g1 = int(e2g[i1 - 1]) + 1
        return Slice(
            events, i0, i1, t0_us, t1_us,
            self._frame(g0 if g0 >= 0 else None),
            self._frame(g1 if g1 < self.num_gray else None),
            self.synchronized_flow(t0_us, t1_us) if with_flow else None,
        )

    def slice_by_gray_index(self, g0: int, g1: int, with_flow: bool = True) -> Slice:
        """Events with ``gray_ts[g0] <= ts < gray_ts[g1]``; frames g0 and g1."""
        g0, g1 = int(g0), int(g1)
        if not 0 <= g0 < g1 < self.num_gray:
            raise IndexError(f"gray range ({g0}, {g1}) invalid for {self.num_gray} frames")
        t0_us, t1_us = int(self.gray_ts[g0]), int(self.gray_ts[g1])
        i0, i1 = self.event_index_at(t0_us), self.event_index_at(t1_us)
        return Slice(
            self.read_events(i0, i1), i0, i1, t0_us, t1_us,
            self.gray_frame(g0), self.gray_frame(g1),
            self.synchronized_flow(t0_us, t1_us) if with_flow else None,
        )

    # -- iteration ----------------------------------------------------------

    def iterate(self, events: Optional[int] = None, millis: Optional[int] = None,
                gray_frames: Optional[int] = None, with_flow: bool = True) -> Iterator[Slice]:
        """Stride over the sequence with exactly one of the three stride kinds.

        Slices are consecutive and non-overlapping; the last may be short.
        """
        given = [(k, v) for k, v in (("events", events), ("millis", millis), ("gray_frames", gray_frames)) if v is not None]
        if len(given) != 1:
            raise ValueError("give exactly one of events=, millis=, gray_frames=")
        kind, stride = given[0]
        stride = int(stride)
        if stride <= 0:
            raise ValueError("stride must be positive")
        if kind == "events":
            for i0 in range(0, self.num_events, stride):
                yield self.slice_by_event_index(i0, min(i0 + stride, self.num_events), with_flow)
        elif kind == "millis":
            if self.num_events == 0:
                return
            start = int(self.map("time_to_event").searchsorted(1, side="left")) - 1  # first non-empty ms bin
            end = self.duration_ms
            for t0 in range(max(start, 0), end, stride):
                yield self.slice_by_time(t0, min(t0 + stride, end), with_flow)
        else:
            last = self.num_gray - 1
            for g0 in range(0, last, stride):
                yield self.slice_by_gray_index(g0, min(g0 + stride, last), with_flow)

    def count_slices(self, events=None, millis=None, gray_frames=None) -> int:
        if events:
            return -(-self.num_events // int(events))
        if millis:
            if self.num_events == 0:
                return 0
            start = int(self.map("time_to_event").searchsorted(1, side="left")) - 1
            return -(-(self.duration_ms - max(start, 0)) // int(millis))
        if gray_frames:
            return -(-max(self.num_gray - 1, 0) // int(gray_frames))
        raise ValueError("give one stride")


def open_container(path) -> Reader:
    return Reader(path)
