"""Domain types shared across the toolkit.

Timestamps are microseconds stored as int64. Polarity is boolean with
arithmetic value +1 (True) / -1 (False). Flow fields always use the forward
convention: a point at (x, y) at ``t0`` sits at (x + u, y + v) at ``t1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

U16_MAX = np.iinfo(np.uint16).max


def _frozen(arr: np.ndarray) -> np.ndarray:
    # copy writable inputs so callers cannot mutate the frozen view
    if arr.flags.writeable or not arr.flags.c_contiguous:
        arr = np.array(arr, order="C", copy=True)
        arr.setflags(write=False)
    return arr


def _as_dtype(values, dtype, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and arr.dtype != dtype:
        info = np.iinfo(dtype) if np.issubdtype(dtype, np.integer) else None
        if info is not None:
            if np.issubdtype(arr.dtype, np.floating) and not np.all(np.mod(arr, 1) == 0):
                raise ValueError(f"{name} must hold integral values")
            lo, hi = arr.min(), arr.max()
            if lo < info.min or hi > info.max:
                raise ValueError(f"{name} values outside the {np.dtype(dtype).name} range")
    return arr.astype(dtype, copy=False)


@dataclass(frozen=True)
class SensorProps:
    """Sensor geometry, acquisition rates and contrast thresholds.

    Defaults mirror the simulated DAVIS346-like rig: 346x260 pixels, a 1 kHz
    event simulation clock, 25 Hz gray/flow channels and thresholds 0.5/0.4.
    """

    width: int = 346
    height: int = 260
    event_clock_hz: float = 1000.0
    gray_rate_hz: float = 25.0
    flow_rate_hz: float = 25.0
    threshold_pos: float = 0.5
    threshold_neg: float = 0.4

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("width and height must be >= 1")
        if int(self.width) > U16_MAX or int(self.height) > U16_MAX:
            raise ValueError("width and height must fit in 16 bits")
        for name in ("event_clock_hz", "gray_rate_hz", "flow_rate_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not (self.threshold_pos > 0 and self.threshold_neg > 0):
            raise ValueError("thresholds must be > 0")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self):
        return (self.height, self.width)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "event_clock_hz": self.event_clock_hz,
            "gray_rate_hz": self.gray_rate_hz,
            "flow_rate_hz": self.flow_rate_hz,
            "threshold_pos": self.threshold_pos,
            "threshold_neg": self.threshold_neg,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SensorProps":
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(frozen=True, eq=False)
class EventStream:
    """Columnar event arrays.

    Arrays are normalised to (uint16, uint16, int64, bool) and made read-only.
    Values that do not fit the column dtype raise ``ValueError``; the
    ordering/bounds invariants are checked by :func:`validate_stream` instead so
    that malformed inputs can still be reported on.
    """

    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xs", _frozen(_as_dtype(self.xs, np.uint16, "xs")))
        object.__setattr__(self, "ys", _frozen(_as_dtype(self.ys, np.uint16, "ys")))
        object.__setattr__(self, "ts", _frozen(_as_dtype(self.ts, np.int64, "ts")))
        ps = np.asarray(self.ps)
        if ps.dtype != np.bool_:
            if ps.size and not np.all(np.isin(ps, (-1, 0, 1))):
                raise ValueError("ps must be boolean or in {-1, 0, 1}")
            ps = ps > 0
        object.__setattr__(self, "ps", _frozen(ps.reshape(-1)))

    @classmethod
    def empty(cls) -> "EventStream":
        return cls(np.zeros(0, np.uint16), np.zeros(0, np.uint16), np.zeros(0, np.int64), np.zeros(0, bool))

    @classmethod
    def concatenate(cls, streams: Sequence["EventStream"]) -> "EventStream":
        if not streams:
            return cls.empty()
        return cls(
            np.concatenate([s.xs for s in streams]),
            np.concatenate([s.ys for s in streams]),
            np.concatenate([s.ts for s in streams]),
            np.concatenate([s.ps for s in streams]),
        )

    def __len__(self) -> int:
        return int(self.ts.shape[0])

    def __getitem__(self, idx) -> "EventStream":
        return EventStream(self.xs[idx], self.ys[idx], self.ts[idx], self.ps[idx])

    @property
    def signed_polarity(self) -> np.ndarray:
        return np.where(self.ps, 1, -1).astype(np.int8)

    @property
    def duration_us(self) -> int:
        return int(self.ts[-1] - self.ts[0]) if len(self) else 0

    def equals(self, other: "EventStream") -> bool:
        return all(
            np.array_equal(getattr(self, c), getattr(other, c)) and getattr(self, c).dtype == getattr(other, c).dtype
            for c in ("xs", "ys", "ts", "ps")
        )


@dataclass(frozen=True, eq=False)
class GraySequence:
    """Grayscale frames (T x H x W, uint8) with strictly increasing timestamps."""

    frames: np.ndarray
    ts: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.size == 0 and frames.ndim != 3:
            frames = frames.reshape(0, 0, 0)
        if frames.ndim != 3:
            raise ValueError("frames must be a T x H x W array")
        frames = _as_dtype(frames.reshape(-1), np.uint8, "frames").reshape(frames.shape)
        ts = _as_dtype(np.asarray(self.ts).reshape(-1), np.int64, "gray ts")
        if len(ts) != frames.shape[0]:
            raise ValueError("len(frames) != len(ts)")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("gray timestamps must be strictly increasing")
        object.__setattr__(self, "frames", _frozen(frames))
        object.__setattr__(self, "ts", _frozen(ts))

    @classmethod
    def empty(cls, shape=(0, 0)) -> "GraySequence":
        return cls(np.zeros((0,) + tuple(shape), np.uint8), np.zeros(0, np.int64))

    def __len__(self) -> int:
        return int(self.ts.shape[0])


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense forward displacement over ``[t0, t1]`` microseconds."""

    u: np.ndarray
    v: np.ndarray
    t0: int
    t1: int

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError("u and v must be H x W arrays of equal shape")
        if not int(self.t1) > int(self.t0):
            raise ValueError("flow interval must satisfy t1 > t0")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))
        object.__setattr__(self, "t0", int(self.t0))
        object.__setattr__(self, "t1", int(self.t1))

    @property
    def shape(self):
        return self.u.shape

    @property
    def duration_us(self) -> int:
        return self.t1 - self.t0

    @classmethod
    def zeros(cls, shape, t0: int, t1: int) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape), t0, t1)

    @classmethod
    def constant(cls, shape, u: float, v: float, t0: int, t1: int) -> "FlowField":
        return cls(np.full(shape, float(u)), np.full(shape, float(v)), t0, t1)


@dataclass(frozen=True, eq=False)
class FlowSequence:
    """Temporally contiguous flow fields (``fields[k].t1 == fields[k+1].t0``).

    An empty sequence is allowed as the "no flow channel" value.
    """

    fields: tuple = ()

    def __post_init__(self):
        fields = tuple(self.fields)
        for a, b in zip(fields, fields[1:]):
            if a.t1 != b.t0:
                raise ValueError(f"flow fields not contiguous: {a.t1} != {b.t0}")
            if a.shape != b.shape:
                raise ValueError("flow fields must share one shape")
        object.__setattr__(self, "fields", fields)

    def __len__(self) -> int:
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def __getitem__(self, k) -> FlowField:
        return self.fields[k]

    @property
    def t0s(self) -> np.ndarray:
        return np.array([f.t0 for f in self.fields], dtype=np.int64)

    @property
    def t1s(self) -> np.ndarray:
        return np.array([f.t1 for f in self.fields], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class EncodedFrame:
    """Two-channel (positive / negative) event frame over ``[t0, t1)``."""

    pos: np.ndarray
    neg: np.ndarray
    t0: float
    t1: float

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=np.float64)
        neg = np.asarray(self.neg, dtype=np.float64)
        if pos.shape != neg.shape:
            raise ValueError("pos and neg must have the same shape")
        if (pos < 0).any() or (neg < 0).any():
            raise ValueError("encoded channels must be non-negative")
        object.__setattr__(self, "pos", _frozen(pos))
        object.__setattr__(self, "neg", _frozen(neg))

    @property
    def signed(self) -> np.ndarray:
        return self.pos - self.neg


@dataclass(frozen=True)
class Violation:
    rule: str
    index: int


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> List[str]:
        return [v.rule for v in self.violations]

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(f"{v.rule} at index {v.index}" for v in self.violations)


def _first(mask: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def validate_stream(events: EventStream, props: SensorProps) -> ValidationReport:
    """Check every EventStream invariant; report the first offending index per rule."""
    report = ValidationReport()
    lengths = {len(events.xs), len(events.ys), len(events.ts), len(events.ps)}
    if len(lengths) > 1:
        report.violations.append(Violation("equal lengths", min(lengths)))
        return report
    if len(events) == 0:
        return report
    checks = [
        ("ts >= 0", events.ts < 0),
        ("non-decreasing ts", np.concatenate([[False], np.diff(events.ts) < 0])),
        ("xs < width", events.xs >= props.width),
        ("ys < height", events.ys >= props.height),
    ]
    for rule, bad in checks:
        i = _first(bad)
        if i is not None:
            report.violations.append(Violation(rule, i))
    return report


class InvariantError(ValueError):
    """Raised when inputs violate a domain invariant."""

    def __init__(self, report: ValidationReport):
        super().__init__(f"invalid event stream: {report}")
        self.report = report
