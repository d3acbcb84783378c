"""Precomputed millisecond/index lookup tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

US_PER_MS = 1000


def duration_ms(ts: np.ndarray) -> int:
    """Number of millisecond bins needed so that ``[0, duration)`` holds every event."""
    if len(ts) == 0:
        return 0
    return int(ts[-1]) // US_PER_MS + 1


def leftmost_ge(sorted_values: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_values, boundaries, side="left").astype(np.int64)


def last_le(sorted_values: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the last entry <= query, or -1 when none is."""
    return (np.searchsorted(sorted_values, queries, side="right") - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class TimeIndexMaps:
    """Millisecond -> index and event -> gray/flow index tables.

    ``time_to_*[m]`` is the first index whose timestamp is >= ``m * 1000`` us,
    for ``m`` in ``0..duration_ms``. ``event_to_*[i]`` is the last gray frame
    (flow field start) at or before ``ts[i]``, ``-1`` if there is none.
    """

    time_to_event: np.ndarray
    time_to_gray: np.ndarray
    time_to_flow: np.ndarray
    event_to_gray: np.ndarray
    event_to_flow: np.ndarray

    NAMES = ("time_to_event", "time_to_gray", "time_to_flow", "event_to_gray", "event_to_flow")

    @classmethod
    def build(cls, ts, gray_ts, flow_t0s) -> "TimeIndexMaps":
        ts = np.asarray(ts, dtype=np.int64)
        gray_ts = np.asarray(gray_ts, dtype=np.int64)
        flow_t0s = np.asarray(flow_t0s, dtype=np.int64)
        bounds = np.arange(duration_ms(ts) + 1, dtype=np.int64) * US_PER_MS
        return cls(
            time_to_event=leftmost_ge(ts, bounds),
            time_to_gray=leftmost_ge(gray_ts, bounds),
            time_to_flow=leftmost_ge(flow_t0s, bounds),
            event_to_gray=last_le(gray_ts, ts),
            event_to_flow=last_le(flow_t0s, ts),
        )

    def as_dict(self):
        return {name: getattr(self, name) for name in self.NAMES}
