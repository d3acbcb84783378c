"""Temporal and spatial augmentations.

Spatial ops co-transform gray frames and flow fields with the events. Every
randomised op takes an explicit seed.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .core import EventStream, FlowField, FlowSequence, GraySequence, SensorProps

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


def time_warp(events: EventStream, factor: float) -> EventStream:
    """Stretch time about the first event: ``ts' = round(ts0 + factor * (ts - ts0))``."""
    if not factor > 0:
        raise ValueError("factor must be > 0")
    if len(events) == 0:
        return events
    t0 = events.ts[0]
    ts = t0 + np.rint(factor * (events.ts - t0).astype(np.float64)).astype(np.int64)
    return EventStream(events.xs, events.ys, ts, events.ps)


def inject_noise(events: EventStream, rate: float, props: SensorProps, seed: int = 0) -> EventStream:
    """Merge in uniform spurious events at ``rate`` events / pixel / second.

    The count is Poisson with mean ``rate * W * H * duration_s`` over the
    stream's time extent; polarity is a fair coin.
    """
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0 or len(events) < 2:
        return events
    rng = np.random.default_rng(seed)
    t_lo, t_hi = int(events.ts[0]), int(events.ts[-1])
    mean = rate * props.width * props.height * (t_hi - t_lo) / 1e6
    n = int(rng.poisson(mean))
    noise = EventStream(
        rng.integers(0, props.width, n),
        rng.integers(0, props.height, n),
        rng.integers(t_lo, t_hi + 1, n),
        rng.random(n) < 0.5,
    )
    merged = EventStream.concatenate([events, noise])
    return merged[np.argsort(merged.ts, kind="stable")]


def flip_polarity(events: EventStream) -> EventStream:
    return EventStream(events.xs, events.ys, events.ts, ~events.ps)


def temporal_reverse(events: EventStream) -> EventStream:
    """Play the stream backwards inside its own time extent.

    ``ts' = ts[0] + ts[-1] - reversed(ts)``, so the extent is preserved and the
    op is an exact involution. Polarity flips since brightness changes reverse.
    """
    if len(events) == 0:
        return events
    ts = events.ts[0] + events.ts[-1] - events.ts[::-1]
    return EventStream(events.xs[::-1], events.ys[::-1], ts, ~events.ps[::-1])


def _check_shapes(grays, flows, props):
    if grays is not None and len(grays) and grays.frames.shape[1:] != props.shape:
        raise ValueError(f"gray shape {grays.frames.shape[1:]} does not match sensor {props.shape}")
    if flows is not None and len(flows) and flows[0].shape != props.shape:
        raise ValueError(f"flow shape {flows[0].shape} does not match sensor {props.shape}")


def spatial_flip(events: EventStream, grays: Optional[GraySequence], flows: Optional[FlowSequence],
                 axis: str, props: SensorProps):
    """Mirror events, frames and flow about the vertical or horizontal axis.

    Horizontal flips ``x -> W-1-x`` and negates ``u``; vertical flips ``y`` and
    negates ``v``.
    """
    _check_shapes(grays, flows, props)
    if axis == HORIZONTAL:
        xs, ys = props.width - 1 - events.xs.astype(np.int64), events.ys
        img_axis, su, sv = -1, -1.0, 1.0
    elif axis == VERTICAL:
        xs, ys = events.xs, props.height - 1 - events.ys.astype(np.int64)
        img_axis, su, sv = -2, 1.0, -1.0
    else:
        raise ValueError(f"unknown axis {axis!r}")
    out_events = EventStream(xs, ys, events.ts, events.ps)
    out_grays = None if grays is None else GraySequence(np.flip(grays.frames, axis=img_axis), grays.ts)
    out_flows = None
    if flows is not None:
        out_flows = FlowSequence(tuple(
            FlowField(su * np.flip(f.u, axis=img_axis), sv * np.flip(f.v, axis=img_axis), f.t0, f.t1) for f in flows
        ))
    return out_events, out_grays, out_flows


def random_crop(events: EventStream, grays: Optional[GraySequence], flows: Optional[FlowSequence],
                props: SensorProps, crop: Optional[Tuple[int, int, int, int]] = None,
                size: Optional[Tuple[int, int]] = None, seed: int = 0):
    """Crop to ``crop = (x, y, width, height)``.

    When only ``size = (width, height)`` is given the origin is drawn uniformly
    with ``seed``. Returns ``(events, grays, flows, props)`` with coordinates
    re-based and the sensor size updated.
    """
    _check_shapes(grays, flows, props)
    if crop is None:
        if size is None:
            raise ValueError("give crop=(x, y, w, h) or size=(w, h)")
        cw, ch = (int(s) for s in size)
        if cw > props.width or ch > props.height:
            raise ValueError("crop larger than frame")
        rng = np.random.default_rng(seed)
        crop = (int(rng.integers(0, props.width - cw + 1)), int(rng.integers(0, props.height - ch + 1)), cw, ch)
    cx, cy, cw, ch = (int(c) for c in crop)
    if cw < 1 or ch < 1:
        raise ValueError("crop must be at least 1x1")
    if cx < 0 or cy < 0 or cx + cw > props.width or cy + ch > props.height:
        raise ValueError("crop larger than frame")
    xs = events.xs.astype(np.int64)
    ys = events.ys.astype(np.int64)
    keep = (xs >= cx) & (xs < cx + cw) & (ys >= cy) & (ys < cy + ch)
    out_events = EventStream(xs[keep] - cx, ys[keep] - cy, events.ts[keep], events.ps[keep])
    win = (slice(cy, cy + ch), slice(cx, cx + cw))
    out_grays = None if grays is None else GraySequence(grays.frames[(slice(None),) + win], grays.ts)
    out_flows = None
    if flows is not None:
        out_flows = FlowSequence(tuple(FlowField(f.u[win], f.v[win], f.t0, f.t1) for f in flows))
    new_props = SensorProps(**{**props.to_dict(), "width": cw, "height": ch})
    return out_events, out_grays, out_flows, new_props
