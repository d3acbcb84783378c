"""Event-to-frame encoders and the bilinear splat behind the image of warped events."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .core import EncodedFrame, EventStream


@dataclass(frozen=True)
class EncoderConfig:
    num_bins: int = 1
    sigma: float = 1000.0  # us
    lam: float = 1.0

    def __post_init__(self):
        if int(self.num_bins) < 1:
            raise ValueError("num_bins must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")


def bin_edges(t0, t1, num_bins: int) -> np.ndarray:
    return t0 + (t1 - t0) * np.arange(num_bins + 1) / num_bins


def _bin_index(events: EventStream, t0, t1, num_bins: int) -> np.ndarray:
    if not t1 > t0:
        raise ValueError("empty interval: t1 must exceed t0")
    if int(num_bins) < 1:
        raise ValueError("num_bins must be >= 1")
    ts = events.ts.astype(np.float64)
    if len(events) and (ts.min() < t0 or ts.max() >= t1):
        raise ValueError("events fall outside [t0, t1)")
    b = np.floor((ts - t0) * num_bins / (t1 - t0)).astype(np.intp)
    return np.clip(b, 0, num_bins - 1)


def _accumulate(events: EventStream, bins: np.ndarray, weights: np.ndarray, num_bins: int, shape):
    h, w = shape
    flat = (bins * h + events.ys.astype(np.intp)) * w + events.xs.astype(np.intp)
    size = num_bins * h * w
    pos = np.bincount(flat[events.ps], weights[events.ps], minlength=size).reshape(num_bins, h, w)
    neg = np.bincount(flat[~events.ps], weights[~events.ps], minlength=size).reshape(num_bins, h, w)
    return pos, neg


def encode_count(events: EventStream, t0, t1, num_bins: int, shape) -> List[EncodedFrame]:
    """Per-bin, per-polarity event counts. ``pos - neg`` is the signed polarity sum."""
    bins = _bin_index(events, t0, t1, num_bins)
    pos, neg = _accumulate(events, bins, np.ones(len(events)), num_bins, shape)
    edges = bin_edges(t0, t1, num_bins)
    return [EncodedFrame(pos[b], neg[b], edges[b], edges[b + 1]) for b in range(num_bins)]


def encode_gaussian(events: EventStream, t0, t1, config: EncoderConfig, shape) -> List[EncodedFrame]:
    """Gaussian time-weighted encoding.

    Each event lands in the bin that contains it and adds
    ``lam * exp(-(t - c)^2 / (2 sigma^2))`` to its polarity channel, where ``c``
    is the bin centre. The kernel is peak-normalised (1 at the centre).
    """
    n = config.num_bins
    bins = _bin_index(events, t0, t1, n)
    edges = bin_edges(t0, t1, n)
    centers = 0.5 * (edges[:-1] + edges[1:])
    dt = events.ts.astype(np.float64) - centers[bins]
    weights = config.lam * np.exp(-(dt * dt) / (2.0 * config.sigma ** 2))
    pos, neg = _accumulate(events, bins, weights, n, shape)
    return [EncodedFrame(pos[b], neg[b], edges[b], edges[b + 1]) for b in range(n)]


def splat_iwe(xs, ys, weights, shape) -> np.ndarray:
    """Bilinearly vote each weighted point onto its four neighbouring pixels.

    Corners falling outside the frame are dropped, so a point wholly outside
    contributes nothing.
    """
    h, w = shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), xs.shape)
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    out = np.zeros(h * w)
    for dx, dy, k in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx = x0 + dx
        cy = y0 + dy
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        out += np.bincount(cy[ok] * w + cx[ok], weights[ok] * k[ok], minlength=h * w)
    return out.reshape(h, w)
