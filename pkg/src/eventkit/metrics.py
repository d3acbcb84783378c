"""Flow evaluation metrics on event pixels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .core import EventStream, FlowField

ANGLE_EPS = 1e-6
DEFAULT_THRESHOLDS = (1.0, 2.0, 3.0)


class EmptyMaskError(ValueError):
    pass


def event_mask(events: EventStream, shape) -> np.ndarray:
    """True exactly at pixels holding at least one event."""
    mask = np.zeros(shape, dtype=bool)
    mask[events.ys.astype(np.intp), events.xs.astype(np.intp)] = True
    return mask


def _masked(pred: FlowField, gt: FlowField, mask):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mask = np.ones(pred.shape, bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape:
        raise ValueError("mask shape does not match flow shape")
    if not mask.any():
        raise EmptyMaskError("empty mask")
    return pred.u[mask], pred.v[mask], gt.u[mask], gt.v[mask]


def endpoint_errors(pred: FlowField, gt: FlowField, mask=None) -> np.ndarray:
    up, vp, ug, vg = _masked(pred, gt, mask)
    return np.hypot(up - ug, vp - vg)


def _angles(up, vp, ug, vg, eps=ANGLE_EPS):
    """Angles between 2-D vectors plus the validity mask (both norms >= eps)."""
    ok = (np.hypot(up, vp) >= eps) & (np.hypot(ug, vg) >= eps)
    cross = up * vg - vp * ug
    dot = up * ug + vp * vg
    return np.arctan2(np.abs(cross), dot)[ok], ok


def aee(pred: FlowField, gt: FlowField, mask=None) -> float:
    """Average endpoint error over masked pixels."""
    return float(np.mean(endpoint_errors(pred, gt, mask)))


def aae(pred: FlowField, gt: FlowField, mask=None, eps: float = ANGLE_EPS) -> float:
    """Average angle (radians) between predicted and true 2-D flow vectors.

    Pixels where either vector is shorter than ``eps`` are skipped.
    """
    ang, ok = _angles(*_masked(pred, gt, mask), eps=eps)
    if not ok.any():
        raise EmptyMaskError("empty effective mask: every vector is degenerate")
    return float(np.mean(ang))


def xpe(pred: FlowField, gt: FlowField, mask=None, threshold: float = 3.0) -> float:
    """Percentage of masked pixels whose endpoint error exceeds ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    epe = endpoint_errors(pred, gt, mask)
    return 100.0 * np.count_nonzero(epe > threshold) / epe.size


def outlier_key(threshold: float) -> str:
    t = float(threshold)
    return f"{int(t)}PE" if t.is_integer() else f"{t:g}PE"


@dataclass
class MetricsAccumulator:
    """Pixel-weighted running sums; merging is associative."""

    thresholds: tuple = DEFAULT_THRESHOLDS
    sum_epe: float = 0.0
    sum_angle: float = 0.0
    n_pixels: int = 0
    n_angle_pixels: int = 0
    excluded_angle_pixels: int = 0
    outlier_counts: Dict[float, int] = field(default_factory=dict)

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        for t in self.thresholds:
            self.outlier_counts.setdefault(t, 0)

    def update(self, pred: FlowField, gt: FlowField, mask=None) -> "MetricsAccumulator":
        up, vp, ug, vg = _masked(pred, gt, mask)
        epe = np.hypot(up - ug, vp - vg)
        ang, ok = _angles(up, vp, ug, vg)
        self.sum_epe += float(epe.sum())
        self.sum_angle += float(ang.sum())
        self.n_pixels += int(epe.size)
        self.n_angle_pixels += int(ok.sum())
        self.excluded_angle_pixels += int((~ok).sum())
        for t in self.thresholds:
            self.outlier_counts[t] += int(np.count_nonzero(epe > t))
        return self

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        if self.thresholds != other.thresholds:
            raise ValueError("cannot merge accumulators with different thresholds")
        out = MetricsAccumulator(self.thresholds)
        out.sum_epe = self.sum_epe + other.sum_epe
        out.sum_angle = self.sum_angle + other.sum_angle
        out.n_pixels = self.n_pixels + other.n_pixels
        out.n_angle_pixels = self.n_angle_pixels + other.n_angle_pixels
        out.excluded_angle_pixels = self.excluded_angle_pixels + other.excluded_angle_pixels
        out.outlier_counts = {t: self.outlier_counts[t] + other.outlier_counts[t] for t in self.thresholds}
        return out

    def report(self) -> Optional[dict]:
        """Summary dict, or ``None`` ("no data") when nothing was accumulated."""
        if self.n_pixels == 0:
            return None
        aae_rad = self.sum_angle / self.n_angle_pixels if self.n_angle_pixels else None
        return {
            "aee": self.sum_epe / self.n_pixels,
            "aae": aae_rad,
            "aae_deg": None if aae_rad is None else math.degrees(aae_rad),
            "n_pixels": self.n_pixels,
            "outliers": {outlier_key(t): 100.0 * self.outlier_counts[t] / self.n_pixels for t in self.thresholds},
            "excluded_angle_pixels": self.excluded_angle_pixels,
        }


def accumulate(acc: MetricsAccumulator, pred: FlowField, gt: FlowField, mask=None) -> MetricsAccumulator:
    return acc.update(pred, gt, mask)


def report(acc: MetricsAccumulator) -> Optional[dict]:
    return acc.report()


def evaluate(pairs: Iterable, thresholds=DEFAULT_THRESHOLDS) -> Optional[dict]:
    """Evaluate an iterable of ``(pred, gt, mask)`` triples into one report."""
    acc = MetricsAccumulator(tuple(thresholds))
    for pred, gt, mask in pairs:
        acc.update(pred, gt, mask)
    return acc.report()
