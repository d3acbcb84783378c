"""Render events, gray frames and flow to RGB images and PNG files.

Palette (8-bit RGB):

* flow: hue is the direction ``atan2(v, u)`` mapped onto [0, 1) (0 = +x,
  a quarter turn = +y, i.e. down in image axes); saturation is
  ``min(|F| / max_magnitude, 1)``; value is 1, so zero flow is white.
* overlay: positive-only pixels ``POS_COLOR``, negative-only ``NEG_COLOR``,
  pixels holding both polarities ``MIXED_COLOR``; other pixels show the gray
  frame (or ``BACKGROUND_GRAY`` without one).
* encoded: white background, ``pos - neg`` tinted towards ``POS_COLOR`` or
  ``NEG_COLOR`` in proportion to ``|pos - neg| / max``.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import List, Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from .core import EncodedFrame, EventStream, FlowField
from .encode import encode_count

log = logging.getLogger(__name__)

POS_COLOR = (220, 50, 32)
NEG_COLOR = (0, 90, 181)
MIXED_COLOR = (255, 194, 10)
BACKGROUND_GRAY = 128
KINDS = ("overlay", "flow", "encoded")
STRIDES = ("events", "millis", "gray_frames")


def _to_u8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def flow_to_color(field: FlowField, max_magnitude: Optional[float] = None) -> np.ndarray:
    """H x W x 3 uint8 colour coding of a flow field.

    ``max_magnitude=None`` uses the field's own largest magnitude.
    """
    u, v = field.u, field.v
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(mag.max()) if mag.size else 0.0
    if max_magnitude <= 0:
        max_magnitude = 1.0
    hue = np.mod(np.arctan2(v, u) / (2 * math.pi), 1.0)
    sat = np.minimum(mag / max_magnitude, 1.0)
    hsv = np.stack([hue, sat, np.ones_like(sat)], axis=-1)
    return _to_u8(hsv_to_rgb(hsv))


def _gray_rgb(gray: Optional[np.ndarray], shape) -> np.ndarray:
    if gray is None:
        base = np.full(shape, BACKGROUND_GRAY, dtype=np.uint8)
    else:
        base = np.asarray(gray)
        if base.shape != tuple(shape):
            raise ValueError(f"gray frame shape {base.shape} does not match {tuple(shape)}")
        base = base.astype(np.uint8)
    return np.repeat(base[:, :, None], 3, axis=2)


def render_overlay(gray: Optional[np.ndarray], events: EventStream, shape=None) -> np.ndarray:
    """Tint event pixels over a gray frame; ``shape`` is needed only without a frame."""
    if shape is None:
        if gray is None:
            raise ValueError("need a gray frame or a shape")
        shape = np.asarray(gray).shape
    h, w = shape
    out = _gray_rgb(gray, (h, w))
    if len(events):
        if int(events.xs.max()) >= w or int(events.ys.max()) >= h:
            raise ValueError("events fall outside the frame")
        flat = events.ys.astype(np.intp) * w + events.xs.astype(np.intp)
        pos = np.bincount(flat[events.ps], minlength=h * w).reshape(h, w) > 0
        neg = np.bincount(flat[~events.ps], minlength=h * w).reshape(h, w) > 0
        out[pos & ~neg] = POS_COLOR
        out[neg & ~pos] = NEG_COLOR
        out[pos & neg] = MIXED_COLOR
    return out


def render_encoded(frame: EncodedFrame) -> np.ndarray:
    signed = frame.signed
    peak = float(np.abs(signed).max()) if signed.size else 0.0
    a = np.abs(signed) / peak if peak > 0 else np.zeros_like(signed)
    out = np.ones(signed.shape + (3,))
    for mask, color in ((signed > 0, POS_COLOR), (signed < 0, NEG_COLOR)):
        c = np.asarray(color, dtype=np.float64) / 255.0
        out[mask] = 1.0 - a[mask, None] * (1.0 - c)
    return _to_u8(out)


def save_png(rgb: np.ndarray, path) -> None:
    """Write without metadata so identical pixels give identical bytes."""
    Image.fromarray(np.ascontiguousarray(rgb)).save(path, format="PNG", optimize=False)


def render_slice(sl, kind: str, shape, max_magnitude: Optional[float] = None) -> np.ndarray:
    if kind == "overlay":
        gray = sl.gray_start.image if sl.gray_start is not None else None
        return render_overlay(gray, sl.events, shape)
    if kind == "flow":
        field = sl.flow
        if field is None:
            log.warning("no flow over [%d, %d] us; rendering zero flow", sl.t0_us, sl.t1_us)
            field = FlowField.zeros(shape, sl.t0_us, sl.t0_us + 1)
        return flow_to_color(field, max_magnitude)
    if kind == "encoded":
        # event-index slices end on their last event, so widen to a half-open interval
        ts = sl.events.ts
        t0 = min(sl.t0_us, int(ts[0])) if len(ts) else sl.t0_us
        t1 = max(sl.t1_us, int(ts[-1]) + 1 if len(ts) else t0 + 1)
        return render_encoded(encode_count(sl.events, t0, t1, 1, shape)[0])
    raise ValueError(f"kind must be one of {KINDS}")


def export_sequence(reader, stride: int, out_dir, kind: str = "overlay", by: str = "millis",
                    max_magnitude: Optional[float] = None) -> List[Path]:
    """Render every slice of ``reader.iterate(**{by: stride})`` to ``000000.png``, ...

    Returns the written paths in order.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if by not in STRIDES:
        raise ValueError(f"by must be one of {STRIDES}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    shape = reader.props.shape
    paths = []
    for k, sl in enumerate(reader.iterate(**{by: stride}, with_flow=(kind == "flow"))):
        p = out / f"{k:06d}.png"
        save_png(render_slice(sl, kind, shape, max_magnitude), p)
        paths.append(p)
    return paths


def export_events_csv(events: EventStream, path) -> None:
    """``t_us,x,y,p`` rows (p in {0, 1}) for external 3-D plotting; readable by the CSV importer."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "x", "y", "p"])
        w.writerows(zip(events.ts.tolist(), events.xs.tolist(), events.ys.tolist(), events.ps.astype(int).tolist()))
