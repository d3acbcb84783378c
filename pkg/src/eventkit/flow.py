"""Optical-flow field utilities.

All fields follow the forward convention and every sampler clamps
coordinates to the image border.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import FlowField

FORWARD_TO_T1 = "forward_to_t1"
BACKWARD_TO_T0 = "backward_to_t0"


def bilinear_sample(img: np.ndarray, x, y) -> np.ndarray:
    """Bilinearly interpolate ``img`` at real coordinates, border-clamped."""
    h, w = img.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def sample_bilinear(field: FlowField, x, y):
    """Return the (u, v) displacement of ``field`` at real pixel coordinates."""
    return bilinear_sample(field.u, x, y), bilinear_sample(field.v, x, y)


def pixel_grid(shape):
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def _fill_holes(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Grow valid values into holes with repeated 3x3 means of valid neighbours."""
    values = np.where(valid, values, 0.0)
    valid = valid.copy()
    if valid.all():
        return values
    if not valid.any():
        return np.zeros_like(values)
    h, w = values.shape
    while not valid.all():
        pv = np.pad(values * valid, 1)
        pm = np.pad(valid.astype(np.float64), 1)
        total = np.zeros((h, w))
        count = np.zeros((h, w))
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                total += pv[dy:dy + h, dx:dx + w]
                count += pm[dy:dy + h, dx:dx + w]
        grow = ~valid & (count > 0)
        values[grow] = total[grow] / count[grow]
        valid |= grow
    return values


def splat_inverse(u: np.ndarray, v: np.ndarray):
    """Forward-splat ``-F`` to the landing positions ``x + F(x)``.

    Returns the normalised splat of u and v and the accumulated weight.
    """
    h, w = u.shape
    xs, ys = pixel_grid(u.shape)
    tx = xs + u
    ty = ys + v
    x0 = np.floor(tx).astype(np.intp)
    y0 = np.floor(ty).astype(np.intp)
    fx = tx - x0
    fy = ty - y0
    acc_u = np.zeros(h * w)
    acc_v = np.zeros(h * w)
    acc_w = np.zeros(h * w)
    for dx, dy, wt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx = x0 + dx
        cy = y0 + dy
        ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h) & (wt > 0)
        idx = cy[ok] * w + cx[ok]
        acc_w += np.bincount(idx, wt[ok], minlength=h * w)
        acc_u += np.bincount(idx, -u[ok] * wt[ok], minlength=h * w)
        acc_v += np.bincount(idx, -v[ok] * wt[ok], minlength=h * w)
    acc_w = acc_w.reshape(h, w)
    with np.errstate(invalid="ignore", divide="ignore"):
        iu = acc_u.reshape(h, w) / acc_w
        iv = acc_v.reshape(h, w) / acc_w
    return iu, iv, acc_w


def invert_flow(field: FlowField, min_weight: float = 1e-8) -> FlowField:
    """Invert a displacement field so that ``G(x + F(x)) ~ -F(x)``.

    Used to turn a backward field (t1 -> t0, as produced by some simulators)
    into a forward one. The interval is kept; only the direction flips.
    Pixels that receive no splat weight are filled from their neighbours.
    """
    iu, iv, weight = splat_inverse(field.u, field.v)
    valid = weight > min_weight
    return FlowField(_fill_holes(iu, valid), _fill_holes(iv, valid), field.t0, field.t1)


def scale_flow(field: FlowField, t0: int, t1: int) -> FlowField:
    """Linearly rescale a field to the sub-interval ``[t0, t1]``."""
    t0, t1 = int(t0), int(t1)
    if not (field.t0 <= t0 < t1 <= field.t1):
        raise ValueError(f"[{t0}, {t1}] is not inside the field interval [{field.t0}, {field.t1}]")
    if (t0, t1) == (field.t0, field.t1):
        return field
    s = (t1 - t0) / (field.t1 - field.t0)
    return FlowField(field.u * s, field.v * s, t0, t1)


def accumulate(fields: Sequence[FlowField]) -> FlowField:
    """Compose contiguous fields: ``C(x) = F1(x) + F2(x + F1(x)) + ...``."""
    fields = list(fields)
    if not fields:
        raise ValueError("accumulate needs at least one field")
    for a, b in zip(fields, fields[1:]):
        if a.t1 != b.t0:
            raise ValueError(f"non-contiguous fields: {a.t1} != {b.t0}")
        if a.shape != b.shape:
            raise ValueError("fields must share one shape")
    if len(fields) == 1:
        return fields[0]
    xs, ys = pixel_grid(fields[0].shape)
    cu = fields[0].u.copy()
    cv = fields[0].v.copy()
    for f in fields[1:]:
        du, dv = sample_bilinear(f, xs + cu, ys + cv)
        cu += du
        cv += dv
    return FlowField(cu, cv, fields[0].t0, fields[-1].t1)


def warp_image(image: np.ndarray, field: FlowField, direction: str = BACKWARD_TO_T0) -> np.ndarray:
    """Warp a gray frame with a forward field.

    ``backward_to_t0`` takes the t1 image and rebuilds the t0 view by sampling
    it at ``x + F(x)``. ``forward_to_t1`` takes the t0 image, inverts the field
    and samples the t0 image at ``x + F^-1(x)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != field.shape:
        raise ValueError(f"image shape {image.shape} does not match flow shape {field.shape}")
    if direction == FORWARD_TO_T1:
        field = invert_flow(field)
    elif direction != BACKWARD_TO_T0:
        raise ValueError(f"unknown warp direction {direction!r}")
    xs, ys = pixel_grid(image.shape)
    return bilinear_sample(image, xs + field.u, ys + field.v)
