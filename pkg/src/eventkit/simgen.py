"""Synthetic event sequences with exact ground-truth flow.

Scenes are closed-form intensity patterns under a rigid motion, rendered at a
high simulation rate and turned into events with a log-intensity threshold
model. Intensities are in [0, 1] and brightness is ``log(1 + I)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import EventStream, FlowField, FlowSequence, GraySequence, SensorProps

log = logging.getLogger(__name__)

CROSSING_EPS = 1e-9


# -- patterns -----------------------------------------------------------------

def _triangle(s, period):
    """Antiderivative of a +/-1 square wave with half-period ``period``."""
    r = np.mod(s, 2 * period)
    return period - np.abs(r - period)


@dataclass(frozen=True)
class Checkerboard:
    cell: float = 8.0
    kind: str = field(default="checkerboard", init=False)

    def point(self, X, Y):
        return ((np.floor(X / self.cell) + np.floor(Y / self.cell)) % 2 == 0).astype(np.float64)

    def box(self, X, Y):
        # exact pixel-area average: the unit box filter factorises over x and y
        ax = _triangle(X + 0.5, self.cell) - _triangle(X - 0.5, self.cell)
        ay = _triangle(Y + 0.5, self.cell) - _triangle(Y - 0.5, self.cell)
        return np.clip(0.5 * (1.0 + ax * ay), 0.0, 1.0)


@dataclass(frozen=True)
class Sinusoid:
    period: float = 16.0
    kind: str = field(default="sinusoid", init=False)

    def point(self, X, Y):
        k = 2 * np.pi / self.period
        return 0.5 + 0.25 * np.sin(k * X) + 0.25 * np.sin(k * Y)

    def box(self, X, Y):
        k = 2 * np.pi / self.period
        return 0.5 + 0.25 * np.sinc(1.0 / self.period) * (np.sin(k * X) + np.sin(k * Y))


@dataclass(frozen=True)
class GaussianBlobs:
    n: int = 20
    radius: float = 4.0
    seed: int = 0
    extent: tuple = (64.0, 64.0)
    kind: str = field(default="gaussian_blobs", init=False)

    def _centers(self):
        rng = np.random.default_rng(self.seed)
        w, h = self.extent
        return rng.uniform(0, w, self.n), rng.uniform(0, h, self.n)

    def point(self, X, Y):
        cx, cy = self._centers()
        w, h = self.extent
        out = np.zeros(np.broadcast(X, Y).shape)
        for x0, y0 in zip(cx, cy):
            # periodic tiling keeps texture on screen under any motion
            dx = np.mod(X - x0 + w / 2, w) - w / 2
            dy = np.mod(Y - y0 + h / 2, h) - h / 2
            out += np.exp(-(dx * dx + dy * dy) / (2 * self.radius ** 2))
        return np.clip(out, 0.0, 1.0)

    box = None


PATTERNS = {"checkerboard": Checkerboard, "sinusoid": Sinusoid, "gaussian_blobs": GaussianBlobs}


# -- motions ------------------------------------------------------------------

@dataclass(frozen=True)
class Translation:
    vx: float = 0.0  # px/s
    vy: float = 0.0
    kind: str = field(default="translation", init=False)

    def to_pattern(self, x, y, t):
        return x - self.vx * t, y - self.vy * t

    def displacement(self, x, y, t0, t1):
        dt = t1 - t0
        return np.full(np.shape(x), self.vx * dt), np.full(np.shape(y), self.vy * dt)


@dataclass(frozen=True)
class Rotation:
    omega: float = 0.0  # rad/s, counter-clockwise in (x right, y down) pixel axes
    center: Optional[tuple] = None
    kind: str = field(default="rotation", init=False)

    def _rotate(self, x, y, angle, center):
        cx, cy = center
        c, s = np.cos(angle), np.sin(angle)
        dx, dy = x - cx, y - cy
        return cx + c * dx - s * dy, cy + s * dx + c * dy

    def to_pattern(self, x, y, t, center=None):
        return self._rotate(x, y, -self.omega * t, center or self.center)

    def displacement(self, x, y, t0, t1, center=None):
        xr, yr = self._rotate(x, y, self.omega * (t1 - t0), center or self.center)
        return xr - x, yr - y


MOTIONS = {"translation": Translation, "rotation": Rotation}


def _from_dict(table, d):
    d = dict(d)
    kind = d.pop("type", None) or d.pop("kind", None)
    if kind not in table:
        raise ValueError(f"unknown type {kind!r}; expected one of {sorted(table)}")
    cls = table[kind]
    if "extent" in d:
        d["extent"] = tuple(d["extent"])
    if "center" in d and d["center"] is not None:
        d["center"] = tuple(d["center"])
    return cls(**d)


def _to_dict(obj):
    d = asdict(obj)
    d["type"] = d.pop("kind")
    return d


# -- scene --------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """A moving pattern seen by a simulated sensor.

    ``supersample`` is the per-axis sub-pixel sample count used when a pattern
    has no closed-form pixel average for the motion at hand.
    """

    pattern: object = field(default_factory=Checkerboard)
    motion: object = field(default_factory=Translation)
    duration: float = 1.0  # s
    sim_rate: float = 1000.0
    frame_rate: float = 25.0
    flow_rate: float = 25.0
    sensor: SensorProps = field(default_factory=SensorProps)
    supersample: int = 4
    refractory_us: int = 0
    threshold_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.sim_rate < self.frame_rate or self.sim_rate < self.flow_rate:
            raise ValueError("sim_rate must be >= frame_rate and flow_rate")
        if min(self.sim_rate, self.frame_rate, self.flow_rate) <= 0:
            raise ValueError("rates must be > 0")
        if int(self.supersample) < 1:
            raise ValueError("supersample must be >= 1")

    @classmethod
    def from_dict(cls, d) -> "SceneSpec":
        d = dict(d)
        if "pattern" in d:
            d["pattern"] = _from_dict(PATTERNS, d["pattern"])
        if "motion" in d:
            d["motion"] = _from_dict(MOTIONS, d["motion"])
        if "sensor" in d:
            d["sensor"] = SensorProps.from_dict(d["sensor"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SceneSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["pattern"] = _to_dict(self.pattern)
        d["motion"] = _to_dict(self.motion)
        d["sensor"] = self.sensor.to_dict()
        return d

    @property
    def shape(self):
        return self.sensor.shape

    def _center(self):
        if isinstance(self.motion, Rotation) and self.motion.center is None:
            return ((self.sensor.width - 1) / 2.0, (self.sensor.height - 1) / 2.0)
        return getattr(self.motion, "center", None)

    def intensity(self, t: float, x, y) -> np.ndarray:
        """Point-sampled scene intensity at time ``t`` (s) and real coordinates."""
        if isinstance(self.motion, Rotation):
            X, Y = self.motion.to_pattern(x, y, t, self._center())
        else:
            X, Y = self.motion.to_pattern(x, y, t)
        return self.pattern.point(X, Y)

    def render(self, t: float) -> np.ndarray:
        """Pixel intensities at time ``t`` (s), each the average over the pixel area."""
        h, w = self.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        if isinstance(self.motion, Translation) and self.pattern.box is not None:
            X, Y = self.motion.to_pattern(xs, ys, t)
            return self.pattern.box(X, Y)
        k = int(self.supersample)
        if k == 1:
            return self.intensity(t, xs, ys)
        offs = (np.arange(k) + 0.5) / k - 0.5
        acc = np.zeros((h, w))
        for oy in offs:
            for ox in offs:
                acc += self.intensity(t, xs + ox, ys + oy)
        return acc / (k * k)

    def flow(self, t0_us: int, t1_us: int) -> FlowField:
        """Closed-form forward flow over ``[t0_us, t1_us]``."""
        h, w = self.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        t0, t1 = t0_us / 1e6, t1_us / 1e6
        if isinstance(self.motion, Rotation):
            u, v = self.motion.displacement(xs, ys, t0, t1, self._center())
        else:
            u, v = self.motion.displacement(xs, ys, t0, t1)
        return FlowField(u, v, t0_us, t1_us)


def _times_us(rate: float, duration: float) -> np.ndarray:
    n = int(np.floor(duration * rate + 1e-9))
    return np.rint(np.arange(n + 1) * (1e6 / rate)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class RenderedScene:
    frames: np.ndarray  # K x H x W float intensities
    ts: np.ndarray  # us
    flows: FlowSequence


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Render high-rate frames and ground-truth flow at ``flow_rate``."""
    ts = _times_us(spec.sim_rate, spec.duration)
    frames = np.stack([spec.render(t / 1e6) for t in ts])
    fts = _times_us(spec.flow_rate, spec.duration)
    flows = FlowSequence(tuple(spec.flow(a, b) for a, b in zip(fts[:-1], fts[1:])))
    return RenderedScene(frames, ts, flows)


def generate_events(frames, ts, threshold_pos: float = 0.5, threshold_neg: float = 0.4,
                    refractory_us: int = 0, threshold_sigma: float = 0.0, seed: int = 0) -> EventStream:
    """Convert intensity frames into events.

    Per pixel, a reference level starts at the first frame's ``log(1 + I)``.
    Between frames brightness is linearly interpolated; every crossing of
    ``ref + k*C+`` (rising) or ``ref - k*C-`` (falling) emits an event at the
    interpolated time and moves the reference to the crossed level. uint8
    frames are scaled to [0, 1] first.
    """
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        frames = frames / 255.0
    frames = np.asarray(frames, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.int64)
    if frames.ndim != 3 or len(frames) < 2:
        raise ValueError("need at least 2 frames")
    if len(ts) != len(frames):
        raise ValueError("len(ts) != len(frames)")
    if (frames < 0).any():
        raise ValueError("intensities must be >= 0")
    _, h, w = frames.shape
    rng = np.random.default_rng(seed)
    cp = np.full((h, w), float(threshold_pos))
    cn = np.full((h, w), float(threshold_neg))
    if threshold_sigma > 0:
        cp = np.maximum(cp * (1 + threshold_sigma * rng.standard_normal((h, w))), 0.01 * threshold_pos)
        cn = np.maximum(cn * (1 + threshold_sigma * rng.standard_normal((h, w))), 0.01 * threshold_neg)
    cp, cn = cp.ravel(), cn.ravel()

    logs = np.log1p(frames.reshape(len(frames), -1))
    ref = logs[0].copy()
    last_t = np.full(h * w, np.iinfo(np.int64).min // 2)
    out_idx, out_t, out_p = [], [], []
    for k in range(1, len(frames)):
        l0, l1 = logs[k - 1], logs[k]
        ta, tb = ts[k - 1], ts[k]
        span = l1 - l0
        n_up = np.where(l1 > ref, np.floor((l1 - ref) / cp + CROSSING_EPS), 0).astype(np.int64)
        n_dn = np.where(l1 < ref, np.floor((ref - l1) / cn + CROSSING_EPS), 0).astype(np.int64)
        for n, c, sign, pol in ((n_up, cp, 1.0, True), (n_dn, cn, -1.0, False)):
            pix = np.flatnonzero(n)
            for j in range(1, int(n.max()) + 1 if pix.size else 1):
                pix = pix[n[pix] >= j]
                level = ref[pix] + sign * j * c[pix]
                frac = np.clip((level - l0[pix]) / span[pix], 0.0, 1.0)
                t = ta + np.rint(frac * (tb - ta)).astype(np.int64)
                if refractory_us > 0:
                    ok = t - last_t[pix] >= refractory_us
                    emit, t = pix[ok], t[ok]
                else:
                    emit = pix
                last_t[emit] = t
                out_idx.append(emit)
                out_t.append(t)
                out_p.append(np.full(emit.size, pol))
        ref = ref + n_up * cp - n_dn * cn
    if not out_idx:
        return EventStream.empty()
    idx = np.concatenate(out_idx)
    t = np.concatenate(out_t)
    p = np.concatenate(out_p)
    xs, ys = idx % w, idx // w
    order = np.lexsort((p, xs, ys, t))
    return EventStream(xs[order], ys[order], t[order], p[order])


def quantize(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SimulatedSequence:
    events: EventStream
    grays: GraySequence
    flows: FlowSequence
    props: SensorProps


def simulate(spec: SceneSpec) -> SimulatedSequence:
    """Render, generate events and subsample gray frames to ``frame_rate``."""
    scene = render_scene(spec)
    props = spec.sensor
    events = generate_events(scene.frames, scene.ts, props.threshold_pos, props.threshold_neg,
                             spec.refractory_us, spec.threshold_sigma, spec.seed)
    gts = _times_us(spec.frame_rate, spec.duration)
    pick = np.searchsorted(scene.ts, gts)
    pick = np.clip(pick, 0, len(scene.ts) - 1)
    grays = GraySequence(quantize(scene.frames[pick]), scene.ts[pick])
    log.info("simulated %d events, %d gray frames, %d flow fields", len(events), len(grays), len(scene.flows))
    return SimulatedSequence(events, grays, scene.flows, props)


def make_dataset(spec: SceneSpec, path, codec: str = "none", chunk_size: Optional[int] = None):
    """Simulate ``spec`` and write it as a container at ``path``."""
    from .store import write_sequence

    seq = simulate(spec)
    kwargs = {} if chunk_size is None else {"chunk_size": chunk_size}
    return write_sequence(seq.events, seq.grays, seq.flows, seq.props, path, codec=codec,
                          meta={"scene": spec.to_dict()}, **kwargs)
