"""Contrast maximisation flow estimation and flow losses.

Events are transported linearly to a reference time with a candidate flow,
splatted into an image of warped events (IWE), and the flow is moved uphill
on a sharpness objective of that image. The flow is parameterised by a grid
of control points, bilinearly upsampled to a dense field, and refined
coarse-to-fine.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import EventStream, FlowField
from .encode import splat_iwe
from .flow import bilinear_sample, pixel_grid

log = logging.getLogger(__name__)

OBJECTIVES = ("variance", "grad_mag", "multifocal_normalized")
FOCAL_OBJECTIVES = ("variance", "grad_mag")
REFERENCE_TIMES = ("t0", "mid", "t1")
IWE_KERNELS = ("gaussian", "bilinear")

CHARBONNIER_ALPHA = 0.45
CHARBONNIER_EPS = 1e-3


class DegenerateNormalizerError(ValueError):
    pass


@dataclass(frozen=True)
class CmaxConfig:
    """Optimiser settings.

    ``objective`` picks the sharpness measure; for ``multifocal_normalized``
    the per-reference-time measure is ``focal_objective``. ``step_size`` is in
    pixels: one step moves the control point with the steepest gradient by
    that much. Steps that lower the objective are rejected and halved.

    The IWE is drawn with ``iwe_kernel`` on a canvas padded by
    ``iwe_padding`` pixels. Estimation first searches constant flows within
    ``translation_search`` pixels (see ``min_events``, ``min_gain`` and the
    shuffled-time null of ``null_trials`` for when motion counts as found),
    then refines on the control grid.
    """

    patch_grid: Tuple[int, int] = (8, 8)
    pyramid_levels: int = 3
    max_iters: int = 250
    step_size: float = 1.0
    min_step: float = 1e-3
    smoothness_weight: float = 30.0
    objective: str = "multifocal_normalized"
    focal_objective: str = "variance"
    reference_times: Tuple[str, ...] = ("t0", "t1")
    charbonnier_alpha: float = CHARBONNIER_ALPHA
    charbonnier_eps: float = CHARBONNIER_EPS
    signed_weights: bool = False
    iwe_kernel: str = "gaussian"
    iwe_sigma: float = 0.75
    iwe_padding: int = 8
    translation_search: float = 6.0
    search_step: float = 0.5
    null_trials: int = 4
    null_ratio: float = 1.0
    min_gain: float = 0.5
    min_events: int = 1000
    seed: int = 0

    def __post_init__(self):
        grid = tuple(int(g) for g in self.patch_grid)
        if len(grid) != 2 or min(grid) < 1:
            raise ValueError("patch_grid must be (rows, cols) >= (1, 1)")
        object.__setattr__(self, "patch_grid", grid)
        object.__setattr__(self, "reference_times", tuple(self.reference_times))
        if int(self.pyramid_levels) < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be >= 0")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.focal_objective not in FOCAL_OBJECTIVES:
            raise ValueError(f"focal_objective must be one of {FOCAL_OBJECTIVES}")
        if not self.reference_times or any(r not in REFERENCE_TIMES for r in self.reference_times):
            raise ValueError(f"reference_times must be a non-empty subset of {REFERENCE_TIMES}")
        if not self.charbonnier_eps > 0:
            raise ValueError("charbonnier_eps must be > 0")
        if self.iwe_kernel not in IWE_KERNELS:
            raise ValueError(f"iwe_kernel must be one of {IWE_KERNELS}")
        if self.iwe_sigma < 0 or (self.iwe_kernel == "gaussian" and not self.iwe_sigma > 0):
            raise ValueError("iwe_sigma must be > 0 for the gaussian kernel and >= 0 for bilinear")
        if int(self.iwe_padding) < 0:
            raise ValueError("iwe_padding must be >= 0")
        if self.translation_search < 0:
            raise ValueError("translation_search must be >= 0")
        if int(self.null_trials) < 0 or not self.null_ratio > 0:
            raise ValueError("null_trials must be >= 0 and null_ratio > 0")
        if self.min_gain < 0 or int(self.min_events) < 0:
            raise ValueError("min_gain and min_events must be >= 0")
        if not self.search_step > 0:
            raise ValueError("search_step must be > 0")

    @classmethod
    def from_dict(cls, d) -> "CmaxConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        known = dict(d)
        for k in ("patch_grid", "reference_times"):
            if k in known:
                known[k] = tuple(known[k])
        return cls(**known)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


# -- losses -------------------------------------------------------------------

def loss_charbonnier(x, alpha: float = CHARBONNIER_ALPHA, eps: float = CHARBONNIER_EPS):
    """``(x^2 + eps^2) ** alpha``, elementwise."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    x = np.asarray(x, dtype=np.float64)
    return (x * x + eps * eps) ** alpha


def _charbonnier_grad(x, alpha, eps):
    return 2.0 * alpha * x * (x * x + eps * eps) ** (alpha - 1.0)


def _forward_diffs(a: np.ndarray):
    return a[:, 1:] - a[:, :-1], a[1:, :] - a[:-1, :]


def _smoothness_terms(shape) -> int:
    h, w = shape
    return 2 * (h * (w - 1) + (h - 1) * w)


def smoothness_value_and_grad(u, v, alpha=CHARBONNIER_ALPHA, eps=CHARBONNIER_EPS):
    """Mean Charbonnier of forward differences of u and v, with its dense gradient."""
    n = _smoothness_terms(u.shape)
    if n == 0:
        return 0.0, np.zeros_like(u), np.zeros_like(v)
    total = 0.0
    grads = []
    for a in (u, v):
        g = np.zeros_like(a)
        dx, dy = _forward_diffs(a)
        total += loss_charbonnier(dx, alpha, eps).sum() + loss_charbonnier(dy, alpha, eps).sum()
        gx = _charbonnier_grad(dx, alpha, eps) / n
        gy = _charbonnier_grad(dy, alpha, eps) / n
        g[:, 1:] += gx
        g[:, :-1] -= gx
        g[1:, :] += gy
        g[:-1, :] -= gy
        grads.append(g)
    return total / n, grads[0], grads[1]


def loss_smoothness(flow: FlowField, alpha=CHARBONNIER_ALPHA, eps=CHARBONNIER_EPS) -> float:
    return smoothness_value_and_grad(flow.u, flow.v, alpha, eps)[0]


def loss_photometric(gray_t0, gray_t1, flow: FlowField, alpha=CHARBONNIER_ALPHA, eps=CHARBONNIER_EPS) -> float:
    """Mean Charbonnier of ``I0(x) - I1(x + F(x))`` with border-clamped bilinear sampling."""
    g0 = np.asarray(gray_t0, dtype=np.float64)
    g1 = np.asarray(gray_t1, dtype=np.float64)
    if g0.shape != flow.shape or g1.shape != flow.shape:
        raise ValueError("gray frames and flow must share one shape")
    xs, ys = pixel_grid(flow.shape)
    warped = bilinear_sample(g1, xs + flow.u, ys + flow.v)
    return float(np.mean(loss_charbonnier(g0 - warped, alpha, eps)))


# -- sharpness objectives -----------------------------------------------------

def objective_variance(iwe: np.ndarray) -> float:
    """Population variance of all pixel values."""
    return float(np.var(iwe))


def _variance_grad(iwe):
    return 2.0 * (iwe - iwe.mean()) / iwe.size


def objective_grad_mag(iwe: np.ndarray) -> float:
    """Mean of ``Gx^2 + Gy^2`` with forward differences (zero past the last row/column)."""
    iwe = np.asarray(iwe, dtype=np.float64)
    dx, dy = _forward_diffs(iwe)
    return float(((dx * dx).sum() + (dy * dy).sum()) / iwe.size)


def _grad_mag_grad(iwe):
    dx, dy = _forward_diffs(iwe)
    g = np.zeros_like(iwe)
    s = 2.0 / iwe.size
    g[:, 1:] += s * dx
    g[:, :-1] -= s * dx
    g[1:, :] += s * dy
    g[:-1, :] -= s * dy
    return g


_FOCAL = {
    "variance": (objective_variance, _variance_grad),
    "grad_mag": (objective_grad_mag, _grad_mag_grad),
}


# -- warping ------------------------------------------------------------------

def _ref_time(name: str, t0: float, t1: float) -> float:
    return {"t0": t0, "mid": 0.5 * (t0 + t1), "t1": t1}[name]


def _weights(events: EventStream, signed: bool) -> np.ndarray:
    return events.signed_polarity.astype(np.float64) if signed else np.ones(len(events))


def warp_events(events: EventStream, flow: FlowField, t_ref: float, signed: bool = False):
    """Transport events linearly to ``t_ref`` along the flow at their pixel.

    Returns ``(x', y', weight)`` arrays; weights are +1, or the signed polarity
    when ``signed``.
    """
    if not flow.t0 <= t_ref <= flow.t1:
        raise ValueError(f"t_ref {t_ref} outside flow interval [{flow.t0}, {flow.t1}]")
    xs = events.xs.astype(np.intp)
    ys = events.ys.astype(np.intp)
    tau = (t_ref - events.ts.astype(np.float64)) / (flow.t1 - flow.t0)
    return xs + flow.u[ys, xs] * tau, ys + flow.v[ys, xs] * tau, _weights(events, signed)


def _splat_grad(xw, yw, G):
    """d/dx', d/dy' of ``sum(G * splat(x', y'))`` for unit weights."""
    h, w = G.shape
    Gp = np.zeros((h + 2, w + 2))
    Gp[1:-1, 1:-1] = G
    x0 = np.floor(xw)
    y0 = np.floor(yw)
    fx = xw - x0
    fy = yw - y0
    # corners outside the padded frame contribute nothing
    cx = np.clip(x0.astype(np.intp) + 1, 0, w + 1)
    cy = np.clip(y0.astype(np.intp) + 1, 0, h + 1)
    cx1 = np.clip(x0.astype(np.intp) + 2, 0, w + 1)
    cy1 = np.clip(y0.astype(np.intp) + 2, 0, h + 1)
    inx0 = (x0 >= -1) & (x0 <= w - 1)
    inx1 = (x0 + 1 >= 0) & (x0 + 1 <= w)
    iny0 = (y0 >= -1) & (y0 <= h - 1)
    iny1 = (y0 + 1 >= 0) & (y0 + 1 <= h)
    g00 = np.where(inx0 & iny0, Gp[cy, cx], 0.0)
    g10 = np.where(inx1 & iny0, Gp[cy, cx1], 0.0)
    g01 = np.where(inx0 & iny1, Gp[cy1, cx], 0.0)
    g11 = np.where(inx1 & iny1, Gp[cy1, cx1], 0.0)
    gx = (1 - fy) * (g10 - g00) + fy * (g11 - g01)
    gy = (1 - fx) * (g01 - g00) + fx * (g11 - g10)
    return gx, gy


class GaussianSplat:
    """Each point votes a sampled isotropic Gaussian centred on its exact position.

    Unlike the bilinear vote, the spread of the vote does not depend on the
    sub-pixel offset, so the sharpness of the image does not favour warps that
    happen to land events on integer pixels. Taps beyond ``3 sigma`` and
    outside the frame are dropped.
    """

    def __init__(self, xs, ys, weights, shape, sigma: float):
        h, w = shape
        r = int(math.ceil(3.0 * sigma))
        taps = np.arange(-r + 1, r + 1)
        self.shape = (h, w)
        self.sigma = sigma
        x0 = np.floor(xs).astype(np.intp)
        y0 = np.floor(ys).astype(np.intp)
        px = x0[:, None] + taps  # (n, k)
        py = y0[:, None] + taps
        self.dx = px - xs[:, None]
        self.dy = py - ys[:, None]
        c = 1.0 / (math.sqrt(2.0 * math.pi) * sigma)
        self.wx = c * np.exp(-self.dx ** 2 / (2 * sigma ** 2)) * ((px >= 0) & (px < w))
        self.wy = c * np.exp(-self.dy ** 2 / (2 * sigma ** 2)) * ((py >= 0) & (py < h))
        self.weights = weights
        self.flat = np.clip(py, 0, h - 1)[:, :, None] * w + np.clip(px, 0, w - 1)[:, None, :]  # (n, ky, kx)

    def image(self) -> np.ndarray:
        h, w = self.shape
        v = self.weights[:, None, None] * self.wy[:, :, None] * self.wx[:, None, :]
        return np.bincount(self.flat.ravel(), v.ravel(), minlength=h * w).reshape(h, w)

    def grad(self, G: np.ndarray):
        """d/dx, d/dy of ``sum(G * image)`` per point."""
        g = G.ravel()[self.flat] * self.weights[:, None, None]
        s2 = self.sigma ** 2
        dwx = self.wx * self.dx / s2
        dwy = self.wy * self.dy / s2
        gx = np.einsum("nij,ni,nj->n", g, self.wy, dwx)
        gy = np.einsum("nij,ni,nj->n", g, dwy, self.wx)
        return gx, gy


# -- control grid -------------------------------------------------------------

def _interp_matrix(n: int, k: int) -> np.ndarray:
    """n x k bilinear weights from k evenly spaced control points (patch centres)."""
    R = np.zeros((n, k))
    g = np.clip((np.arange(n) + 0.5) * k / n - 0.5, 0, k - 1)
    j0 = np.minimum(np.floor(g).astype(np.intp), max(k - 2, 0))
    j1 = np.minimum(j0 + 1, k - 1)
    f = g - j0
    rows = np.arange(n)
    np.add.at(R, (rows, j0), 1 - f)
    np.add.at(R, (rows, j1), f)
    return R


class ControlGrid:
    """Bilinear upsampling from a (rows, cols) grid of control points to a dense field."""

    def __init__(self, shape, grid):
        self.shape = tuple(shape)
        self.grid = (min(int(grid[0]), self.shape[0]), min(int(grid[1]), self.shape[1]))
        self.Ry = _interp_matrix(self.shape[0], self.grid[0])
        self.Rx = _interp_matrix(self.shape[1], self.grid[1])

    @property
    def size(self) -> int:
        return 2 * self.grid[0] * self.grid[1]

    def dense(self, theta: np.ndarray):
        rows, cols = self.grid
        tu = theta[: rows * cols].reshape(rows, cols)
        tv = theta[rows * cols:].reshape(rows, cols)
        return self.Ry @ tu @ self.Rx.T, self.Ry @ tv @ self.Rx.T

    def pullback(self, gu: np.ndarray, gv: np.ndarray) -> np.ndarray:
        return np.concatenate([(self.Ry.T @ gu @ self.Rx).ravel(), (self.Ry.T @ gv @ self.Rx).ravel()])

    def fit(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Control values sampled from a dense field at the control-point centres."""
        rows, cols = self.grid
        h, w = self.shape
        cy = (np.arange(rows) + 0.5) * h / rows - 0.5
        cx = (np.arange(cols) + 0.5) * w / cols - 0.5
        X, Y = np.meshgrid(cx, cy)
        return np.concatenate([bilinear_sample(u, X, Y).ravel(), bilinear_sample(v, X, Y).ravel()])


# -- objective ----------------------------------------------------------------

class ContrastObjective:
    """Contrast objective of a dense flow over one event slice.

    ``scale`` > 1 evaluates the IWE on a grid ``scale`` times coarser, which
    widens the basin of attraction at coarse pyramid levels.
    """

    def __init__(self, events: EventStream, shape, t0: float, t1: float, config: CmaxConfig, scale: int = 1):
        if len(events) == 0:
            raise ValueError("empty event slice")
        if not t1 > t0:
            raise ValueError("slice interval must satisfy t1 > t0")
        self.config = config
        self.shape = tuple(shape)
        self.scale = int(scale)
        h, w = self.shape
        self.pad = int(config.iwe_padding)
        self.iwe_shape = (-(-(h + 2 * self.pad) // self.scale), -(-(w + 2 * self.pad) // self.scale))
        self.xi = events.xs.astype(np.intp)
        self.yi = events.ys.astype(np.intp)
        self.pix = self.yi * w + self.xi
        self.x = self.xi.astype(np.float64)
        self.y = self.yi.astype(np.float64)
        self.weights = _weights(events, config.signed_weights)
        ts = events.ts.astype(np.float64)
        refs = config.reference_times if config.objective == "multifocal_normalized" else config.reference_times[:1]
        self.taus = [(_ref_time(r, t0, t1) - ts) / (t1 - t0) for r in refs]
        focal = config.focal_objective if config.objective == "multifocal_normalized" else config.objective
        self.f, self.df = _FOCAL[focal]
        self.normalizer = None
        if config.objective == "multifocal_normalized":
            self.normalizer = self.f(self._iwe(self.x, self.y))
            if not self.normalizer > 0:
                raise DegenerateNormalizerError("degenerate normalizer: identity-warp objective is zero")

    def _to_iwe(self, xw, yw):
        # the canvas extends ``pad`` pixels past every sensor edge
        s, p = self.scale, self.pad
        return (xw + p + 0.5) / s - 0.5, (yw + p + 0.5) / s - 0.5

    def _blur(self, img):
        # zero-padded symmetric kernel: the filter is its own adjoint
        sigma = self.config.iwe_sigma
        return gaussian_filter(img, sigma, mode="constant", truncate=3.0) if sigma > 0 else img

    def _splat(self, xs, ys):
        """IWE plus a function mapping an image gradient to per-event coordinate gradients."""
        if self.config.iwe_kernel == "gaussian":
            sp = GaussianSplat(xs, ys, self.weights, self.iwe_shape, self.config.iwe_sigma)
            return sp.image(), sp.grad

        def back(G):
            gx, gy = _splat_grad(xs, ys, self._blur(G))
            return gx * self.weights, gy * self.weights

        return self._blur(splat_iwe(xs, ys, self.weights, self.iwe_shape)), back

    def _iwe(self, xw, yw):
        return self._splat(*self._to_iwe(xw, yw))[0]

    def _contrast(self, u, v, need_grad):
        ue = u[self.yi, self.xi]
        ve = v[self.yi, self.xi]
        total = 0.0
        gu_ev = np.zeros(len(ue))
        gv_ev = np.zeros(len(ve))
        norm = self.normalizer or 1.0
        k = len(self.taus)
        for tau in self.taus:
            xw = self.x + ue * tau
            yw = self.y + ve * tau
            xs, ys = self._to_iwe(xw, yw)
            iwe, back = self._splat(xs, ys)
            total += self.f(iwe)
            if need_grad:
                gx, gy = back(self.df(iwe))
                # chain through the coarse-grid coordinate map
                gu_ev += gx * tau / self.scale
                gv_ev += gy * tau / self.scale
        value = total / (k * norm)
        if not need_grad:
            return value, None, None
        h, w = self.shape
        c = 1.0 / (k * norm)
        gu = np.bincount(self.pix, gu_ev * c, minlength=h * w).reshape(h, w)
        gv = np.bincount(self.pix, gv_ev * c, minlength=h * w).reshape(h, w)
        return value, gu, gv

    def contrast(self, u, v) -> float:
        """The sharpness term alone, without the smoothness penalty."""
        return float(self._contrast(u, v, False)[0])

    def value(self, u, v) -> float:
        val = self._contrast(u, v, False)[0]
        if self.config.smoothness_weight:
            cfg = self.config
            val -= cfg.smoothness_weight * smoothness_value_and_grad(u, v, cfg.charbonnier_alpha, cfg.charbonnier_eps)[0]
        return float(val)

    def value_and_grad(self, u, v):
        val, gu, gv = self._contrast(u, v, True)
        cfg = self.config
        if cfg.smoothness_weight:
            s, su, sv = smoothness_value_and_grad(u, v, cfg.charbonnier_alpha, cfg.charbonnier_eps)
            val -= cfg.smoothness_weight * s
            gu = gu - cfg.smoothness_weight * su
            gv = gv - cfg.smoothness_weight * sv
        return float(val), gu, gv


def contrast_objective(events: EventStream, flow: FlowField, config: CmaxConfig) -> float:
    """The configured sharpness objective of ``flow`` over the flow's interval (no smoothness term)."""
    obj = ContrastObjective(events, flow.shape, flow.t0, flow.t1, replace(config, smoothness_weight=0.0))
    return obj.value(flow.u, flow.v)


def objective_multifocal_normalized(events: EventStream, flow: FlowField, config: Optional[CmaxConfig] = None) -> float:
    """Mean over reference times of focal(IWE at flow) / focal(IWE at identity).

    Equals 1 at zero flow. Raises :class:`DegenerateNormalizerError` when the
    identity-warp objective is zero, e.g. for an empty slice.
    """
    config = replace(config or CmaxConfig(), objective="multifocal_normalized", smoothness_weight=0.0)
    if len(events) == 0:
        raise DegenerateNormalizerError("degenerate normalizer: empty event slice")
    return ContrastObjective(events, flow.shape, flow.t0, flow.t1, config).value(flow.u, flow.v)


# -- estimation ---------------------------------------------------------------

@dataclass
class LevelTrace:
    grid: Tuple[int, int]
    scale: int
    objective: List[float] = field(default_factory=list)
    iterations: int = 0


@dataclass
class CmaxResult:
    flow: FlowField
    levels: List[LevelTrace]
    objective_initial: float
    objective_final: float
    motion_detected: bool = True

    @property
    def trace(self) -> List[float]:
        return [v for lvl in self.levels for v in lvl.objective]

    def to_dict(self):
        return {
            "t0": self.flow.t0,
            "t1": self.flow.t1,
            "objective_initial": self.objective_initial,
            "objective_final": self.objective_final,
            "motion_detected": self.motion_detected,
            "levels": [
                {"grid": list(l.grid), "scale": l.scale, "iterations": l.iterations, "objective": l.objective}
                for l in self.levels
            ],
        }


def _ascend(obj: ContrastObjective, cgrid: ControlGrid, theta: np.ndarray, config: CmaxConfig, trace: LevelTrace):
    """Normalised fixed-step gradient ascent with step halving on rejection."""
    step = config.step_size
    u, v = cgrid.dense(theta)
    val, gu, gv = obj.value_and_grad(u, v)
    if not math.isfinite(val):
        raise FloatingPointError("non-finite objective")
    trace.objective.append(val)
    g = cgrid.pullback(gu, gv)
    for it in range(config.max_iters):
        gmax = np.abs(g).max()
        if gmax == 0 or step < config.min_step:
            break
        cand = theta + step * g / gmax
        cu, cv = cgrid.dense(cand)
        cval = obj.value(cu, cv)
        if not math.isfinite(cval):
            raise FloatingPointError("non-finite objective")
        trace.iterations = it + 1
        if cval > val:
            theta, val = cand, cval
            val, gu, gv = obj.value_and_grad(cu, cv)
            g = cgrid.pullback(gu, gv)
            trace.objective.append(val)
        else:
            step *= 0.5
    return theta


def _grid_search(obj: ContrastObjective, shape, config: CmaxConfig, refine: bool = True):
    """Best constant flow; returns ``(coarse gain over identity, du, dv)``.

    Candidates sit on a grid of spacing ``2 * search_step`` within
    ``translation_search``; with ``refine`` the 8 neighbours of the winner at
    ``search_step`` spacing are tried as well. The reported gain is the coarse
    one so that it is comparable with the null search.
    """
    def gain(du, dv):
        return obj.contrast(np.full(shape, du), np.full(shape, dv)) - zero

    zero = obj.contrast(np.zeros(shape), np.zeros(shape))
    h = 2 * config.search_step
    n = int(math.floor(config.translation_search / h))
    best = (0.0, 0.0, 0.0)
    for du in h * np.arange(-n, n + 1):
        for dv in h * np.arange(-n, n + 1):
            g = gain(du, dv)
            if g > best[0]:
                best = (g, du, dv)
    coarse = best[0]
    if refine:
        _, bu, bv = best
        for du in bu + config.search_step * np.arange(-1, 2):
            for dv in bv + config.search_step * np.arange(-1, 2):
                g = gain(du, dv)
                if g > best[0]:
                    best = (g, du, dv)
    return coarse, best[1], best[2]


def _null_gain(events: EventStream, shape, t0, t1, config: CmaxConfig) -> float:
    """Largest chance gain of the search once timestamps are shuffled among events.

    Shuffling keeps where events are but destroys any motion, so this is what
    the search finds in structure alone.
    """
    rng = np.random.default_rng(config.seed)
    worst = 0.0
    for _ in range(config.null_trials):
        ts = rng.permutation(events.ts)
        order = np.argsort(ts, kind="stable")
        shuffled = EventStream(events.xs[order], events.ys[order], ts[order], events.ps[order])
        null = ContrastObjective(shuffled, shape, t0, t1, config)
        worst = max(worst, _grid_search(null, shape, config, refine=False)[0])
    return worst


def _global_translation(obj: ContrastObjective, events: EventStream, shape, t0, t1, config: CmaxConfig):
    """Grid search over constant flows, then ascent on a single control point.

    Returns ``(u, v, trace, detected)``. Motion counts as detected only when
    the slice has at least ``min_events`` events, the best coarse gain times
    ``sqrt(N)`` reaches ``min_gain`` and the gain beats ``null_ratio`` times
    the shuffled-time null. Otherwise the flow stays zero: chance alignments
    of noise events would otherwise be reported as motion.
    """
    cgrid = ControlGrid(shape, (1, 1))
    trace = LevelTrace(cgrid.grid, 1)
    n = len(events)
    if config.translation_search > 0:
        motionless = n < config.min_events
        if not motionless:
            gain, du, dv = _grid_search(obj, shape, config)
            motionless = gain * math.sqrt(n) < config.min_gain or (
                config.null_trials and gain <= config.null_ratio * _null_gain(events, shape, t0, t1, config))
        if motionless:
            trace.objective.append(obj.value(np.zeros(shape), np.zeros(shape)))
            return np.zeros(shape), np.zeros(shape), trace, False
    else:
        du = dv = 0.0
    theta = _ascend(obj, cgrid, np.array([du, dv]), replace(config, step_size=config.search_step), trace)
    u, v = cgrid.dense(theta)
    return u, v, trace, True


def estimate_flow_cmax(events: EventStream, config: Optional[CmaxConfig] = None, shape=None,
                       t0: Optional[int] = None, t1: Optional[int] = None,
                       init: Optional[FlowField] = None) -> CmaxResult:
    """Estimate a dense forward flow over ``[t0, t1]`` by contrast maximisation.

    Without ``init`` the search starts from the best constant flow; if no
    motion is detected the zero field is returned and
    ``result.motion_detected`` is False. Control-grid levels then run coarse
    to fine: level ``l`` of ``L`` uses a grid and an IWE resolution reduced by
    ``2 ** (L - 1 - l)``. ``t0``/``t1`` default to the first event time and
    one microsecond past the last.
    """
    config = config or CmaxConfig()
    if len(events) == 0:
        raise ValueError("empty event slice")
    if shape is None:
        raise ValueError("shape is required")
    t0 = int(events.ts[0]) if t0 is None else int(t0)
    t1 = int(events.ts[-1]) + 1 if t1 is None else int(t1)
    L = int(config.pyramid_levels)
    rows, cols = config.patch_grid
    u = np.zeros(shape) if init is None else np.array(init.u, dtype=np.float64)
    v = np.zeros(shape) if init is None else np.array(init.v, dtype=np.float64)

    final_obj = ContrastObjective(events, shape, t0, t1, config)
    initial = final_obj.value(u, v)
    levels = []
    detected = True
    if init is None:
        # a constant field cannot collapse events, so start from the best global translation
        u, v, trace, detected = _global_translation(final_obj, events, shape, t0, t1, config)
        levels.append(trace)
    for lvl in range(L if detected else 0):
        s = 2 ** (L - 1 - lvl)
        cgrid = ControlGrid(shape, (max(1, rows // s), max(1, cols // s)))
        obj = final_obj if s == 1 else ContrastObjective(events, shape, t0, t1, config, scale=s)
        theta = cgrid.fit(u, v)
        trace = LevelTrace(cgrid.grid, s)
        theta = _ascend(obj, cgrid, theta, config, trace)
        cand_u, cand_v = cgrid.dense(theta)
        # keep the level only if it does not hurt the full-resolution objective
        if final_obj.value(cand_u, cand_v) >= final_obj.value(u, v):
            u, v = cand_u, cand_v
        levels.append(trace)
        log.debug("level %d grid=%s scale=%d iters=%d obj=%.6g", lvl, cgrid.grid, s, trace.iterations,
                  trace.objective[-1])
    final = final_obj.value(u, v)
    return CmaxResult(FlowField(u, v, t0, t1), levels, initial, final, detected)
