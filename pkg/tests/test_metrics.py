import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventkit.core import EventStream, FlowField
from eventkit.metrics import (
    EmptyMaskError,
    MetricsAccumulator,
    aae,
    aee,
    evaluate,
    event_mask,
    outlier_key,
    xpe,
)

SHAPE = (6, 7)


def const(u, v):
    return FlowField.constant(SHAPE, u, v, 0, 1)


def test_analytic_cases():
    assert abs(aee(const(1.0, 0.0), const(0.0, 0.0)) - 1.0) <= 1e-9
    assert abs(aee(const(3.0, 4.0), const(0.0, 0.0)) - 5.0) <= 1e-9
    assert abs(aae(const(1.0, 0.0), const(0.0, 1.0)) - math.pi / 2) <= 1e-9
    assert abs(aae(const(1.0, 0.0), const(-2.0, 0.0)) - math.pi) <= 1e-9
    assert aae(const(2.0, 2.0), const(1.0, 1.0)) <= 1e-9
    assert xpe(const(2.5, 0.0), const(0.0, 0.0), threshold=2.0) == 100.0
    assert xpe(const(2.5, 0.0), const(0.0, 0.0), threshold=3.0) == 0.0


def loop_metrics(pred, gt, mask, thresholds):
    """Pixel-by-pixel reference implementation."""
    epes, angs = [], []
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if not mask[y, x]:
                continue
            a = (pred.u[y, x], pred.v[y, x])
            b = (gt.u[y, x], gt.v[y, x])
            epes.append(math.hypot(a[0] - b[0], a[1] - b[1]))
            na, nb = math.hypot(*a), math.hypot(*b)
            if na >= 1e-6 and nb >= 1e-6:
                c = (a[0] * b[0] + a[1] * b[1]) / (na * nb)
                angs.append(math.acos(max(-1.0, min(1.0, c))))
    out = {"aee": sum(epes) / len(epes), "aae": sum(angs) / len(angs) if angs else None}
    for t in thresholds:
        out[outlier_key(t)] = 100.0 * sum(e > t for e in epes) / len(epes)
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_vectorised_metrics_match_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    pred = FlowField(rng.normal(0, 2, SHAPE), rng.normal(0, 2, SHAPE), 0, 1)
    gt = FlowField(rng.normal(0, 2, SHAPE), rng.normal(0, 2, SHAPE), 0, 1)
    mask = rng.random(SHAPE) < 0.6
    mask[0, 0] = True
    want = loop_metrics(pred, gt, mask, (1.0, 3.0))
    assert abs(aee(pred, gt, mask) - want["aee"]) <= 1e-9
    assert abs(aae(pred, gt, mask) - want["aae"]) <= 1e-7  # acos loses precision near 0 and pi
    assert abs(xpe(pred, gt, mask, 1.0) - want["1PE"]) <= 1e-9
    assert abs(xpe(pred, gt, mask, 3.0) - want["3PE"]) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_xpe_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    pred = FlowField(rng.normal(0, 3, SHAPE), rng.normal(0, 3, SHAPE), 0, 1)
    gt = const(0.0, 0.0)
    vals = [xpe(pred, gt, None, t) for t in (0.5, 1.0, 2.0, 3.0, 5.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_split_accumulation_equals_whole(seed, parts):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(parts):
        p = FlowField(rng.normal(0, 2, SHAPE), rng.normal(0, 2, SHAPE), 0, 1)
        g = FlowField(rng.normal(0, 2, SHAPE), rng.normal(0, 2, SHAPE), 0, 1)
        m = rng.random(SHAPE) < 0.5
        m[1, 1] = True
        pairs.append((p, g, m))
    whole = evaluate(pairs, (1.0, 3.0))
    accs = [MetricsAccumulator((1.0, 3.0)).update(*pr) for pr in pairs]
    merged = accs[0]
    for a in accs[1:]:
        merged = merged.merge(a)
    rep = merged.report()
    # pixel-weighted: stacking all masked pixels into one evaluation gives the same numbers
    stack = lambda arrs: np.concatenate([a.reshape(-1) for a in arrs])[None, :]  # noqa: E731
    big_p = FlowField(stack([p.u[m] for p, _, m in pairs]), stack([p.v[m] for p, _, m in pairs]), 0, 1)
    big_g = FlowField(stack([g.u[m] for _, g, m in pairs]), stack([g.v[m] for _, g, m in pairs]), 0, 1)
    assert abs(rep["aee"] - aee(big_p, big_g)) <= 1e-9
    assert abs(rep["aae"] - aae(big_p, big_g)) <= 1e-9
    for key in ("aee", "aae", "n_pixels"):
        assert abs(rep[key] - whole[key]) <= 1e-9
    for t in ("1PE", "3PE"):
        assert abs(rep["outliers"][t] - whole["outliers"][t]) <= 1e-9
        assert abs(rep["outliers"][t] - xpe(big_p, big_g, None, float(t[0]))) <= 1e-9


def test_degenerate_vectors_are_excluded_from_angles():
    pred = FlowField(np.array([[0.0, 1.0]]), np.array([[0.0, 0.0]]), 0, 1)
    gt = FlowField(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), 0, 1)
    assert abs(aae(pred, gt) - math.pi / 2) <= 1e-12
    rep = MetricsAccumulator().update(pred, gt).report()
    assert rep["excluded_angle_pixels"] == 1 and rep["n_pixels"] == 2
    with pytest.raises(EmptyMaskError):
        aae(const(0.0, 0.0), const(1.0, 0.0))


def test_empty_mask_and_no_data():
    with pytest.raises(EmptyMaskError):
        aee(const(1, 0), const(0, 0), np.zeros(SHAPE, bool))
    assert MetricsAccumulator().report() is None
    with pytest.raises(ValueError):
        aee(const(1, 0), FlowField.zeros((2, 2), 0, 1))
    with pytest.raises(ValueError):
        xpe(const(1, 0), const(0, 0), threshold=0.0)
    with pytest.raises(ValueError):
        MetricsAccumulator((1.0,)).merge(MetricsAccumulator((2.0,)))


def test_event_mask_marks_event_pixels():
    ev = EventStream([1, 1, 4], [2, 2, 0], [0, 1, 2], [True, False, True])
    m = event_mask(ev, SHAPE)
    assert m.sum() == 2 and m[2, 1] and m[0, 4]


def test_outlier_keys():
    assert outlier_key(3) == "3PE" and outlier_key(0.5) == "0.5PE"
