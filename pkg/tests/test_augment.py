import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_events, random_flows, random_grays
from eventkit import augment as aug
from eventkit.core import EventStream, FlowField, FlowSequence, SensorProps, validate_stream

PROPS = SensorProps(20, 14)


def seq(seed, n=300):
    rng = np.random.default_rng(seed)
    ev = random_events(rng, n, PROPS.width, PROPS.height, 30_000, t_start=1_000)
    return ev, random_grays(rng, PROPS, 30_000, 3), random_flows(rng, PROPS, 30_000, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([aug.HORIZONTAL, aug.VERTICAL]))
def test_double_spatial_flip_is_identity(seed, axis):
    ev, gr, fl = seq(seed)
    once = aug.spatial_flip(ev, gr, fl, axis, PROPS)
    assert validate_stream(once[0], PROPS).ok
    e2, g2, f2 = aug.spatial_flip(*once, axis, PROPS)
    assert e2.equals(ev)
    assert np.array_equal(g2.frames, gr.frames)
    for a, b in zip(f2, fl):
        assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


def test_flip_moves_flow_with_the_pixels():
    u = np.zeros(PROPS.shape)
    u[3, 2] = 1.0
    f = FlowSequence((FlowField(u, np.zeros(PROPS.shape), 0, 10),))
    ev = EventStream([2], [3], [0], [True])
    e, _, out = aug.spatial_flip(ev, None, f, aug.HORIZONTAL, PROPS)
    x = PROPS.width - 1 - 2
    assert e.xs[0] == x and out[0].u[3, x] == -1.0
    e, _, out = aug.spatial_flip(ev, None, f, aug.VERTICAL, PROPS)
    assert e.ys[0] == PROPS.height - 1 - 3 and out[0].u[PROPS.height - 1 - 3, 2] == 1.0
    with pytest.raises(ValueError):
        aug.spatial_flip(ev, None, None, "diagonal", PROPS)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_polarity_flip_and_temporal_reverse_are_involutions(seed):
    ev, _, _ = seq(seed)
    assert aug.flip_polarity(aug.flip_polarity(ev)).equals(ev)
    rev = aug.temporal_reverse(ev)
    assert validate_stream(rev, PROPS).ok
    assert (rev.ts[0], rev.ts[-1]) == (ev.ts[0], ev.ts[-1])
    assert aug.temporal_reverse(rev).equals(ev)


def test_temporal_reverse_flips_polarity_and_order():
    ev = EventStream([1, 2, 3], [0, 0, 0], [10, 15, 40], [True, True, False])
    rev = aug.temporal_reverse(ev)
    assert rev.xs.tolist() == [3, 2, 1]
    assert rev.ts.tolist() == [10, 35, 40]
    assert rev.ps.tolist() == [True, False, False]
    assert len(aug.temporal_reverse(EventStream.empty())) == 0


@pytest.mark.parametrize("factor", [0.25, 0.5, 0.8, 1.3, 2.0, 3.7])
def test_time_warp_round_trip_within_one_microsecond(factor):
    ev, _, _ = seq(1, 2000)
    # stretch first: compressing first merges timestamps that no inverse can separate
    f = max(factor, 1 / factor)
    back = aug.time_warp(aug.time_warp(ev, f), 1 / f)
    assert np.abs(back.ts - ev.ts).max() <= 1
    assert back.ts[0] == ev.ts[0]
    assert np.array_equal(back.xs, ev.xs) and np.array_equal(back.ps, ev.ps)


def test_time_warp_formula_and_validation():
    ev = EventStream([0, 0, 0], [0, 0, 0], [100, 101, 110], [True] * 3)
    assert aug.time_warp(ev, 2.5).ts.tolist() == [100, 102, 125]
    with pytest.raises(ValueError):
        aug.time_warp(ev, 0.0)


def test_noise_rate_matches_expectation_over_seeds():
    base = EventStream([0, 0], [0, 0], [0, 50_000], [True, False])
    rate = 20.0
    expected = rate * PROPS.width * PROPS.height * 0.05
    counts = [len(aug.inject_noise(base, rate, PROPS, seed)) - 2 for seed in range(100)]
    assert abs(np.mean(counts) - expected) <= 0.05 * expected
    out = aug.inject_noise(base, rate, PROPS, 3)
    assert validate_stream(out, PROPS).ok
    assert out.equals(aug.inject_noise(base, rate, PROPS, 3))
    assert aug.inject_noise(base, 0.0, PROPS, 3).equals(base)
    with pytest.raises(ValueError):
        aug.inject_noise(base, -1.0, PROPS)


def test_crop_rebases_everything():
    ev, gr, fl = seq(4, 1000)
    e, g, f, props = aug.random_crop(ev, gr, fl, PROPS, crop=(3, 2, 10, 8))
    assert (props.width, props.height) == (10, 8)
    keep = (ev.xs >= 3) & (ev.xs < 13) & (ev.ys >= 2) & (ev.ys < 10)
    assert len(e) == int(keep.sum())
    assert np.array_equal(e.xs, ev.xs[keep] - 3) and np.array_equal(e.ts, ev.ts[keep])
    assert np.array_equal(g.frames, gr.frames[:, 2:10, 3:13])
    assert np.array_equal(f[0].u, fl[0].u[2:10, 3:13])
    assert validate_stream(e, props).ok


def test_random_crop_is_seeded_and_bounded():
    ev, gr, fl = seq(5)
    a = aug.random_crop(ev, gr, fl, PROPS, size=(8, 8), seed=9)
    b = aug.random_crop(ev, gr, fl, PROPS, size=(8, 8), seed=9)
    assert a[0].equals(b[0]) and a[3].shape == (8, 8)
    with pytest.raises(ValueError, match="larger than frame"):
        aug.random_crop(ev, gr, fl, PROPS, size=(21, 4))
    with pytest.raises(ValueError):
        aug.random_crop(ev, gr, fl, PROPS)
