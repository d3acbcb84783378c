import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_events
from eventkit.core import EventStream
from eventkit.encode import EncoderConfig, bin_edges, encode_count, encode_gaussian, splat_iwe

SHAPE = (12, 16)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(0, 400), bins=st.integers(1, 9))
def test_count_encoding_conserves_events(seed, n, bins):
    rng = np.random.default_rng(seed)
    ev = random_events(rng, n, 16, 12, 10_000)
    frames = encode_count(ev, 0, 10_000, bins, SHAPE)
    assert len(frames) == bins
    assert sum(f.pos.sum() for f in frames) == int(ev.ps.sum())
    assert sum(f.neg.sum() for f in frames) == int((~ev.ps).sum())
    signed = sum(f.signed for f in frames)
    want = np.zeros(SHAPE)
    np.add.at(want, (ev.ys.astype(int), ev.xs.astype(int)), ev.signed_polarity)
    assert np.array_equal(signed, want)


def test_count_bins_follow_edges():
    ev = EventStream([0, 1, 2, 3], [0, 0, 0, 0], [0, 249, 250, 999], [True] * 4)
    frames = encode_count(ev, 0, 1000, 4, SHAPE)
    assert [f.pos.sum() for f in frames] == [2, 1, 0, 1]
    assert [(f.t0, f.t1) for f in frames] == [(0, 250), (250, 500), (500, 750), (750, 1000)]
    assert np.allclose(bin_edges(0, 1000, 4), [0, 250, 500, 750, 1000])


def test_events_outside_interval_rejected():
    ev = EventStream([0], [0], [1000], [True])
    with pytest.raises(ValueError):
        encode_count(ev, 0, 1000, 1, SHAPE)
    with pytest.raises(ValueError):
        encode_count(ev, 10, 10, 1, SHAPE)


@pytest.mark.parametrize("lam", [1.0, 0.25, 7.5])
def test_gaussian_at_bin_centre_is_lambda(lam):
    ev = EventStream([3, 4], [2, 2], [125, 375], [True, False])
    frames = encode_gaussian(ev, 0, 500, EncoderConfig(2, 40.0, lam), SHAPE)
    assert abs(frames[0].pos[2, 3] - lam) <= 1e-12
    assert abs(frames[1].neg[2, 4] - lam) <= 1e-12


def test_gaussian_large_sigma_matches_counts():
    rng = np.random.default_rng(4)
    ev = random_events(rng, 500, 16, 12, 10_000)
    lam = 2.0
    g = encode_gaussian(ev, 0, 10_000, EncoderConfig(3, 1e9, lam), SHAPE)
    c = encode_count(ev, 0, 10_000, 3, SHAPE)
    for a, b in zip(g, c):
        assert np.abs(a.pos - lam * b.pos).max() <= 1e-3 * lam
        assert np.abs(a.neg - lam * b.neg).max() <= 1e-3 * lam


def test_gaussian_weights_decay_from_centre():
    ev = EventStream([0, 1], [0, 0], [500, 900], [True, True])
    (fr,) = encode_gaussian(ev, 0, 1000, EncoderConfig(1, 200.0, 1.0), SHAPE)
    assert fr.pos[0, 0] == 1.0
    assert np.isclose(fr.pos[0, 1], np.exp(-(400 ** 2) / (2 * 200.0 ** 2)))


def test_encoder_config_validation():
    for bad in ({"num_bins": 0}, {"sigma": 0.0}, {"lam": -1.0}):
        with pytest.raises(ValueError):
            EncoderConfig(**bad)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 14.99), st.floats(0, 10.99), st.floats(0.1, 3)), min_size=1, max_size=20))
def test_splat_conserves_weight_inside_and_preserves_centroid(pts):
    xs, ys, ws = (np.array(c) for c in zip(*pts))
    img = splat_iwe(xs, ys, ws, SHAPE)
    assert np.isclose(img.sum(), ws.sum())
    gy, gx = np.mgrid[0:SHAPE[0], 0:SHAPE[1]]
    assert np.isclose((img * gx).sum(), (ws * xs).sum())
    assert np.isclose((img * gy).sum(), (ws * ys).sum())


def test_splat_drops_outside_corners():
    assert splat_iwe([-5.0], [-5.0], [1.0], SHAPE).sum() == 0
    edge = splat_iwe([15.5], [0.0], [1.0], SHAPE)
    assert np.isclose(edge.sum(), 0.5)
