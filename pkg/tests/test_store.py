import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from PIL import Image

from conftest import random_events, random_sequence
from eventkit.core import EventStream, FlowField, FlowSequence, GraySequence, SensorProps
from eventkit.store import ChecksumError, ContainerError, CsvFormatError, import_csv, open_container, write_sequence
from eventkit.store.maps import TimeIndexMaps
from eventkit.store.writer import delta_decode, delta_encode
from eventkit.viz import export_events_csv

CODECS = ("none", "deflate", "zstd")


def assert_same_sequence(r, events, grays, flows, props):
    assert r.props == props
    assert r.read_all().equals(events)
    g = r.read_grays()
    assert np.array_equal(g.ts, grays.ts) and np.array_equal(g.frames, grays.frames)
    fl = r.read_flows()
    assert len(fl) == len(flows)
    for a, b in zip(fl, flows):
        assert (a.t0, a.t1) == (b.t0, b.t1)
        assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)


@pytest.mark.parametrize("codec", CODECS)
def test_round_trip_is_bit_identical(tmp_path, codec):
    rng = np.random.default_rng(7)
    events, grays, flows, props = random_sequence(rng, 5000)
    c = write_sequence(events, grays, flows, props, tmp_path / "c", codec=codec, chunk_size=333,
                       meta={"note": "x"}, extra={"rig": {"id": 3}})
    assert c.num_chunks == math.ceil(5000 / 333)
    with open_container(tmp_path / "c") as r:
        assert_same_sequence(r, events, grays, flows, props)
        assert r.codec == codec and r.chunk_size == 333
        assert r.meta == {"note": "x"} and r.extra == {"rig": {"id": 3}}


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(n=st.integers(0, 300), chunk=st.integers(1, 64), codec=st.sampled_from(CODECS), seed=st.integers(0, 2**31))
def test_round_trip_property(tmp_path_factory, n, chunk, codec, seed):
    rng = np.random.default_rng(seed)
    events, grays, flows, props = random_sequence(rng, n)
    path = tmp_path_factory.mktemp("rt")
    write_sequence(events, grays, flows, props, path, codec=codec, chunk_size=chunk)
    with open_container(path) as r:
        assert_same_sequence(r, events, grays, flows, props)


@given(st.lists(st.integers(0, 2**40), max_size=50))
def test_delta_coding_inverts(values):
    ts = np.sort(np.array(values, dtype=np.int64))
    assert np.array_equal(delta_decode(delta_encode(ts)), ts)


def test_write_rejects_invalid_inputs(tmp_path):
    props = SensorProps(8, 8)
    bad = EventStream([9], [0], [0], [True])
    with pytest.raises(ValueError):
        write_sequence(bad, None, None, props, tmp_path / "a")
    assert not (tmp_path / "a").exists()
    unsorted = EventStream([0, 0], [0, 0], [5, 4], [True, True])
    with pytest.raises(ValueError):
        write_sequence(unsorted, None, None, props, tmp_path / "b")
    ok = EventStream([0], [0], [0], [True])
    with pytest.raises(ContainerError):
        write_sequence(ok, None, None, props, tmp_path / "c", codec="lz4")
    with pytest.raises(ValueError):
        write_sequence(ok, GraySequence(np.zeros((1, 4, 4), np.uint8), [0]), None, props, tmp_path / "d")


def _write_small(tmp_path, codec="none"):
    rng = np.random.default_rng(3)
    events, grays, flows, props = random_sequence(rng, 400)
    write_sequence(events, grays, flows, props, tmp_path / "c", codec=codec, chunk_size=50)
    return tmp_path / "c", events


@pytest.mark.parametrize("codec", CODECS)
def test_corrupted_chunk_raises_checksum_error(tmp_path, codec):
    path, _ = _write_small(tmp_path, codec)
    raw = bytearray((path / "events.bin").read_bytes())
    raw[-3] ^= 0xFF  # inside the last chunk's payload
    (path / "events.bin").write_bytes(bytes(raw))
    with open_container(path) as r:
        r.read_events(0, 50)  # untouched chunks still read
        with pytest.raises(ChecksumError):
            r.read_all()


def test_corrupted_header_and_missing_files(tmp_path):
    path, _ = _write_small(tmp_path)
    raw = bytearray((path / "events.bin").read_bytes())
    raw[6] ^= 0x01
    (path / "events.bin").write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        open_container(path)
    with pytest.raises(ContainerError, match="missing header"):
        open_container(tmp_path / "nothing")
    path2, _ = _write_small(tmp_path / "second")
    (path2 / "maps.bin").write_bytes(b"EVK")
    with pytest.raises(ContainerError):
        open_container(path2)


def test_empty_container(tmp_path):
    props = SensorProps(8, 6)
    write_sequence(EventStream.empty(), None, None, props, tmp_path / "e")
    with open_container(tmp_path / "e") as r:
        assert r.num_events == 0 and r.duration_ms == 0
        assert len(r.read_all()) == 0
        assert list(r.iterate(millis=5)) == []
        assert r.synchronized_flow(0, 10) is None


# -- index maps and slicing oracles --------------------------------------------

def brute_maps(ts, gray_ts, flow_t0s):
    dur = int(ts[-1]) // 1000 + 1 if len(ts) else 0
    first_ge = lambda arr, t: next((i for i, a in enumerate(arr) if a >= t), len(arr))  # noqa: E731
    last_le = lambda arr, t: max((i for i, a in enumerate(arr) if a <= t), default=-1)  # noqa: E731
    return {
        "time_to_event": [first_ge(ts, m * 1000) for m in range(dur + 1)],
        "time_to_gray": [first_ge(gray_ts, m * 1000) for m in range(dur + 1)],
        "time_to_flow": [first_ge(flow_t0s, m * 1000) for m in range(dur + 1)],
        "event_to_gray": [last_le(gray_ts, t) for t in ts],
        "event_to_flow": [last_le(flow_t0s, t) for t in ts],
    }


@pytest.mark.parametrize("seed", range(5))
def test_maps_match_linear_scan(tmp_path, seed):
    rng = np.random.default_rng(seed)
    events, grays, flows, props = random_sequence(rng, 300, t_max=20_000)
    write_sequence(events, grays, flows, props, tmp_path / "c", chunk_size=32)
    with open_container(tmp_path / "c") as r:
        got = r.maps.as_dict()
    want = brute_maps(events.ts.tolist(), grays.ts.tolist(), flows.t0s.tolist())
    for name in TimeIndexMaps.NAMES:
        assert got[name].tolist() == want[name], name


def scan(events, keep):
    idx = np.flatnonzero(keep)
    return events[idx[0]:idx[-1] + 1] if idx.size else EventStream.empty()


def test_slices_match_linear_scan_and_touch_few_chunks(tmp_path):
    rng = np.random.default_rng(11)
    events, grays, flows, props = random_sequence(rng, 3000, t_max=80_000)
    cs = 97
    write_sequence(events, grays, flows, props, tmp_path / "c", chunk_size=cs)
    ts = events.ts
    with open_container(tmp_path / "c") as r:
        for _ in range(150):
            a, b = sorted(rng.choice(r.duration_ms + 1, 2, replace=False))
            r.stats.reset()
            sl = r.slice_by_time(a, b, with_flow=False)
            want = scan(events, (ts >= a * 1000) & (ts < b * 1000))
            assert sl.events.equals(want)
            assert r.stats.chunks_decoded <= math.ceil(len(want) / cs) + 1
            assert r.stats.ts_blocks_decoded == 0

            a_us, b_us = sorted(rng.integers(0, 81_000, 2))
            if a_us == b_us:
                continue
            r.stats.reset()
            sl = r.slice_by_time_us(a_us, b_us, with_flow=False)
            want = scan(events, (ts >= a_us) & (ts < b_us))
            assert sl.events.equals(want)
            assert r.stats.chunks_decoded <= math.ceil(len(want) / cs) + 1

            i0, i1 = sorted(rng.choice(len(events) + 1, 2, replace=False))
            sl = r.slice_by_event_index(i0, i1, with_flow=False)
            assert sl.events.equals(events[i0:i1])
            assert (sl.t0_us, sl.t1_us) == (ts[i0], ts[i1 - 1])


def test_gray_index_slices_and_bracketing_frames(tmp_path):
    rng = np.random.default_rng(5)
    events = random_events(rng, 2000, 32, 24, 100_000)
    props = SensorProps(32, 24)
    gts = np.array([0, 20_000, 33_333, 60_000, 99_000])
    grays = GraySequence(rng.integers(0, 256, (5, 24, 32)).astype(np.uint8), gts)
    write_sequence(events, grays, None, props, tmp_path / "c", chunk_size=64)
    with open_container(tmp_path / "c") as r:
        for g0 in range(4):
            for g1 in range(g0 + 1, 5):
                sl = r.slice_by_gray_index(g0, g1)
                want = scan(events, (events.ts >= gts[g0]) & (events.ts < gts[g1]))
                assert sl.events.equals(want)
                assert sl.gray_start.index == g0 and sl.gray_end.index == g1
                assert np.array_equal(sl.gray_end.image, grays.frames[g1])
                assert sl.flow is None
        sl = r.slice_by_time(21, 33)
        assert sl.gray_start.index == 1 and sl.gray_end.index == 2
        sl = r.slice_by_time(20, 60)
        assert sl.gray_start.index == 1 and sl.gray_end.index == 3
        with pytest.raises(IndexError):
            r.slice_by_gray_index(3, 3)
        with pytest.raises(ValueError):
            r.slice_by_time(5, 5)


def test_iterate_partitions_the_stream(tmp_path):
    rng = np.random.default_rng(9)
    events, grays, flows, props = random_sequence(rng, 1000, t_max=30_000)
    write_sequence(events, grays, flows, props, tmp_path / "c", chunk_size=100)
    with open_container(tmp_path / "c") as r:
        for kw in ({"events": 37}, {"millis": 4}):
            parts = list(r.iterate(**kw, with_flow=False))
            assert len(parts) == r.count_slices(**kw)
            assert EventStream.concatenate([p.events for p in parts]).equals(events)
        with pytest.raises(ValueError):
            list(r.iterate(events=3, millis=3))


def test_synchronized_flow_scales_and_composes(tmp_path):
    props = SensorProps(16, 12)
    f1 = FlowField.constant(props.shape, 2.0, 0.0, 0, 10_000)
    f2 = FlowField.constant(props.shape, 0.0, 4.0, 10_000, 30_000)
    ev = EventStream([0], [0], [100], [True])
    write_sequence(ev, None, FlowSequence((f1, f2)), props, tmp_path / "c")
    with open_container(tmp_path / "c") as r:
        half = r.synchronized_flow(0, 5_000)
        assert np.allclose(half.u, 1.0) and np.allclose(half.v, 0.0)
        both = r.synchronized_flow(5_000, 20_000)
        assert np.allclose(both.u, 1.0) and np.allclose(both.v, 2.0)
        assert r.synchronized_flow(0, 40_000) is None


# -- CSV import -------------------------------------------------------------------

def test_csv_import_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    events = random_events(rng, 500, 20, 10, 40_000)
    props = SensorProps(20, 10)
    export_events_csv(events, tmp_path / "ev.csv")
    gdir = tmp_path / "grays"
    gdir.mkdir()
    frames = rng.integers(0, 256, (2, 10, 20)).astype(np.uint8)
    for t, fr in zip((0, 40_000), frames):
        Image.fromarray(fr).save(gdir / f"{t}.png")
    u = rng.normal(size=(1, 10, 20))
    np.savez(tmp_path / "flow.npz", u=u, v=-u, t0=np.array([0]), t1=np.array([40_000]))
    (tmp_path / "props.json").write_text(json.dumps({**props.to_dict(), "meta": {"src": "csv"}, "lens": "f4"}))
    c = import_csv(tmp_path / "ev.csv", gdir, tmp_path / "flow.npz", tmp_path / "props.json", tmp_path / "c",
                   codec="deflate", chunk_size=64)
    assert c.num_events == 500
    with open_container(tmp_path / "c") as r:
        assert r.read_all().equals(events)
        assert np.array_equal(r.read_grays().frames, frames)
        assert np.array_equal(r.flow_field(0).u, u[0])
        assert r.meta == {"src": "csv"} and r.extra == {"lens": "f4"}


@pytest.mark.parametrize("body,line", [
    ("t_us,x,y,p\n1,2,3,1\n0,2,3,1\n", 3),
    ("1,2,3,1\n2,2,3\n", 2),
    ("1,2,3,5\n", 1),
    ("1,a,3,1\n", 1),
    ("t,x,y,pol\n", 1),
])
def test_csv_errors_name_the_line(tmp_path, body, line):
    (tmp_path / "ev.csv").write_text(body)
    (tmp_path / "props.json").write_text(json.dumps(SensorProps(8, 8).to_dict()))
    with pytest.raises(CsvFormatError) as err:
        import_csv(tmp_path / "ev.csv", None, None, tmp_path / "props.json", tmp_path / "c")
    assert err.value.line == line
    assert not (tmp_path / "c").exists()


def test_backward_flow_is_inverted_on_import(tmp_path):
    (tmp_path / "ev.csv").write_text("0,1,1,1\n")
    (tmp_path / "props.json").write_text(json.dumps(SensorProps(24, 20).to_dict()))
    u = np.full((1, 20, 24), 1.5)
    np.savez(tmp_path / "flow.npz", u=u, v=0 * u, t0=[0], t1=[1000], convention="backward")
    import_csv(tmp_path / "ev.csv", None, tmp_path / "flow.npz", tmp_path / "props.json", tmp_path / "c")
    with open_container(tmp_path / "c") as r:
        assert np.allclose(r.flow_field(0).u, -1.5)
