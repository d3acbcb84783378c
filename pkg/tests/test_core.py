import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventkit.core import (
    EncodedFrame,
    EventStream,
    FlowField,
    FlowSequence,
    GraySequence,
    SensorProps,
    validate_stream,
)


def test_sensor_defaults_and_validation():
    p = SensorProps()
    assert (p.width, p.height) == (346, 260)
    assert (p.threshold_pos, p.threshold_neg) == (0.5, 0.4)
    assert p.shape == (260, 346)
    assert SensorProps.from_dict(p.to_dict()) == p
    for bad in ({"width": 0}, {"height": 70000}, {"threshold_pos": 0}, {"gray_rate_hz": -1.0}):
        with pytest.raises(ValueError):
            SensorProps(**bad)


def test_event_stream_normalises_dtypes_and_freezes():
    ev = EventStream([1, 2], [3, 4], [10, 20], [1, -1])
    assert ev.xs.dtype == np.uint16 and ev.ts.dtype == np.int64 and ev.ps.dtype == np.bool_
    assert list(ev.ps) == [True, False]
    assert list(ev.signed_polarity) == [1, -1]
    with pytest.raises(ValueError):
        ev.xs[0] = 5
    src = np.array([5, 6])
    ev2 = EventStream(src, src, src, [True, True])
    src[0] = 99
    assert ev2.xs[0] == 5


@pytest.mark.parametrize("kwargs", [
    dict(xs=[70000], ys=[0], ts=[0], ps=[True]),
    dict(xs=[-1], ys=[0], ts=[0], ps=[True]),
    dict(xs=[0.5], ys=[0], ts=[0], ps=[True]),
    dict(xs=[0], ys=[0], ts=[0], ps=[2]),
])
def test_event_stream_rejects_unrepresentable_values(kwargs):
    with pytest.raises(ValueError):
        EventStream(**kwargs)


def test_validate_stream_reports_first_offender_per_rule():
    props = SensorProps(10, 8)
    ev = EventStream([0, 12, 1, 3], [0, 0, 9, 2], [5, 4, 6, -1], [True] * 4)
    rep = validate_stream(ev, props)
    assert not rep.ok
    got = {v.rule: v.index for v in rep.violations}
    assert got == {"ts >= 0": 3, "non-decreasing ts": 1, "xs < width": 1, "ys < height": 2}
    assert "index" in str(rep)
    assert validate_stream(EventStream.empty(), props).ok


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 7), st.integers(0, 10**9), st.booleans()), max_size=40))
def test_validate_stream_accepts_every_valid_stream(rows):
    rows = sorted(rows, key=lambda r: r[2])
    cols = list(zip(*rows)) if rows else [[], [], [], []]
    ev = EventStream(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                     np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=bool))
    assert validate_stream(ev, SensorProps(10, 8)).ok


def test_concatenate_and_slicing():
    a = EventStream([1], [1], [5], [True])
    b = EventStream([2, 3], [2, 3], [6, 7], [False, True])
    c = EventStream.concatenate([a, b])
    assert len(c) == 3 and c.duration_us == 2
    assert c[1:].equals(b)
    assert EventStream.concatenate([]).equals(EventStream.empty())


def test_gray_sequence_requires_increasing_timestamps():
    frames = np.zeros((2, 3, 4), np.uint8)
    GraySequence(frames, [0, 1])
    with pytest.raises(ValueError):
        GraySequence(frames, [1, 1])
    with pytest.raises(ValueError):
        GraySequence(frames, [0])
    with pytest.raises(ValueError):
        GraySequence(np.full((1, 2, 2), 300), [0])


def test_flow_types():
    f = FlowField.constant((3, 4), 1.5, -2.0, 0, 10)
    assert f.shape == (3, 4) and f.duration_us == 10
    with pytest.raises(ValueError):
        FlowField.zeros((3, 4), 10, 10)
    with pytest.raises(ValueError):
        FlowField(np.zeros((3, 4)), np.zeros((4, 3)), 0, 1)
    seq = FlowSequence((FlowField.zeros((3, 4), 0, 10), FlowField.zeros((3, 4), 10, 25)))
    assert list(seq.t0s) == [0, 10] and list(seq.t1s) == [10, 25]
    with pytest.raises(ValueError):
        FlowSequence((FlowField.zeros((3, 4), 0, 10), FlowField.zeros((3, 4), 11, 25)))
    assert len(FlowSequence()) == 0


def test_encoded_frame_signed_and_nonnegative():
    fr = EncodedFrame(np.array([[2.0, 0.0]]), np.array([[1.0, 3.0]]), 0, 1)
    assert fr.signed.tolist() == [[1.0, -3.0]]
    with pytest.raises(ValueError):
        EncodedFrame(np.array([[-1.0]]), np.array([[0.0]]), 0, 1)
