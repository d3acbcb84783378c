import sys

import numpy as np
import pytest

from eventkit.core import EventStream, FlowField, FlowSequence, GraySequence, SensorProps


def random_events(rng, n, width=64, height=48, t_max=200_000, t_start=0):
    """Sorted random events; timestamps drawn with deliberate duplicates."""
    ts = np.sort(rng.integers(t_start, t_max, n))
    if n > 4:
        dup = rng.integers(1, n, n // 4)
        ts[dup] = ts[dup - 1]
        ts = np.sort(ts)
    return EventStream(rng.integers(0, width, n), rng.integers(0, height, n), ts, rng.random(n) < 0.5)


def random_grays(rng, props, t_max, n=None):
    n = int(rng.integers(0, 6)) if n is None else n
    ts = np.sort(rng.choice(np.arange(0, t_max + 1), size=n, replace=False)) if n else np.zeros(0, np.int64)
    frames = rng.integers(0, 256, (n,) + props.shape).astype(np.uint8)
    return GraySequence(frames, ts)


def random_flows(rng, props, t_max, n=None):
    n = int(rng.integers(0, 5)) if n is None else n
    if not n:
        return FlowSequence()
    edges = np.sort(rng.choice(np.arange(0, t_max + 1), size=n + 1, replace=False))
    return FlowSequence(tuple(
        FlowField(rng.normal(0, 2, props.shape), rng.normal(0, 2, props.shape), int(a), int(b))
        for a, b in zip(edges[:-1], edges[1:])
    ))


def random_sequence(rng, n, width=32, height=24, t_max=50_000):
    props = SensorProps(width, height)
    return random_events(rng, n, width, height, t_max), random_grays(rng, props, t_max), \
        random_flows(rng, props, t_max), props


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
