"""Plain-text importer producing a container.

Formats
-------
events CSV
    columns ``t_us, x, y, p`` (optional header row naming them in any order);
    polarity in ``{0, 1}`` or ``{-1, 1}``; timestamps non-decreasing.
gray directory
    one 8-bit PNG per frame, named ``<t_us>.png``.
flow file
    ``.npz`` with ``u``, ``v`` (K x H x W), ``t0``, ``t1`` (K,) and an optional
    string ``convention`` of ``"forward"`` (default) or ``"backward"``; backward
    fields are inverted here, once.
props JSON
    the ``props.json`` schema (sensor keys plus optional ``meta``).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..core import EventStream, FlowField, FlowSequence, GraySequence, SensorProps
from .. import flow as flowlib
from .writer import write_sequence

COLUMNS = ("t_us", "x", "y", "p")


class CsvFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def read_events_csv(path) -> EventStream:
    order = list(range(4))
    rows = []
    lines = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            rec = [c.strip() for c in rec]
            if not rows and lineno == 1 and not _numeric(rec[0]):
                names = [c.lower() for c in rec]
                if sorted(names) != sorted(COLUMNS):
                    raise CsvFormatError(lineno, f"header must name columns {COLUMNS}, got {rec}")
                order = [names.index(c) for c in COLUMNS]
                continue
            if len(rec) != 4:
                raise CsvFormatError(lineno, f"expected 4 columns, got {len(rec)}")
            try:
                t, x, y, p = (int(float(rec[i])) if "." in rec[i] or "e" in rec[i].lower() else int(rec[i]) for i in order)
            except ValueError:
                raise CsvFormatError(lineno, f"non-numeric value in {rec}") from None
            if p not in (-1, 0, 1):
                raise CsvFormatError(lineno, f"polarity must be 0/1 or -1/1, got {p}")
            if x < 0 or y < 0 or t < 0:
                raise CsvFormatError(lineno, "negative coordinate or timestamp")
            if rows and t < rows[-1][0]:
                raise CsvFormatError(lineno, f"timestamps not sorted ({t} < {rows[-1][0]})")
            rows.append((t, x, y, p))
            lines.append(lineno)
    if not rows:
        return EventStream.empty()
    arr = np.array(rows, dtype=np.int64)
    for col, name, lim in ((1, "x", 65535), (2, "y", 65535)):
        bad = np.flatnonzero(arr[:, col] > lim)
        if bad.size:
            raise CsvFormatError(lines[bad[0]], f"{name} exceeds 16-bit range")
    return EventStream(arr[:, 1], arr[:, 2], arr[:, 0], arr[:, 3] > 0)


def _numeric(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_gray_dir(path) -> GraySequence:
    from PIL import Image

    files = sorted(Path(path).glob("*.png"), key=lambda p: int(p.stem))
    if not files:
        return GraySequence.empty()
    frames = [np.asarray(Image.open(f).convert("L")) for f in files]
    return GraySequence(np.stack(frames), [int(f.stem) for f in files])


def read_flow_npz(path) -> FlowSequence:
    with np.load(path, allow_pickle=False) as data:
        u, v = data["u"], data["v"]
        t0, t1 = data["t0"], data["t1"]
        convention = str(data["convention"]) if "convention" in data else "forward"
    if convention not in ("forward", "backward"):
        raise ValueError(f"unknown flow convention {convention!r}")
    fields = [FlowField(u[k], v[k], int(t0[k]), int(t1[k])) for k in range(len(t0))]
    if convention == "backward":
        fields = [flowlib.invert_flow(f) for f in fields]
    return FlowSequence(tuple(fields))


def read_props_json(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    props = SensorProps.from_dict(doc)
    known = set(props.to_dict()) | {"meta"}
    return props, doc.get("meta", {}), {k: v for k, v in doc.items() if k not in known}


def import_csv(events_csv, grays_dir, flows_file, props_json, path, codec="none", chunk_size=None):
    """Parse the plain-text inputs and write them with :func:`write_sequence`."""
    props, meta, extra = read_props_json(props_json)
    events = read_events_csv(events_csv)
    grays = read_gray_dir(grays_dir) if grays_dir else None
    flows = read_flow_npz(flows_file) if flows_file else None
    kwargs = {} if chunk_size is None else {"chunk_size": chunk_size}
    return write_sequence(events, grays, flows, props, path, codec=codec, meta=meta, extra=extra, **kwargs)
