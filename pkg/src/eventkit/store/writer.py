"""Container writer."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..core import EventStream, FlowSequence, GraySequence, InvariantError, SensorProps, validate_stream
from . import format as fmt
from .maps import TimeIndexMaps

log = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 1 << 16

EVENTS_FILE = "events.bin"
GRAY_FILE = "gray.bin"
FLOW_FILE = "flow.bin"
MAPS_FILE = "maps.bin"
PROPS_FILE = "props.json"

# column name, on-disk dtype
EVENT_COLUMNS = (("xs", "<u2"), ("ys", "<u2"), ("ts", "<i8"), ("ps", "|b1"))


@dataclass
class Container:
    path: Path
    props: SensorProps
    chunk_size: int
    codec: str
    num_events: int
    meta: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_chunks(self) -> int:
        return -(-self.num_events // self.chunk_size)


def delta_encode(ts: np.ndarray) -> np.ndarray:
    out = np.empty_like(ts)
    if len(ts):
        out[0] = ts[0]
        np.subtract(ts[1:], ts[:-1], out=out[1:])
    return out


def delta_decode(deltas: np.ndarray) -> np.ndarray:
    return np.cumsum(deltas, dtype=np.int64)


def props_document(props: SensorProps, meta=None, extra=None) -> Dict[str, Any]:
    doc = dict(extra or {})
    doc.update(props.to_dict())
    doc["meta"] = dict(meta or {})
    return doc


def _check_inputs(events, grays, flows, props):
    report = validate_stream(events, props)
    if not report.ok:
        raise InvariantError(report)
    if len(grays) and grays.frames.shape[1:] != props.shape:
        raise ValueError(f"gray frames have shape {grays.frames.shape[1:]}, props say {props.shape}")
    if len(flows) and flows[0].shape != props.shape:
        raise ValueError(f"flow fields have shape {flows[0].shape}, props say {props.shape}")


def write_sequence(
    events: EventStream,
    grays: Optional[GraySequence],
    flows: Optional[FlowSequence],
    props: SensorProps,
    path,
    codec: str = "none",
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    meta: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Container:
    """Write events, gray frames and flow fields into a container directory.

    Inputs are validated before anything touches the disk. The time/index maps
    are computed here so readers never have to search the full stream.
    """
    grays = grays if grays is not None else GraySequence.empty(props.shape)
    flows = flows if flows is not None else FlowSequence()
    cid = fmt.codec_id(codec)
    chunk_size = int(chunk_size)
    if not 1 <= chunk_size <= (fmt.MAX_BLOCK_BYTES // 8):
        raise ValueError("chunk_size out of range")
    _check_inputs(events, grays, flows, props)

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"container path not writable: {path}")

    n = len(events)
    header = fmt.EVENTS_HEADER.pack(b"EVKZ", fmt.FORMAT_VERSION, cid, chunk_size, n, props.width, props.height)
    blocks = []
    for start in range(0, n, chunk_size):
        chunk = events[start:start + chunk_size]
        for name, dtype in EVENT_COLUMNS:
            col = getattr(chunk, name).astype(dtype, copy=False)
            if name == "ts":
                col = delta_encode(col)
            blocks.append(fmt.encode_block(col, cid))
    fmt.write_blockfile(path / EVENTS_FILE, header, blocks)

    gheader = fmt.GRAY_HEADER.pack(b"EVKG", fmt.FORMAT_VERSION, cid, len(grays), props.height, props.width)
    gblocks = [fmt.encode_block(grays.ts.astype("<i8"), cid)]
    gblocks += [fmt.encode_block(frame, cid) for frame in grays.frames]
    fmt.write_blockfile(path / GRAY_FILE, gheader, gblocks)

    fheader = fmt.FLOW_HEADER.pack(b"EVKF", fmt.FORMAT_VERSION, cid, len(flows), props.height, props.width)
    fblocks = [fmt.encode_block(flows.t0s.astype("<i8"), cid), fmt.encode_block(flows.t1s.astype("<i8"), cid)]
    for f in flows:
        fblocks.append(fmt.encode_block(f.u.astype("<f8"), cid))
        fblocks.append(fmt.encode_block(f.v.astype("<f8"), cid))
    fmt.write_blockfile(path / FLOW_FILE, fheader, fblocks)

    maps = TimeIndexMaps.build(events.ts, grays.ts, flows.t0s)
    arrays = [getattr(maps, name).astype("<i8") for name in TimeIndexMaps.NAMES]
    lengths = np.array([len(a) for a in arrays], dtype="<i8")
    mheader = fmt.MAPS_HEADER.pack(b"EVKM", fmt.FORMAT_VERSION, cid, len(arrays))
    fmt.write_blockfile(path / MAPS_FILE, mheader, [fmt.encode_block(lengths, cid)] + [fmt.encode_block(a, cid) for a in arrays])

    with open(path / PROPS_FILE, "w", encoding="utf-8") as fh:
        json.dump(props_document(props, meta, extra), fh, indent=2, sort_keys=True)
        fh.write("\n")

    log.debug("wrote %d events (%d chunks, codec=%s) to %s", n, len(blocks) // 4, codec, path)
    return Container(path, props, chunk_size, fmt.CODEC_NAMES[cid], n, dict(meta or {}), dict(extra or {}))
