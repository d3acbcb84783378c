"""Command-line entry point.

Every subcommand is a thin adapter over the library. Machine-readable results
go to stdout as JSON; human summaries and logs go to stderr. Exit status is
0 on success, 2 on usage errors and 1 on runtime errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import augment as aug
from . import flow as flowlib
from .cmax import CmaxConfig, estimate_flow_cmax
from .core import FlowField, FlowSequence, GraySequence
from .encode import EncoderConfig, encode_count, encode_gaussian
from .metrics import DEFAULT_THRESHOLDS, MetricsAccumulator, event_mask
from .simgen import SceneSpec, make_dataset
from .store import import_csv, open_container, write_sequence
from .viz import KINDS, STRIDES, export_events_csv, export_sequence

log = logging.getLogger("eventkit")

AUGMENT_OPS = ("time_warp", "noise", "flip_polarity", "temporal_reverse", "flip_horizontal", "flip_vertical", "crop")


class UsageError(Exception):
    """Bad arguments or configuration detected after parsing (exit status 2)."""


# -- helpers ------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True, default=_json_default)
    sys.stdout.write("\n")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(doc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _ints(text: str, n: Optional[int] = None) -> List[int]:
    try:
        vals = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated integers, got {text!r}")
    return vals


def _floats(text: str) -> List[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("thresholds must be > 0")
    return vals


def _load_json(path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"{what} {path} must hold a JSON object")
    return doc


def _container_summary(c) -> dict:
    return {"path": str(c.path), "num_events": c.num_events, "codec": c.codec, "chunk_size": c.chunk_size,
            "props": c.props.to_dict()}


def _read_all(reader):
    return reader.read_all(), reader.read_grays(), reader.read_flows()


# -- subcommands --------------------------------------------------------------

def cmd_info(args) -> int:
    with open_container(args.container) as r:
        n = r.num_events
        doc = {
            "path": str(r.path),
            "props": r.props.to_dict(),
            "num_events": n,
            "num_gray": r.num_gray,
            "num_flow": r.num_flow,
            "duration_ms": r.duration_ms,
            "t_first_us": r.event_ts(0) if n else None,
            "t_last_us": r.event_ts(n - 1) if n else None,
            "codec": r.codec,
            "chunk_size": r.chunk_size,
            "meta": r.meta,
        }
    p = doc["props"]
    _say(f"{p['width']}x{p['height']}, {n} events over {doc['duration_ms']} ms, {doc['num_gray']} gray frames, "
         f"{doc['num_flow']} flow fields, thresholds +{p['threshold_pos']}/-{p['threshold_neg']}")
    _emit(doc)
    return 0


def cmd_import_csv(args) -> int:
    c = import_csv(args.events, args.grays, args.flows, args.props, args.out, codec=args.codec,
                   chunk_size=args.chunk_size)
    _say(f"imported {c.num_events} events into {c.path}")
    _emit(_container_summary(c))
    return 0


def cmd_simulate(args) -> int:
    try:
        spec = SceneSpec.from_dict(_load_json(args.spec, "scene spec"))
        overrides = {k: v for k, v in (("duration", args.duration), ("seed", args.seed)) if v is not None}
        spec = replace(spec, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scene spec: {exc}") from None
    kwargs = {} if args.chunk_size is None else {"chunk_size": args.chunk_size}
    c = make_dataset(spec, args.out, codec=args.codec, **kwargs)
    _say(f"simulated {c.num_events} events into {c.path}")
    doc = _container_summary(c)
    doc["scene"] = spec.to_dict()
    _emit(doc)
    return 0


def cmd_slice(args) -> int:
    if not 0 <= args.t0_ms < args.t1_ms:
        raise UsageError("need 0 <= --t0-ms < --t1-ms")
    with open_container(args.container) as r:
        sl = r.slice_by_time(args.t0_ms, args.t1_ms, with_flow=False)
        grays = r.read_grays()
        keep = (grays.ts >= sl.t0_us) & (grays.ts <= sl.t1_us)
        grays = GraySequence(grays.frames[keep], grays.ts[keep])
        flows = FlowSequence(tuple(f for f in r.read_flows() if f.t0 >= sl.t0_us and f.t1 <= sl.t1_us))
        meta = dict(r.meta)
        meta["slice"] = {"source": str(r.path), "t0_ms": args.t0_ms, "t1_ms": args.t1_ms}
        c = write_sequence(sl.events, grays, flows, r.props, args.out, codec=args.codec or r.codec,
                           chunk_size=r.chunk_size, meta=meta, extra=r.extra)
    _say(f"wrote {c.num_events} events, {len(grays)} gray frames, {len(flows)} flow fields to {c.path}")
    _emit(_container_summary(c))
    return 0


def cmd_encode(args) -> int:
    with open_container(args.container) as r:
        t0_ms = 0 if args.t0_ms is None else args.t0_ms
        t1_ms = r.duration_ms if args.t1_ms is None else args.t1_ms
        sl = r.slice_by_time(t0_ms, t1_ms, with_flow=False)
        shape = r.props.shape
    if args.method == "count":
        frames = encode_count(sl.events, sl.t0_us, sl.t1_us, args.bins, shape)
    else:
        try:
            cfg = EncoderConfig(args.bins, args.sigma_us, args.lam)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        frames = encode_gaussian(sl.events, sl.t0_us, sl.t1_us, cfg, shape)
    pos = np.stack([f.pos for f in frames])
    neg = np.stack([f.neg for f in frames])
    t0s = np.array([f.t0 for f in frames], dtype=np.float64)
    t1s = np.array([f.t1 for f in frames], dtype=np.float64)
    np.savez(args.out, pos=pos, neg=neg, t0=t0s, t1=t1s)
    doc = {"out": str(args.out), "method": args.method, "bins": args.bins, "t0_us": sl.t0_us, "t1_us": sl.t1_us,
           "num_events": len(sl.events), "pos_sum": float(pos.sum()), "neg_sum": float(neg.sum())}
    _say(f"encoded {len(sl.events)} events into {args.bins} {args.method} bins -> {args.out}")
    _emit(doc)
    return 0


def _map_times(grays, flows, fn, drop_note: str):
    """Apply a monotone time map to gray frames and flow fields, dropping entries mapped before 0."""
    gts = fn(grays.ts)
    keep = gts >= 0
    if (~keep).any():
        _say(f"note: {int((~keep).sum())} gray frames {drop_note}")
    order = np.argsort(gts[keep], kind="stable")
    out_grays = GraySequence(grays.frames[keep][order], gts[keep][order])
    fields = []
    for f in flows:
        a, b = sorted((int(fn(np.array([f.t0]))[0]), int(fn(np.array([f.t1]))[0])))
        if a < 0:
            continue
        fields.append((a, b, f))
    if len(fields) < len(flows):
        _say(f"note: {len(flows) - len(fields)} flow fields {drop_note}")
    return out_grays, sorted(fields, key=lambda e: e[0])


def cmd_augment(args) -> int:
    with open_container(args.container) as r:
        events, grays, flows = _read_all(r)
        props, meta, extra, codec, chunk = r.props, dict(r.meta), r.extra, r.codec, r.chunk_size
    op = args.op
    if op == "time_warp":
        if args.factor is None:
            raise UsageError("time_warp needs --factor")
        if not args.factor > 0:
            raise UsageError("--factor must be > 0")
        out = aug.time_warp(events, args.factor)
        if len(events):
            t0 = int(events.ts[0])
            fn = lambda t: t0 + np.rint(args.factor * (np.asarray(t, dtype=np.float64) - t0)).astype(np.int64)  # noqa: E731
            grays, fields = _map_times(grays, flows, fn, "fell before t=0 and were dropped")
            flows = FlowSequence(tuple(FlowField(f.u, f.v, a, b) for a, b, f in fields))
        events = out
    elif op == "noise":
        if args.rate is None:
            raise UsageError("noise needs --rate")
        if args.rate < 0:
            raise UsageError("--rate must be >= 0")
        events = aug.inject_noise(events, args.rate, props, args.seed)
    elif op == "flip_polarity":
        events = aug.flip_polarity(events)
    elif op == "temporal_reverse":
        if len(events):
            total = int(events.ts[0]) + int(events.ts[-1])
            fn = lambda t: total - np.asarray(t, dtype=np.int64)  # noqa: E731
            grays, fields = _map_times(grays, flows, fn, "fell before t=0 and were dropped")
            # played backwards, each field's motion runs the other way
            flows = FlowSequence(tuple(
                FlowField(inv.u, inv.v, a, b) for a, b, inv in ((a, b, flowlib.invert_flow(f)) for a, b, f in fields)
            ))
        events = aug.temporal_reverse(events)
    elif op in ("flip_horizontal", "flip_vertical"):
        axis = aug.HORIZONTAL if op == "flip_horizontal" else aug.VERTICAL
        events, grays, flows = aug.spatial_flip(events, grays, flows, axis, props)
    elif op == "crop":
        if (args.crop is None) == (args.size is None):
            raise UsageError("crop needs exactly one of --crop x,y,w,h or --size w,h")
        try:
            events, grays, flows, props = aug.random_crop(events, grays, flows, props, crop=args.crop,
                                                          size=args.size, seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    meta["augment"] = {"op": op, "factor": args.factor, "rate": args.rate, "seed": args.seed,
                       "crop": args.crop, "size": args.size}
    c = write_sequence(events, grays, flows, props, args.out, codec=args.codec or codec, chunk_size=chunk,
                       meta=meta, extra=extra)
    _say(f"{op}: wrote {c.num_events} events to {c.path}")
    _emit(_container_summary(c))
    return 0


def cmd_render(args) -> int:
    with open_container(args.container) as r:
        paths = export_sequence(r, args.stride, args.out, kind=args.kind, by=args.by,
                                max_magnitude=args.max_magnitude)
        if args.events_csv:
            export_events_csv(r.read_all(), args.events_csv)
    _say(f"rendered {len(paths)} {args.kind} frames to {args.out}")
    _emit({"out": str(args.out), "kind": args.kind, "frames": len(paths),
           "events_csv": str(args.events_csv) if args.events_csv else None})
    return 0


def _intervals(reader, by: str, stride: int):
    if by == "flow":
        t0s, t1s = reader.flow_t0s, reader.flow_t1s
        return [(int(t0s[k]), int(t1s[min(k + stride, len(t0s)) - 1])) for k in range(0, len(t0s), stride)]
    if by == "gray_frames":
        ts = reader.gray_ts
        return [(int(ts[g]), int(ts[min(g + stride, len(ts) - 1)])) for g in range(0, len(ts) - 1, stride)]
    end = reader.duration_ms
    return [(t * 1000, min(t + stride, end) * 1000) for t in range(0, end, stride)]


def _cmax_config(args) -> CmaxConfig:
    doc = _load_json(args.config, "cmax config") if args.config else {}
    flags = {
        "max_iters": args.max_iters,
        "pyramid_levels": args.pyramid_levels,
        "smoothness_weight": args.smoothness_weight,
        "objective": args.objective,
        "patch_grid": args.patch_grid,
        "seed": args.seed,
    }
    doc.update({k: v for k, v in flags.items() if v is not None})
    try:
        return CmaxConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid cmax config: {exc}") from None


def cmd_estimate_flow(args) -> int:
    config = _cmax_config(args)
    if args.stride < 1:
        raise UsageError("--stride must be >= 1")
    with open_container(args.container) as r:
        by = args.by or ("flow" if r.num_flow else "gray_frames")
        intervals = _intervals(r, by, args.stride)
        if not intervals:
            raise UsageError(f"container has no {by} intervals to estimate over")
        stop = len(intervals) if args.count is None else args.start + args.count
        intervals = intervals[args.start:stop]
        if not intervals:
            raise UsageError("--start/--count select no slices")
        shape = r.props.shape
        fields, slices = [], []
        for k, (t0, t1) in enumerate(intervals, start=args.start):
            events = r.slice_by_time_us(t0, t1, with_flow=False).events
            entry = {"index": k, "t0_us": t0, "t1_us": t1, "num_events": len(events)}
            tic = time.perf_counter()
            if len(events) == 0:
                fields.append(FlowField.zeros(shape, t0, t1))
                entry["skipped"] = "empty slice"
            else:
                res = estimate_flow_cmax(events, config, shape, t0, t1)
                fields.append(res.flow)
                entry.update(res.to_dict())
            _say(f"slice {k} [{t0}, {t1}) us: {len(events)} events, {time.perf_counter() - tic:.1f} s")
            slices.append(entry)
        events, grays = r.read_all(), r.read_grays()
        meta = dict(r.meta)
        meta["estimate_flow"] = {"source": str(r.path), "by": by, "stride": args.stride, "config": config.to_dict()}
        c = write_sequence(events, grays, FlowSequence(tuple(fields)), r.props, args.out,
                           codec=args.codec or r.codec, chunk_size=r.chunk_size, meta=meta, extra=r.extra)
    trace_path = Path(args.trace) if args.trace else Path(args.out) / "trace.json"
    _write_json({"config": config.to_dict(), "slices": slices}, trace_path)
    doc = _container_summary(c)
    doc.update({"num_flow": len(fields), "trace": str(trace_path)})
    _emit(doc)
    return 0


def cmd_eval(args) -> int:
    thresholds = tuple(args.thresholds) if args.thresholds else DEFAULT_THRESHOLDS
    acc = MetricsAccumulator(thresholds)
    skipped = 0
    with open_container(args.pred) as pred, open_container(args.gt) as gt:
        if pred.props.shape != gt.props.shape:
            raise UsageError(f"resolution mismatch: pred {pred.props.shape} vs gt {gt.props.shape}")
        for k in range(pred.num_flow):
            p = pred.flow_field(k)
            g = gt.synchronized_flow(p.t0, p.t1)
            if g is None:
                log.warning("no ground truth over [%d, %d] us; slice skipped", p.t0, p.t1)
                skipped += 1
                continue
            if args.mask == "all":
                mask = None
            else:
                mask = event_mask(gt.slice_by_time_us(p.t0, p.t1, with_flow=False).events, p.shape)
                if not mask.any():
                    skipped += 1
                    continue
            acc.update(p, g, mask)
    rep = acc.report()
    doc = {"report": rep, "slices": pred.num_flow - skipped, "skipped": skipped, "mask": args.mask}
    if rep is None:
        _say("no data: nothing to evaluate")
    else:
        _say(f"AEE {rep['aee']:.4f} px over {rep['n_pixels']} pixels in {doc['slices']} slices")
    _emit(doc)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eventkit", description="Event-camera data toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    s = sub.add_parser("info", help="print container properties and counts")
    s.add_argument("container")
    s.set_defaults(func=cmd_info)

    def codec_args(s, default=None):
        s.add_argument("--codec", choices=("none", "deflate", "zstd"), default=default)
        s.add_argument("--chunk-size", type=int, default=None)

    s = sub.add_parser("import-csv", help="build a container from CSV events, PNG frames and NPZ flow")
    s.add_argument("--events", required=True, help="CSV of t_us,x,y,p")
    s.add_argument("--grays", help="directory of <t_us>.png frames")
    s.add_argument("--flows", help="NPZ with u, v, t0, t1")
    s.add_argument("--props", required=True, help="sensor properties JSON")
    s.add_argument("--out", required=True)
    codec_args(s, "none")
    s.set_defaults(func=cmd_import_csv)

    s = sub.add_parser("simulate", help="render a synthetic scene into a container")
    s.add_argument("--spec", required=True, help="scene spec JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, help="override the spec duration (s)")
    s.add_argument("--seed", type=int, help="override the spec seed")
    codec_args(s, "none")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("slice", help="write the events in a time window as a new container")
    s.add_argument("container")
    s.add_argument("--t0-ms", type=int, required=True)
    s.add_argument("--t1-ms", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--codec", choices=("none", "deflate", "zstd"))
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("encode", help="encode a time window into event frames (NPZ)")
    s.add_argument("container")
    s.add_argument("--method", choices=("count", "gaussian"), default="count")
    s.add_argument("--bins", type=int, default=1)
    s.add_argument("--sigma-us", type=float, default=1000.0)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--t0-ms", type=int)
    s.add_argument("--t1-ms", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("augment", help="apply one augmentation and write a new container")
    s.add_argument("container")
    s.add_argument("--op", choices=AUGMENT_OPS, required=True)
    s.add_argument("--factor", type=float, help="time_warp factor")
    s.add_argument("--rate", type=float, help="noise rate, events per pixel per second")
    s.add_argument("--crop", type=lambda t: _ints(t, 4), help="x,y,w,h")
    s.add_argument("--size", type=lambda t: _ints(t, 2), help="w,h (random origin)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--codec", choices=("none", "deflate", "zstd"))
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("render", help="export numbered PNGs per slice")
    s.add_argument("container")
    s.add_argument("--kind", choices=KINDS, default="overlay")
    s.add_argument("--by", choices=STRIDES, default="millis")
    s.add_argument("--stride", type=int, default=40)
    s.add_argument("--max-magnitude", type=float, help="flow magnitude at full saturation (default: per frame)")
    s.add_argument("--events-csv", help="also write all events as CSV here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("estimate-flow", help="contrast-maximisation flow per slice")
    s.add_argument("container")
    s.add_argument("--config", help="cmax config JSON; flags below override it")
    s.add_argument("--out", required=True, help="output container with the estimated flow")
    s.add_argument("--trace", help="trace JSON path (default <out>/trace.json)")
    s.add_argument("--by", choices=("flow", "gray_frames", "millis"),
                   help="slice along the container's flow intervals (default when present), gray frames or ms")
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--start", type=int, default=0, help="first slice index")
    s.add_argument("--count", type=int, help="number of slices (default: all)")
    s.add_argument("--max-iters", type=int)
    s.add_argument("--pyramid-levels", type=int)
    s.add_argument("--smoothness-weight", type=float)
    s.add_argument("--objective", choices=("variance", "grad_mag", "multifocal_normalized"))
    s.add_argument("--patch-grid", type=lambda t: _ints(t, 2), help="rows,cols")
    s.add_argument("--seed", type=int)
    s.add_argument("--codec", choices=("none", "deflate", "zstd"))
    s.set_defaults(func=cmd_estimate_flow)

    s = sub.add_parser("eval", help="compare predicted against ground-truth flow")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--thresholds", type=_floats, help="outlier thresholds in px, e.g. 1,3")
    s.add_argument("--mask", choices=("events", "all"), default="events")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _say(f"eventkit {args.command}: error: {exc}")
        return 2
    except Exception as exc:  # runtime failures: report, don't dump a traceback unless asked
        log.debug("traceback", exc_info=True)
        _say(f"eventkit {args.command}: error: {exc}")
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
