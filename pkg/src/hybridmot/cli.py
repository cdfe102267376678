"""Command-line entry points: track, eval, bench and synth."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import motio
from .evaluation import UndefinedMetric, demo_spec, evaluate_sequence, generate_synthetic, mota, motp
from .motio import BoxKind, MotFormatError
from .pipeline import (DelayedSource, FrameSourceError, StaticDetections, TrackerConfig,
                       TrackLog, run_sequence)

EXIT_OK = 0
EXIT_IO = 1
EXIT_FORMAT = 2
EXIT_INTERNAL = 3

BENCH_COLUMNS = ("skip", "fps", "lat_p50_ms", "lat_p95_ms", "det_calls", "mota", "motp")

logger = logging.getLogger("hybridmot")


class InvariantViolation(RuntimeError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("HYBRID_MOT_LOG", "warn").strip().lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _config(args) -> TrackerConfig:
    return TrackerConfig(skip=args.skip, tau=args.tau, tau_init=args.tau_init, seed=args.seed,
                         use_flow=not args.no_flow)


def _load_detections(args, seq: motio.MotSequence):
    det_path = Path(args.detections) if args.detections else seq.det_path
    records = motio.read_mot_boxes(det_path, BoxKind.DETECTIONS,
                                   normalize_conf=not args.no_normalize_conf)
    emb = motio.read_embeddings(args.embeddings) if args.embeddings else None
    return motio.records_to_detections(records, emb)


def check_log(log: TrackLog) -> None:
    """Sanity checks on tracker output; failures are internal errors."""
    for r in log.frames:
        ids = [i for i, _ in r.entries]
        if len(ids) != len(set(ids)):
            raise InvariantViolation(f"frame {r.frame}: duplicate track ids")
        for _, b in r.entries:
            if not all(math.isfinite(v) for v in b.as_tuple()):
                raise InvariantViolation(f"frame {r.frame}: non-finite box")


def _run(seq: motio.MotSequence, dets, config: TrackerConfig, latency_ms: float = 0.0,
         dump=None) -> TrackLog:
    source = StaticDetections(dets)
    if latency_ms > 0:
        source = DelayedSource(source, latency_ms)
    on_frame = None
    if dump is not None:
        def on_frame(res):
            for tid, b in res.entries:
                dump.write(f"{res.frame} {res.mode.value} {tid} {b.x:.2f} {b.y:.2f} {b.w:.2f} {b.h:.2f}\n")
    log = run_sequence(seq.frames, source, config, on_frame=on_frame)
    check_log(log)
    return log


def _fps(log: TrackLog) -> float:
    total = sum(log.frame_times)
    return len(log.frame_times) / total if total > 0 else float("inf")


def cmd_track(args) -> int:
    seq = motio.MotSequence.open(args.seq)
    dets = _load_detections(args, seq)
    config = _config(args)
    if args.dump_boxes:
        with open(args.dump_boxes, "w", encoding="utf-8", newline="\n") as dump:
            log = _run(seq, dets, config, dump=dump)
    else:
        log = _run(seq, dets, config)
    out = args.output or f"{seq.info.name}.txt"
    motio.write_results(log, out)
    print(f"frames={len(log.frames)} tracks={log.tracks_created} "
          f"detector_calls={log.detector_calls} fps={_fps(log):.1f} output={out}")
    return EXIT_OK


def _metric_str(fn, counts) -> str:
    try:
        return f"{fn(counts):.4f}"
    except UndefinedMetric:
        return "nan"


def cmd_eval(args) -> int:
    gt = motio.records_to_boxes(motio.read_mot_boxes(args.gt, BoxKind.GROUND_TRUTH))
    hyp = motio.records_to_boxes(motio.read_mot_boxes(args.results, BoxKind.RESULTS))
    counts = evaluate_sequence(gt, hyp, args.iou_min)
    m_a, m_p = _metric_str(mota, counts), _metric_str(motp, counts)
    print(f"{'MOTA':>8} {'MOTP':>8} {'FP':>6} {'FN':>6} {'IDS':>6} {'GT':>6}")
    print(f"{m_a:>8} {m_p:>8} {counts.fp:>6} {counts.fn:>6} {counts.ids:>6} {counts.gt:>6}")
    print(f"MOTA={m_a} MOTP={m_p} FP={counts.fp} FN={counts.fn} IDS={counts.ids} GT={counts.gt}")
    return EXIT_OK


def _parse_skips(text: str) -> list[int]:
    try:
        skips = sorted({int(s) for s in text.split(",") if s.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad skip list {text!r}")
    if not skips or skips[0] < 0:
        raise argparse.ArgumentTypeError("skips must be non-negative integers")
    return skips


def bench_rows(seq: motio.MotSequence, dets, gt, skips, base: TrackerConfig,
               latency_ms: float = 0.0) -> list[dict]:
    rows = []
    for skip in skips:
        config = TrackerConfig(**{**base.__dict__, "skip": skip})
        log = _run(seq, dets, config, latency_ms)
        lat = np.array(log.frame_times) * 1000.0
        row = {"skip": skip, "fps": _fps(log),
               "lat_p50_ms": float(np.percentile(lat, 50)) if len(lat) else float("nan"),
               "lat_p95_ms": float(np.percentile(lat, 95)) if len(lat) else float("nan"),
               "det_calls": log.detector_calls, "mota": float("nan"), "motp": float("nan")}
        if gt is not None:
            counts = evaluate_sequence(gt, log.as_mapping())
            for key, fn in (("mota", mota), ("motp", motp)):
                try:
                    row[key] = fn(counts)
                except UndefinedMetric:
                    pass
        rows.append(row)
    return rows


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else f"{v:.4f}"


def cmd_bench(args) -> int:
    seq = motio.MotSequence.open(args.seq)
    dets = _load_detections(args, seq)
    gt = None
    gt_path = Path(args.gt) if args.gt else seq.gt_path
    if gt_path.exists():
        gt = motio.records_to_boxes(motio.read_mot_boxes(gt_path, BoxKind.GROUND_TRUTH))
    base = _config(argparse.Namespace(**{**vars(args), "skip": 0}))
    rows = bench_rows(seq, dets, gt, args.skips, base, args.detector_latency_ms)
    print(" ".join(f"{c:>10}" for c in BENCH_COLUMNS))
    for row in rows:
        print(" ".join(f"{_fmt(row[c]):>10}" for c in BENCH_COLUMNS))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(BENCH_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row[c]) for c in BENCH_COLUMNS) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    seq = generate_synthetic(demo_spec(seed=args.seed, n_frames=args.frames))
    root = motio.write_sequence(args.out, seq.frames, seq.gt, seq.detections, name=args.name)
    print(f"wrote {len(seq.frames)} frames to {root}")
    return EXIT_OK


def _add_tracker_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seq", required=True, help="sequence directory in MOT layout")
    p.add_argument("--detections", help="detections file (default: <seq>/det/det.txt)")
    p.add_argument("--embeddings", help="per-detection appearance vectors CSV")
    p.add_argument("--tau", type=float, default=0.5, help="high/low confidence split")
    p.add_argument("--tau-init", type=float, default=0.6, help="min confidence to start a track")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-flow", action="store_true", help="coast on the motion model between keyframes")
    p.add_argument("--no-normalize-conf", action="store_true",
                   help="keep detection scores as given even if above 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridmot", description="Hybrid detection/optical-flow tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track one sequence and write MOT results")
    _add_tracker_args(p)
    p.add_argument("--skip", type=int, default=0, help="optical-flow frames between keyframes")
    p.add_argument("--output", help="results file (default: <name>.txt)")
    p.add_argument("--dump-boxes", help="write per-frame boxes with frame mode as text")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="CLEAR MOT metrics of a results file")
    p.add_argument("--gt", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--iou-min", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="throughput and accuracy across skip values")
    _add_tracker_args(p)
    p.add_argument("--skips", type=_parse_skips, default=[0, 1, 2, 3, 4])
    p.add_argument("--detector-latency-ms", type=float, default=0.0,
                   help="simulated detector cost charged on every keyframe")
    p.add_argument("--gt", help="ground truth (default: <seq>/gt/gt.txt if present)")
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write the synthetic demo sequence in MOT layout")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synthetic")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FrameSourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_FORMAT
    except MotFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
