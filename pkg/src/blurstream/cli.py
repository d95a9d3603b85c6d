"""Command-line surface: synth, cluster, pipeline, eval, bench."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from .affinity import ApParams
from .bench import render_bench_figures, run_bench, write_bench_csv
from .errors import EngineError
from .io import (
    blur_regions,
    header_for_records,
    load_policy,
    parse_detections,
    read_ppm,
    write_assignments,
    write_detections,
    write_masks,
    write_ppm,
    write_trajectories,
    write_truth,
)
from .metrics import purity
from .pipeline import PipelineConfig, cluster_stream, run_pipeline
from .report import build_eval_report, render_eval_figure, write_report
from .stream import StreamConfig
from .synth import SynthConfig, generate

log = logging.getLogger(__name__)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--segment-len", type=int, default=150, help="frames per segment")
    parser.add_argument("--fps", type=int, default=30)
    parser.add_argument("--iou-eps", type=float, default=0.7, help="overlap threshold")
    parser.add_argument("--damping", type=float, default=0.5, help="message damping factor")
    parser.add_argument("--seed", type=int, default=0)


def _stream_config(args) -> StreamConfig:
    return StreamConfig(
        segment_len=args.segment_len,
        fps=args.fps,
        iou_eps=args.iou_eps,
        damping=args.damping,
    )


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        stream=_stream_config(args),
        params=ApParams(damping=args.damping),
        window=getattr(args, "window", 4),
    )


def _synth_config(args) -> SynthConfig:
    return SynthConfig(
        seed=args.seed,
        identities=args.identities,
        lifespan=(args.lifespan_min, args.lifespan_max),
        embed_dim=args.embed_dim,
        noise_sigma=args.noise_sigma,
        co_occurrence=args.co_occurrence,
        fp_rate=args.fp_rate,
        fn_rate=args.fn_rate,
        frames=args.frames,
        motion=args.motion,
        det_class=args.det_class,
        confusable_pairs=args.confusable_pairs,
        confusable_angle=args.confusable_angle,
    )


def _add_synth_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--frames", type=int, default=450)
    parser.add_argument("--identities", type=int, default=4)
    parser.add_argument("--lifespan-min", type=int, default=90)
    parser.add_argument("--lifespan-max", type=int, default=240)
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--noise-sigma", type=float, default=0.2)
    parser.add_argument("--co-occurrence", type=int, default=2)
    parser.add_argument("--fp-rate", type=float, default=0.0)
    parser.add_argument("--fn-rate", type=float, default=0.0)
    parser.add_argument("--motion", type=float, default=2.0)
    parser.add_argument("--det-class", default="face")
    parser.add_argument("--confusable-pairs", type=int, default=0)
    parser.add_argument("--confusable-angle", type=float, default=0.35)


def cmd_synth(args) -> int:
    cfg = _synth_config(args)
    records, truth = generate(cfg)
    header = header_for_records(records, fps=args.fps)
    write_detections(args.out, header, records)
    print(f"wrote {len(records)} detections to {args.out}")
    if args.truth_out:
        write_truth(args.truth_out, truth, fps=args.fps)
        print(f"wrote {len(truth)} truth entries to {args.truth_out}")
    return 0


def cmd_cluster(args) -> int:
    _, records = parse_detections(args.detections)
    config = _pipeline_config(args)
    states = cluster_stream(records, config)
    rows = []
    for cls in sorted(states):
        assignments = states[cls].assignments()
        rows.extend((rec, f"{cls}-{lin:04d}") for rec, lin in assignments)
        labels = [lin for _, lin in assignments]
        truths = [rec.truth_id for rec, _ in assignments]
        line = f"{cls}: {len(labels)} nodes in {len(set(labels))} clusters"
        if labels and all(t is not None for t in truths):
            line += f", purity {purity(labels, truths):.4f}"
        print(line)
    rows.sort(key=lambda r: (r[0].frame, r[1]))
    write_assignments(args.out, rows, fps=args.fps)
    print(f"wrote assignments to {args.out}")
    return 0


_FRAME_DIGITS = re.compile(r"(\d+)\D*$")


def _frame_of_path(path: Path) -> int | None:
    match = _FRAME_DIGITS.search(path.stem)
    return int(match.group(1)) if match else None


def cmd_pipeline(args) -> int:
    _, records = parse_detections(args.detections)
    config = _pipeline_config(args)
    policy = load_policy(args.policy, args.word_list)
    result = run_pipeline(records, config, policy)
    write_masks(args.masks_out, result.masks, fps=args.fps)
    print(f"wrote {len(result.masks)} mask entries to {args.masks_out}")
    if args.trajectories_out:
        write_trajectories(args.trajectories_out, result.trajectories, result.members, fps=args.fps)
        sensitive = sum(1 for t in result.trajectories if t.sensitive)
        print(f"wrote {len(result.trajectories)} trajectories ({sensitive} sensitive) "
              f"to {args.trajectories_out}")
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    if args.frames_dir:
        out_dir = Path(args.blur_out or (Path(args.frames_dir).name + "_blurred"))
        out_dir.mkdir(parents=True, exist_ok=True)
        boxes_by_frame: dict[int, list] = {}
        for frame, box, _ in result.masks:
            boxes_by_frame.setdefault(frame, []).append(box)
        count = 0
        for ppm in sorted(Path(args.frames_dir).glob("*.ppm")):
            frame = _frame_of_path(ppm)
            if frame is None:
                log.warning("cannot parse a frame number from %s, skipped", ppm.name)
                continue
            image = read_ppm(ppm)
            boxes = boxes_by_frame.get(frame, [])
            write_ppm(out_dir / ppm.name, blur_regions(image, boxes, sigma=args.blur_sigma))
            count += 1
        print(f"blurred {count} frames into {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ignore = set(filter(None, (args.ignore_ids or "").split(",")))
    report, events = build_eval_report(
        args.pred, args.truth,
        iou_min=args.iou_min,
        ignore_ids=ignore,
        include_per_frame=args.per_frame,
    )
    payload = json.dumps(report, indent=2)
    if args.out:
        write_report(report, args.out)
        print(f"wrote report to {args.out}")
    else:
        print(payload)
    if args.figures_dir:
        path = render_eval_figure(events, args.figures_dir)
        print(f"rendered {path}")
    return 0


def cmd_bench(args) -> int:
    cfg = _synth_config(args)
    seeds = list(range(args.seed, args.seed + args.seeds))
    params = ApParams(damping=args.damping)
    report = run_bench(cfg, seeds, segment_len=args.segment_len, params=params,
                       window=args.window)
    table = write_bench_csv(report, args.out_dir)
    figures = render_bench_figures(report, args.out_dir)
    print(f"wrote {table} and {len(figures)} figures")
    for method in ("ap-batch", "positioned-batch", "positioned-incremental"):
        vals = report.purities(method)
        if vals:
            print(f"{method:>24}: mean purity {report.mean_purity(method):.4f} over {len(vals)} seeds")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blurstream",
        description="Streaming privacy pixelation: cluster detections, build "
                    "trajectories, emit blur masks, and score the result.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic detection stream with ground truth")
    _common_flags(p)
    _add_synth_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="cluster a detection stream and write assignments")
    _common_flags(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=4, help="retention window in segments")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("pipeline", help="full run: cluster, build trajectories, emit masks")
    _common_flags(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--masks-out", required=True)
    p.add_argument("--trajectories-out")
    p.add_argument("--policy", help="sensitivity policy JSON")
    p.add_argument("--word-list", help="extra sensitive words, one per line")
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--frames-dir", help="directory of PPM frames to blur")
    p.add_argument("--blur-out", help="output directory for blurred frames")
    p.add_argument("--blur-sigma", type=float, default=6.0)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="score masks or trajectories against ground truth")
    _common_flags(p)
    p.add_argument("--pred", required=True, help="masks or trajectories file")
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="report JSON path (default: stdout)")
    p.add_argument("--iou-min", type=float, default=0.5)
    p.add_argument("--ignore-ids", help="comma-separated truth ids to exclude")
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--figures-dir", help="render per-frame event figures here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="compare clustering methods on synthetic streams")
    _common_flags(p)
    _add_synth_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    p.add_argument("--window", type=int, default=4)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
