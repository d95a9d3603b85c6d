"""Evaluation report assembly: metrics JSON plus optional figures."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DetectionFileError
from .io import parse_masks, parse_trajectories, parse_truth, sniff_file_type, _atomic_write_bytes
from .metrics import MP_DEFINITION, EvalEvents, evaluate_frames, mp, opr, purity, sopa, sopp
from .stream import Box2D
from .synth import TruthEntry

SCHEMA_VERSION = 1


def _preds_from_masks(masks) -> dict[int, list[tuple[str, Box2D]]]:
    by_frame: dict[int, list[tuple[str, Box2D]]] = {}
    for frame, box, traj in masks:
        by_frame.setdefault(frame, []).append((traj, box))
    return by_frame


def load_predictions(path: str | Path) -> tuple[dict[int, list[tuple[str, Box2D]]], dict | None]:
    """Accept a masks file or a trajectories file as the prediction source.

    For trajectories, only sensitive ones contribute boxes; per-point members,
    when present, feed clustering purity.
    """
    kind = sniff_file_type(path)
    if kind == "masks":
        return _preds_from_masks(parse_masks(path)), None
    if kind == "trajectories":
        trajectories, members = parse_trajectories(path)
        by_frame: dict[int, list[tuple[str, Box2D]]] = {}
        for traj in trajectories:
            if not traj.sensitive:
                continue
            for frame, box in traj.points:
                by_frame.setdefault(frame, []).append((traj.id, box))
        purity_pairs = [
            (traj_id, tid)
            for traj_id, pts in members.items()
            for _, tid in pts
            if tid is not None
        ]
        return by_frame, {"pairs": purity_pairs, "n_trajectories": len(trajectories)}
    raise DetectionFileError("io/wrong-type", f"cannot evaluate a {kind!r} file")


def build_eval_report(pred_path: str | Path, truth_path: str | Path,
                      iou_min: float = 0.5, ignore_ids: set[str] | None = None,
                      include_per_frame: bool = False) -> tuple[dict, EvalEvents]:
    """Match predictions against ground truth and aggregate every metric."""
    ignore = ignore_ids or set()
    preds_by_frame, purity_info = load_predictions(pred_path)
    truth = [t for t in parse_truth(truth_path) if t.truth_id not in ignore]
    gts_by_frame: dict[int, list[tuple[str, Box2D]]] = {}
    for entry in truth:
        gts_by_frame.setdefault(entry.frame, []).append((entry.truth_id, entry.box))

    events = evaluate_frames(preds_by_frame, gts_by_frame, iou_min=iou_min)
    report = {
        "schema_version": SCHEMA_VERSION,
        "iou_min": iou_min,
        "mp_definition": MP_DEFINITION,
        "ignored_ids": sorted(ignore),
        "totals": {
            "frames": len(events.frames),
            "g": int(events.total("g")),
            "c": int(events.total("c")),
            "m": int(events.total("m")),
            "fp": int(events.total("fp")),
            "mm": int(events.total("mm")),
            "d_sum": events.total("d_sum"),
        },
        "metrics": {
            "sopa": sopa(events),
            "sopp": sopp(events),
            "opr": opr(events),
            "mp": mp(events),
        },
    }
    if purity_info is not None and purity_info["pairs"]:
        labels = [lab for lab, _ in purity_info["pairs"]]
        truths = [tid for _, tid in purity_info["pairs"]]
        report["metrics"]["purity"] = purity(labels, truths)
        report["metrics"]["purity_nodes"] = len(labels)
        report["metrics"]["clusters"] = len(set(labels))
    if include_per_frame:
        report["per_frame"] = [
            {"frame": ev.frame, "g": ev.g, "c": ev.c, "m": ev.m,
             "fp": ev.fp, "mm": ev.mm, "d_sum": ev.d_sum}
            for ev in events.frames
        ]
    return report, events


def write_report(report: dict, path: str | Path) -> None:
    _atomic_write_bytes(path, (json.dumps(report, indent=2) + "\n").encode("utf-8"))


def render_eval_figure(events: EvalEvents, out_dir: str | Path) -> Path:
    """Per-frame error timeline rendered next to the JSON report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = [ev.frame for ev in events.frames]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(frames, [ev.g for ev in events.frames], label="ground truth", linewidth=1)
    ax.plot(frames, [ev.m for ev in events.frames], label="misses", linewidth=1)
    ax.plot(frames, [ev.fp for ev in events.frames], label="false positives", linewidth=1)
    ax.set_xlabel("frame")
    ax.set_ylabel("count")
    ax.set_title("Per-frame pixelation events")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out_dir / "events_by_frame.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
