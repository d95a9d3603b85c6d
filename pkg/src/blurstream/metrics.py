"""Pixelation quality metrics over per-frame matched events.

Per frame we count ground-truth objects (g), matched pixelations (c), misses
(m), false positives (fp), identity mismatches (mm) and the summed overlap of
matches (d_sum).  The aggregate scores:

    sopa = 1 - (m + fp + mm) / g        overall accuracy, can go negative
    sopp = d_sum / c                    mean overlap of what was matched
    opr  = fp / c                       over-pixelation ratio
    mp   = #frames with g > 0, m == 0   fully covered frames

plus clustering purity (majority-identity mass per cluster).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EngineError
from .stream import Box2D
from .trajectory import iou

MP_DEFINITION = "frames with at least one ground-truth object and zero misses"


@dataclass(frozen=True)
class FrameEvents:
    """Matched-event counts for a single frame."""

    frame: int
    g: int = 0
    c: int = 0
    m: int = 0
    fp: int = 0
    mm: int = 0
    d_sum: float = 0.0

    def __post_init__(self):
        if min(self.g, self.c, self.m, self.fp, self.mm) < 0:
            raise EngineError("metrics/bad-events", "event counts must be non-negative")
        if self.c > self.g:
            raise EngineError("metrics/bad-events", f"c={self.c} exceeds g={self.g}")
        if self.d_sum > self.c + 1e-9:
            raise EngineError("metrics/bad-events", f"d_sum={self.d_sum} exceeds c={self.c}")


@dataclass
class EvalEvents:
    """Accumulated per-frame events for one evaluation run."""

    frames: list[FrameEvents] = field(default_factory=list)

    def add(self, ev: FrameEvents) -> None:
        self.frames.append(ev)

    def total(self, name: str) -> float:
        return sum(getattr(ev, name) for ev in self.frames)


@dataclass(frozen=True)
class FrameMatch:
    """Output of matching one frame: index pairs plus the event counts."""

    matches: list[tuple[int, int, float]]  # (gt index, pred index, iou)
    events: FrameEvents
    last_ids: dict[str, str]  # gt identity -> trajectory id it matched


def match_frame(preds: list[tuple[str, Box2D]], gts: list[tuple[str, Box2D]],
                frame: int = 0, iou_min: float = 0.5,
                last_ids: dict[str, str] | None = None) -> FrameMatch:
    """Optimal one-to-one box matching for a single frame.

    Pairs with IOU below ``iou_min`` are never matched; among the rest the
    assignment maximizes total IOU (exact solve; frames are small).  Unmatched
    ground truth counts as a miss, unmatched predictions as false positives,
    and a matched identity whose trajectory id changed since its last match
    counts as a mismatch.
    """
    last_ids = dict(last_ids or {})
    n_gt, n_pred = len(gts), len(preds)
    matches: list[tuple[int, int, float]] = []
    if n_gt and n_pred:
        weights = np.zeros((n_gt, n_pred))
        for gi, (_, gbox) in enumerate(gts):
            for pi, (_, pbox) in enumerate(preds):
                val = iou(gbox, pbox)
                if val >= iou_min:
                    weights[gi, pi] = val
        rows, cols = linear_sum_assignment(-weights)
        matches = [
            (int(gi), int(pi), float(weights[gi, pi]))
            for gi, pi in zip(rows, cols)
            if weights[gi, pi] > 0.0
        ]
    mm = 0
    for gi, pi, _ in matches:
        gt_id = gts[gi][0]
        traj_id = preds[pi][0]
        if gt_id in last_ids and last_ids[gt_id] != traj_id:
            mm += 1
        last_ids[gt_id] = traj_id
    c = len(matches)
    events = FrameEvents(
        frame=frame,
        g=n_gt,
        c=c,
        m=n_gt - c,
        fp=n_pred - c,
        mm=mm,
        d_sum=sum(v for _, _, v in matches),
    )
    return FrameMatch(matches=matches, events=events, last_ids=last_ids)


def evaluate_frames(preds_by_frame: dict[int, list[tuple[str, Box2D]]],
                    gts_by_frame: dict[int, list[tuple[str, Box2D]]],
                    iou_min: float = 0.5) -> EvalEvents:
    """Match every frame in order, carrying identity continuity for mismatches."""
    events = EvalEvents()
    last_ids: dict[str, str] = {}
    for frame in sorted(set(preds_by_frame) | set(gts_by_frame)):
        res = match_frame(
            preds_by_frame.get(frame, []),
            gts_by_frame.get(frame, []),
            frame=frame,
            iou_min=iou_min,
            last_ids=last_ids,
        )
        last_ids = res.last_ids
        events.add(res.events)
    return events


def sopa(events: EvalEvents) -> float | None:
    """Overall accuracy; None when there is no ground truth to score against."""
    g = events.total("g")
    if g == 0:
        return None
    errors = events.total("m") + events.total("fp") + events.total("mm")
    return 1.0 - errors / g


def sopp(events: EvalEvents) -> float | None:
    """Mean matched overlap; None without any matches."""
    c = events.total("c")
    if c == 0:
        return None
    return events.total("d_sum") / c


def opr(events: EvalEvents) -> float | None:
    """False positives per matched pixelation; None without any matches."""
    c = events.total("c")
    if c == 0:
        return None
    return events.total("fp") / c


def mp(events: EvalEvents) -> int:
    """Count of frames whose ground truth is fully covered (g>0 and m==0)."""
    return sum(1 for ev in events.frames if ev.g > 0 and ev.m == 0)


def purity(labels, truth_ids) -> float:
    """Fraction of nodes carrying the majority identity of their cluster."""
    labels = list(labels)
    truth_ids = list(truth_ids)
    if len(labels) != len(truth_ids):
        raise EngineError("metrics/bad-purity-input", "labels and truth ids differ in length")
    if not labels:
        raise EngineError("metrics/bad-purity-input", "purity of an empty assignment is undefined")
    by_cluster: dict = {}
    for lab, tid in zip(labels, truth_ids):
        by_cluster.setdefault(lab, []).append(tid)
    majority = 0
    for members in by_cluster.values():
        counts: dict = {}
        for tid in members:
            counts[tid] = counts.get(tid, 0) + 1
        majority += max(counts.values())
    return majority / len(labels)
