"""Turning clusters and raw detections into smoothed, filtered trajectories.

A trajectory is the frame-ordered box sequence of one instance.  Support
filtering drops spatially incoherent blips (anti-blinking), short detection
gaps are interpolated, and a small Gaussian kernel steadies the boxes.
Sensitivity flags decide what actually gets pixelated.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EngineError
from .stream import KIND_DPO, KIND_IPO, Box2D, DetectionRecord

log = logging.getLogger(__name__)

TrackPoint = tuple[int, Box2D]


@dataclass(frozen=True)
class Trajectory:
    """Frame-ordered boxes of one instance, at most one box per frame."""

    id: str
    cls: str
    kind: str
    points: tuple[TrackPoint, ...]
    sensitive: bool = True
    payload_texts: tuple[str, ...] = ()

    def __post_init__(self):
        frames = [f for f, _ in self.points]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise EngineError(
                "trajectory/unsorted",
                f"trajectory {self.id} frames must be strictly increasing",
            )


@dataclass(frozen=True)
class WhitelistAnchor:
    frame: int
    box: Box2D


@dataclass(frozen=True)
class SensitivityPolicy:
    """What to pixelate: anchors exempt a cluster, words condemn a text."""

    whitelist: tuple[WhitelistAnchor, ...] = ()
    word_list: tuple[str, ...] = ()
    default_dpo_face_sensitive: bool = True


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    ix2 = min(a.x + a.w, b.x + b.w)
    iy2 = min(a.y + a.h, b.y + b.h)
    iw = max(0.0, ix2 - ix)
    ih = max(0.0, iy2 - iy)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def resolve_domain_overlap(ipo_records: list[DetectionRecord],
                           dpo_records: list[DetectionRecord],
                           iou_eps: float) -> list[DetectionRecord]:
    """Drop DPO detections claimed by a same-frame IPO detection (IOU > eps).

    The unconditional pipeline already covers that box, so processing it twice
    would only double-blur and muddy the clustering.
    """
    ipo_by_frame: dict[int, list[Box2D]] = {}
    for rec in ipo_records:
        ipo_by_frame.setdefault(rec.frame, []).append(rec.box)
    kept = []
    for rec in dpo_records:
        rivals = ipo_by_frame.get(rec.frame, ())
        if any(iou(rec.box, b) > iou_eps for b in rivals):
            continue
        kept.append(rec)
    return kept


def eliminate_false_positives(tracks: dict[str, list[TrackPoint]],
                              min_support: int = 5,
                              iou_eps: float = 0.7) -> dict[str, list[TrackPoint]]:
    """Drop low-support box chains inside one segment (anti-blinking).

    Consecutive member boxes belong to one chain while they overlap with
    IOU > eps; chains shorter than ``min_support`` are removed.  A track with
    no surviving chain disappears for this segment.
    """
    out: dict[str, list[TrackPoint]] = {}
    for track_id in sorted(tracks):
        points = sorted(tracks[track_id], key=lambda p: p[0])
        chains: list[list[TrackPoint]] = []
        current: list[TrackPoint] = []
        for pt in points:
            if current and iou(current[-1][1], pt[1]) <= iou_eps:
                chains.append(current)
                current = []
            current.append(pt)
        if current:
            chains.append(current)
        survivors = [pt for chain in chains if len(chain) >= min_support for pt in chain]
        if survivors:
            out[track_id] = survivors
    return out


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    radius = window // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def smooth_track(points: list[TrackPoint], window: int = 5, gap_max: int = 4,
                 sigma: float = 1.0) -> list[TrackPoint]:
    """Fill small frame gaps by interpolation, then Gaussian-smooth each coordinate.

    Gaps wider than ``gap_max`` split the track into independent runs; the
    kernel is normalized and boundaries are reflected, so constant tracks pass
    through unchanged and no box is ever invented outside the observed span.
    """
    if not points:
        return []
    points = sorted(points, key=lambda p: p[0])
    frames = [f for f, _ in points]
    if len(set(frames)) != len(frames):
        raise EngineError("trajectory/duplicate-frame", "smoothing input repeats a frame")

    runs: list[list[TrackPoint]] = [[points[0]]]
    for pt in points[1:]:
        if pt[0] - runs[-1][-1][0] - 1 <= gap_max:
            runs[-1].append(pt)
        else:
            runs.append([pt])

    kernel = _gaussian_kernel(window, sigma)
    radius = window // 2
    out: list[TrackPoint] = []
    for run in runs:
        fs = np.asarray([f for f, _ in run], dtype=np.float64)
        full = np.arange(int(fs[0]), int(fs[-1]) + 1)
        coords = np.stack([
            np.interp(full, fs, np.asarray([getattr(b, name) for _, b in run]))
            for name in ("x", "y", "w", "h")
        ])
        if full.size > 1:
            padded = np.pad(coords, ((0, 0), (radius, radius)), mode="symmetric")
            coords = np.stack([
                np.convolve(padded[i], kernel, mode="valid") for i in range(4)
            ])
        out.extend(
            (int(f), Box2D(x=c[0], y=c[1], w=c[2], h=c[3]))
            for f, c in zip(full, coords.T)
        )
    return out


def link_cluster_to_trajectory(members: list[DetectionRecord], traj_id: str) -> Trajectory | None:
    """Frame-sort a cluster's detections into a trajectory with a stable id.

    Two members on one frame mean the exclusion constraint was violated
    upstream and are a hard error; an empty cluster yields no trajectory.
    """
    if not members:
        return None
    members = sorted(members, key=lambda r: r.frame)
    frames = [r.frame for r in members]
    if len(set(frames)) != len(frames):
        raise EngineError(
            "trajectory/duplicate-frame",
            f"cluster for {traj_id} holds two detections in one frame",
        )
    payloads = tuple(r.payload_text for r in members if r.payload_text)
    return Trajectory(
        id=traj_id,
        cls=members[0].cls,
        kind=members[0].kind,
        points=tuple((r.frame, r.box) for r in members),
        sensitive=True,
        payload_texts=payloads,
    )


def _text_is_sensitive(payloads: tuple[str, ...], words: tuple[str, ...]) -> bool:
    lowered = [p.casefold() for p in payloads]
    return any(w.casefold() in p for w in words for p in lowered)


def filter_sensitivity(trajectories: list[Trajectory], policy: SensitivityPolicy,
                       whitelisted_ids: set[str] | None = None) -> list[Trajectory]:
    """Set the sensitive flag on each trajectory.

    IPO trajectories are always sensitive.  A whitelisted cluster is never
    sensitive again (the caller carries ``whitelisted_ids`` across segments).
    Text trajectories are sensitive only when a payload contains a listed
    word; other DPO trajectories follow the default flag.
    """
    whitelisted = whitelisted_ids or set()
    out = []
    for traj in trajectories:
        if traj.kind == KIND_IPO:
            flagged = True
        elif traj.id in whitelisted:
            flagged = False
        elif traj.payload_texts or traj.cls == "text":
            flagged = _text_is_sensitive(traj.payload_texts, policy.word_list)
        else:
            flagged = policy.default_dpo_face_sensitive
        out.append(replace(traj, sensitive=flagged))
    return out


def match_whitelist_anchor(anchor: WhitelistAnchor,
                           candidates: list[tuple[str, DetectionRecord]],
                           iou_eps: float) -> str | None:
    """Resolve an anchor to the trajectory id of the best-overlapping detection.

    Requires IOU >= eps with some detection in the anchor's frame; otherwise
    the anchor is reported unusable (caller warns and ignores it).
    """
    best_id = None
    best = -1.0
    for traj_id, rec in candidates:
        if rec.frame != anchor.frame:
            continue
        val = iou(anchor.box, rec.box)
        if val >= iou_eps and val > best:
            best = val
            best_id = traj_id
    return best_id
