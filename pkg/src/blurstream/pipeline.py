"""End-to-end pipeline: segments -> clustering -> trajectories -> masks.

IPO detections bypass clustering entirely: they are chained frame-to-frame by
box overlap.  DPO detections are clustered per class with the incremental
engine.  Both paths then share the same per-segment treatment: low-support
chains are dropped, boxes are gap-filled and smoothed, sensitivity is
decided, and every sensitive point becomes one mask entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .affinity import ApParams
from .incremental import IncrementalState, advance_segment
from .stream import (
    KIND_DPO,
    KIND_IPO,
    Box2D,
    DetectionRecord,
    Segment,
    StreamConfig,
    segment_stream,
)
from .trajectory import (
    SensitivityPolicy,
    Trajectory,
    eliminate_false_positives,
    filter_sensitivity,
    iou,
    match_whitelist_anchor,
    resolve_domain_overlap,
    smooth_track,
)

log = logging.getLogger(__name__)

MaskEntry = tuple[int, Box2D, str]


@dataclass(frozen=True)
class PipelineConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    params: ApParams | None = None
    window: int | None = 4
    min_support: int = 5
    smooth_window: int = 5
    gap_max: int = 4

    def solver_params(self) -> ApParams:
        if self.params is not None:
            return self.params
        return ApParams(damping=self.stream.damping)


@dataclass
class PipelineResult:
    masks: list[MaskEntry] = field(default_factory=list)
    trajectories: list[Trajectory] = field(default_factory=list)
    members: dict[str, list[tuple[int, str | None]]] = field(default_factory=dict)
    whitelisted: set[str] = field(default_factory=set)
    states: dict[str, IncrementalState] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class _ChainTracker:
    """Greedy overlap chaining for unconditional (IPO) detections."""

    def __init__(self, cls: str, iou_eps: float, gap_max: int):
        self.cls = cls
        self.iou_eps = iou_eps
        self.gap_max = gap_max
        self.tracks: list[dict] = []
        self._next = 0

    def observe(self, frame: int, records: list[DetectionRecord]) -> list[tuple[str, DetectionRecord]]:
        taken: set[str] = set()
        out = []
        for rec in records:
            best_id = None
            best = self.iou_eps
            for track in self.tracks:
                if track["id"] in taken:
                    continue
                if frame - track["last_frame"] > self.gap_max + 1:
                    continue
                val = iou(track["last_box"], rec.box)
                if val > best:
                    best = val
                    best_id = track["id"]
            if best_id is None:
                best_id = f"{self.cls}-{self._next:04d}"
                self._next += 1
                self.tracks.append({"id": best_id, "last_frame": frame, "last_box": rec.box})
            else:
                for track in self.tracks:
                    if track["id"] == best_id:
                        track["last_frame"] = frame
                        track["last_box"] = rec.box
            taken.add(best_id)
            out.append((best_id, rec))
        return out


def cluster_stream(records: list[DetectionRecord], config: PipelineConfig) -> dict[str, IncrementalState]:
    """Run incremental clustering per DPO class over the whole stream."""
    params = config.solver_params()
    dpo = [r for r in records if r.kind == KIND_DPO]
    states: dict[str, IncrementalState] = {}
    for segment in segment_stream(dpo, config.stream.segment_len):
        by_class: dict[str, list[DetectionRecord]] = {}
        for rec in segment.records:
            by_class.setdefault(rec.cls, []).append(rec)
        for cls in sorted(set(states) | set(by_class)):
            state = states.setdefault(cls, IncrementalState(params=params, window=config.window))
            advance_segment(state, by_class.get(cls, []), segment.index)
    return states


def _segment_dpo_tracks(state: IncrementalState, cls: str, segment: Segment,
                        ) -> tuple[dict[str, list[tuple[int, Box2D]]], list[tuple[str, DetectionRecord]]]:
    tracks: dict[str, list[tuple[int, Box2D]]] = {}
    tagged: list[tuple[str, DetectionRecord]] = []
    for rec, lineage in state.assignments():
        if not segment.first_frame <= rec.frame <= segment.last_frame:
            continue
        traj_id = f"{cls}-{lineage:04d}"
        tracks.setdefault(traj_id, []).append((rec.frame, rec.box))
        tagged.append((traj_id, rec))
    return tracks, tagged


def run_pipeline(records: list[DetectionRecord], config: PipelineConfig | None = None,
                 policy: SensitivityPolicy | None = None) -> PipelineResult:
    """Process a detection stream into masks and trajectories."""
    config = config or PipelineConfig()
    policy = policy or SensitivityPolicy()
    params = config.solver_params()
    eps = config.stream.iou_eps

    ipo = [r for r in records if r.kind == KIND_IPO]
    dpo = [r for r in records if r.kind == KIND_DPO]
    dpo = resolve_domain_overlap(ipo, dpo, eps)
    merged = sorted(ipo + dpo, key=lambda r: r.frame)

    result = PipelineResult()
    trackers: dict[str, _ChainTracker] = {}
    states: dict[str, IncrementalState] = {}
    payloads_by_id: dict[str, tuple[str, ...]] = {}
    full_points: dict[str, list[tuple[int, Box2D]]] = {}
    meta_by_id: dict[str, tuple[str, str]] = {}  # id -> (cls, kind)
    pending_anchors = list(policy.whitelist)

    for segment in segment_stream(merged, config.stream.segment_len):
        seg_tracks: dict[str, dict[str, list[tuple[int, Box2D]]]] = {}
        anchor_candidates: list[tuple[str, DetectionRecord]] = []

        by_class: dict[str, list[DetectionRecord]] = {}
        for rec in segment.records:
            by_class.setdefault(rec.cls, []).append(rec)

        ipo_classes = sorted(c for c, recs in by_class.items() if recs[0].kind == KIND_IPO)
        dpo_classes = sorted(
            set(c for c, recs in by_class.items() if recs[0].kind == KIND_DPO) | set(states)
        )

        for cls in ipo_classes:
            tracker = trackers.setdefault(cls, _ChainTracker(cls, eps, config.gap_max))
            tracks: dict[str, list[tuple[int, Box2D]]] = {}
            frames_seen: dict[int, list[DetectionRecord]] = {}
            for rec in by_class[cls]:
                frames_seen.setdefault(rec.frame, []).append(rec)
            for frame in sorted(frames_seen):
                for traj_id, rec in tracker.observe(frame, frames_seen[frame]):
                    tracks.setdefault(traj_id, []).append((rec.frame, rec.box))
                    result.members.setdefault(traj_id, []).append((rec.frame, rec.truth_id))
                    meta_by_id[traj_id] = (cls, KIND_IPO)
            seg_tracks[cls] = tracks

        for cls in dpo_classes:
            state = states.setdefault(cls, IncrementalState(params=params, window=config.window))
            advance_segment(state, by_class.get(cls, []), segment.index)
            tracks, tagged = _segment_dpo_tracks(state, cls, segment)
            for traj_id, rec in tagged:
                result.members.setdefault(traj_id, []).append((rec.frame, rec.truth_id))
                meta_by_id[traj_id] = (cls, KIND_DPO)
                if rec.payload_text:
                    payloads_by_id[traj_id] = payloads_by_id.get(traj_id, ()) + (rec.payload_text,)
            anchor_candidates.extend(tagged)
            seg_tracks[cls] = tracks

        # resolve whitelist anchors that point into this segment
        still_pending = []
        for anchor in pending_anchors:
            if not segment.first_frame <= anchor.frame <= segment.last_frame:
                still_pending.append(anchor)
                continue
            matched = match_whitelist_anchor(anchor, anchor_candidates, eps)
            if matched is None:
                msg = f"whitelist anchor at frame {anchor.frame} matched no detection; ignored"
                log.warning(msg)
                result.warnings.append(msg)
            else:
                result.whitelisted.add(matched)
        pending_anchors = still_pending

        # shared per-segment treatment: support filter, smooth, flag, emit
        segment_trajectories: list[Trajectory] = []
        for cls in sorted(seg_tracks):
            kept = eliminate_false_positives(seg_tracks[cls], config.min_support, eps)
            for traj_id in sorted(kept):
                smoothed = smooth_track(kept[traj_id], config.smooth_window, config.gap_max)
                if not smoothed:
                    continue
                _, kind = meta_by_id[traj_id]
                segment_trajectories.append(Trajectory(
                    id=traj_id,
                    cls=cls,
                    kind=kind,
                    points=tuple(smoothed),
                    payload_texts=payloads_by_id.get(traj_id, ()),
                ))
        flagged = filter_sensitivity(segment_trajectories, policy, result.whitelisted)
        for traj in flagged:
            full_points.setdefault(traj.id, []).extend(traj.points)
            if traj.sensitive:
                result.masks.extend((f, box, traj.id) for f, box in traj.points)

    for anchor in pending_anchors:
        msg = f"whitelist anchor at frame {anchor.frame} is beyond the stream; ignored"
        log.warning(msg)
        result.warnings.append(msg)

    assembled = [
        Trajectory(
            id=traj_id,
            cls=meta_by_id[traj_id][0],
            kind=meta_by_id[traj_id][1],
            points=tuple(sorted(points, key=lambda p: p[0])),
            payload_texts=payloads_by_id.get(traj_id, ()),
        )
        for traj_id, points in sorted(full_points.items())
    ]
    result.trajectories = filter_sensitivity(assembled, policy, result.whitelisted)
    result.states = states
    result.masks.sort(key=lambda m: (m[0], m[2]))
    return result
