"""Deterministic synthetic detection streams with ground truth.

Each identity owns a fixed unit direction in embedding space; its per-frame
embeddings are that direction rotated by a Gaussian-distributed angle toward
a random tangent direction, so the noise magnitude reads directly on the
cosine scale.  Boxes follow a bounded random walk.  Detector imperfection is
modeled by per-detection drop-outs (false negatives) and per-frame spurious
detections with uniform-random embeddings (false positives, truth id "FP").

Identities are laid out in ``co_occurrence`` concurrent slots, so streams
always contain frames where several identities appear together.  An optional
number of "confusable" identity pairs places the second member of a pair at a
fixed small angle from the first instead of uniformly on the sphere; without
that, random high-dimensional directions are so far apart that no clustering
method can ever be fooled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EngineError
from .stream import KIND_DPO, Box2D, DetectionRecord

FP_TRUTH_ID = "FP"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    identities: int = 4
    lifespan: tuple[int, int] = (90, 240)  # frames an identity stays active
    embed_dim: int = 64
    noise_sigma: float = 0.2  # radians of angular jitter per detection
    co_occurrence: int = 2  # concurrent identity slots
    fp_rate: float = 0.0  # probability of one spurious detection per frame
    fn_rate: float = 0.0  # probability a true detection is dropped
    frames: int = 450
    motion: float = 2.0  # random-walk step, pixels/frame
    canvas: tuple[int, int] = (1280, 720)
    box_size: tuple[float, float] = (80.0, 100.0)
    det_class: str = "face"
    confusable_pairs: int = 0
    confusable_angle: float = 0.35  # radians between a confusable pair's centers

    def __post_init__(self):
        if self.identities <= 0 or self.frames <= 0 or self.embed_dim < 2:
            raise EngineError("synth/bad-config", "need identities>0, frames>0, embed_dim>=2")
        if not (0.0 <= self.fp_rate < 1.0 and 0.0 <= self.fn_rate <= 1.0):
            raise EngineError("synth/bad-config", "fp_rate in [0,1), fn_rate in [0,1]")
        if self.co_occurrence <= 0:
            raise EngineError("synth/bad-config", "co_occurrence must be positive")
        if self.lifespan[0] <= 0 or self.lifespan[1] < self.lifespan[0]:
            raise EngineError("synth/bad-config", f"bad lifespan range {self.lifespan}")
        if 2 * self.confusable_pairs > self.identities:
            raise EngineError("synth/bad-config", "too many confusable pairs for identity count")


@dataclass(frozen=True)
class TruthEntry:
    frame: int
    truth_id: str
    box: Box2D


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _perturb(center: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate ``center`` by angle ~N(0, sigma) toward a random tangent direction."""
    if sigma == 0.0:
        return center.copy()
    raw = rng.normal(size=center.size)
    tangent = raw - np.dot(raw, center) * center
    norm = np.linalg.norm(tangent)
    if norm == 0.0:
        return center.copy()
    theta = rng.normal(0.0, sigma)
    return np.cos(theta) * center + np.sin(theta) * (tangent / norm)


def _identity_centers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    centers = np.vstack([_unit(rng.normal(size=cfg.embed_dim)) for _ in range(cfg.identities)])
    for p in range(cfg.confusable_pairs):
        a, b = 2 * p, 2 * p + 1
        raw = rng.normal(size=cfg.embed_dim)
        tangent = raw - np.dot(raw, centers[a]) * centers[a]
        tangent = _unit(tangent)
        ang = cfg.confusable_angle
        centers[b] = np.cos(ang) * centers[a] + np.sin(ang) * tangent
    return centers


def _schedule_lifespans(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Assign each identity a [start, end] span inside one of the concurrent slots."""
    cursors = [0] * cfg.co_occurrence
    spans = []
    for ident in range(cfg.identities):
        slot = ident % cfg.co_occurrence
        length = int(rng.integers(cfg.lifespan[0], cfg.lifespan[1] + 1))
        start = cursors[slot]
        end = min(start + length, cfg.frames) - 1
        spans.append((start, end) if start < cfg.frames else (cfg.frames, cfg.frames - 1))
        cursors[slot] = start + length + int(rng.integers(0, 4))
    return spans


def generate(cfg: SynthConfig) -> tuple[list[DetectionRecord], list[TruthEntry]]:
    """Produce a frame-sorted detection stream plus exact per-frame ground truth.

    Ground truth lists every frame an identity is actually present, including
    detections that were dropped as false negatives; spurious detections never
    appear in the truth.
    """
    rng = np.random.default_rng(cfg.seed)
    centers = _identity_centers(cfg, rng)
    spans = _schedule_lifespans(cfg, rng)
    cw, ch = cfg.canvas
    bw, bh = cfg.box_size

    pos = np.zeros((cfg.identities, 2))
    for ident, (start, end) in enumerate(spans):
        pos[ident, 0] = rng.uniform(0, cw - bw)
        pos[ident, 1] = rng.uniform(0, ch - bh)

    records: list[DetectionRecord] = []
    truth: list[TruthEntry] = []
    for frame in range(cfg.frames):
        for ident in range(cfg.identities):
            start, end = spans[ident]
            if not start <= frame <= end:
                continue
            if frame > start:
                step = rng.normal(0.0, cfg.motion, size=2)
                pos[ident, 0] = float(np.clip(pos[ident, 0] + step[0], 0, cw - bw))
                pos[ident, 1] = float(np.clip(pos[ident, 1] + step[1], 0, ch - bh))
            box = Box2D(x=float(pos[ident, 0]), y=float(pos[ident, 1]), w=bw, h=bh)
            truth_id = f"id{ident:03d}"
            truth.append(TruthEntry(frame=frame, truth_id=truth_id, box=box))
            embedding = _perturb(centers[ident], cfg.noise_sigma, rng)
            dropped = cfg.fn_rate > 0.0 and rng.uniform() < cfg.fn_rate
            if dropped:
                continue
            records.append(DetectionRecord(
                frame=frame,
                cls=cfg.det_class,
                kind=KIND_DPO,
                box=box,
                score=float(rng.uniform(0.85, 1.0)),
                embedding=embedding,
                truth_id=truth_id,
            ))
        if cfg.fp_rate > 0.0 and rng.uniform() < cfg.fp_rate:
            records.append(DetectionRecord(
                frame=frame,
                cls=cfg.det_class,
                kind=KIND_DPO,
                box=Box2D(
                    x=float(rng.uniform(0, cw - bw)),
                    y=float(rng.uniform(0, ch - bh)),
                    w=bw,
                    h=bh,
                ),
                score=float(rng.uniform(0.5, 0.9)),
                embedding=_unit(rng.normal(size=cfg.embed_dim)),
                truth_id=FP_TRUTH_ID,
            ))
    return records, truth


def ground_truth_report(records: list[DetectionRecord]) -> dict:
    """Aggregate detection counts per identity and per frame from a stream."""
    per_identity: dict[str, int] = {}
    per_frame: dict[int, int] = {}
    total_fp = 0
    for rec in records:
        tid = rec.truth_id if rec.truth_id is not None else "unknown"
        if tid == FP_TRUTH_ID:
            total_fp += 1
        else:
            per_identity[tid] = per_identity.get(tid, 0) + 1
            per_frame[rec.frame] = per_frame.get(rec.frame, 0) + 1
    return {
        "per_identity": dict(sorted(per_identity.items())),
        "per_frame": {str(k): v for k, v in sorted(per_frame.items())},
        "total_true": sum(per_identity.values()),
        "total_fp": total_fp,
        "total_records": len(records),
    }
