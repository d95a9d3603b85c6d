"""Core stream data types, segment slicing, and the broadcast-lag arithmetic.

A live stream is cut into fixed-length segments of ``segment_len`` frames.
Buffering twice that length at the start of a broadcast gives every frame an
identical delay, so downstream processing gets one whole segment of context
without ever stalling playback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EngineError

KIND_IPO = "IPO"  # unconditionally sensitive; pixelated without clustering
KIND_DPO = "DPO"  # sensitivity depends on identity/content; clustered via embeddings
KINDS = (KIND_IPO, KIND_DPO)


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box: top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise EngineError(
                "stream/bad-box", f"box needs positive size, got w={self.w} h={self.h}"
            )

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """One detected object in one frame.

    ``embedding`` is mandatory for DPO records (their identity lives in
    feature space); IPO records carry none.  ``truth_id`` is evaluation-only
    ground truth and never influences processing.
    """

    frame: int
    cls: str
    kind: str
    box: Box2D
    score: float = 1.0
    embedding: np.ndarray | None = None
    payload_text: str | None = None
    truth_id: str | None = None

    def __post_init__(self):
        if self.frame < 0:
            raise EngineError("stream/bad-frame", f"negative frame {self.frame}")
        if self.kind not in KINDS:
            raise EngineError("stream/bad-kind", f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.score <= 1.0:
            raise EngineError("stream/bad-score", f"score outside [0,1]: {self.score}")
        if self.embedding is not None:
            object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=np.float64))
        if self.kind == KIND_DPO and (self.embedding is None or self.embedding.size == 0):
            raise EngineError("stream/missing-embedding", "DPO record requires an embedding")


@dataclass(frozen=True)
class Segment:
    """A fixed-length slice of the stream: frames [first_frame, last_frame]."""

    index: int
    first_frame: int
    last_frame: int
    records: tuple[DetectionRecord, ...] = ()

    def __post_init__(self):
        if self.last_frame < self.first_frame:
            raise EngineError("stream/bad-segment", "empty frame range")
        frames = [r.frame for r in self.records]
        if any(f < self.first_frame or f > self.last_frame for f in frames):
            raise EngineError("stream/bad-segment", "record outside segment frame range")
        if any(a > b for a, b in zip(frames, frames[1:])):
            raise EngineError("stream/bad-segment", "segment records not sorted by frame")

    @property
    def frame_range(self) -> tuple[int, int]:
        return (self.first_frame, self.last_frame)


@dataclass(frozen=True)
class StreamConfig:
    """Stream-level knobs; defaults are the reference operating point."""

    segment_len: int = 150
    fps: int = 30
    iou_eps: float = 0.7
    damping: float = 0.5

    def __post_init__(self):
        if self.segment_len <= 0:
            raise EngineError("stream/bad-config", f"segment_len must be positive, got {self.segment_len}")
        if self.fps <= 0:
            raise EngineError("stream/bad-config", f"fps must be positive, got {self.fps}")
        if not 0.0 < self.iou_eps < 1.0:
            raise EngineError("stream/bad-config", f"iou_eps must be in (0,1), got {self.iou_eps}")
        if not 0.0 <= self.damping < 1.0:
            raise EngineError("stream/bad-config", f"damping must be in [0,1), got {self.damping}")


def segment_stream(records: list[DetectionRecord], segment_len: int) -> list[Segment]:
    """Partition frame-sorted records into consecutive fixed-length segments.

    Segment ``q`` always covers frames ``[q*segment_len, (q+1)*segment_len - 1]``;
    segments with no detections are still emitted so that smoothing windows and
    the lag model index real time, not detection density.
    """
    if segment_len <= 0:
        raise EngineError("stream/bad-config", f"segment_len must be positive, got {segment_len}")
    for i, rec in enumerate(records):
        if rec.frame < 0:
            raise EngineError("stream/bad-frame", f"record {i} has negative frame {rec.frame}")
        if i > 0 and rec.frame < records[i - 1].frame:
            raise EngineError(
                "stream/unsorted",
                f"records not sorted by frame: record {i} (frame {rec.frame}) "
                f"follows record {i - 1} (frame {records[i - 1].frame})",
            )
    if not records:
        return []
    last = records[-1].frame
    n_segments = last // segment_len + 1
    buckets: list[list[DetectionRecord]] = [[] for _ in range(n_segments)]
    for rec in records:
        buckets[rec.frame // segment_len].append(rec)
    return [
        Segment(
            index=q,
            first_frame=q * segment_len,
            last_frame=(q + 1) * segment_len - 1,
            records=tuple(bucket),
        )
        for q, bucket in enumerate(buckets)
    ]


def broadcast_frame(frame: int, segment_len: int, fps: int = 30) -> int:
    """Frame number at which ``frame`` reaches the audience.

    The segment holding ``frame`` is dispatched once complete (at frame
    ``(frame//segment_len + 1) * segment_len``), takes one segment-length to
    process, and the residual offset within the segment closes the gap.  The
    lag is the same two segment-lengths for every frame; ``fps`` only converts
    it to seconds and cancels out of the frame arithmetic.
    """
    if frame < 0:
        raise EngineError("stream/bad-frame", f"negative frame {frame}")
    if segment_len <= 0 or fps <= 0:
        raise EngineError("stream/bad-config", "segment_len and fps must be positive")
    dispatched = (frame // segment_len + 1) * segment_len
    processed = dispatched + segment_len
    residual = frame - (frame // segment_len) * segment_len
    return processed + residual
