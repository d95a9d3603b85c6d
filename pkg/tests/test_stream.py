import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blurstream.errors import EngineError
from blurstream.stream import (
    KIND_DPO,
    KIND_IPO,
    Box2D,
    DetectionRecord,
    StreamConfig,
    broadcast_frame,
    segment_stream,
)


def rec(frame, x=0.0):
    return DetectionRecord(frame=frame, cls="plate", kind=KIND_IPO, box=Box2D(x, 0, 10, 10))


class TestBox2D:
    def test_positive_size_required(self):
        with pytest.raises(EngineError):
            Box2D(0, 0, 0, 5)
        with pytest.raises(EngineError):
            Box2D(0, 0, 5, -1)

    def test_area(self):
        assert Box2D(1, 2, 3, 4).area == 12


class TestDetectionRecord:
    def test_dpo_requires_embedding(self):
        with pytest.raises(EngineError):
            DetectionRecord(frame=0, cls="face", kind=KIND_DPO, box=Box2D(0, 0, 1, 1))

    def test_embedding_coerced_to_float64(self):
        r = DetectionRecord(frame=0, cls="face", kind=KIND_DPO, box=Box2D(0, 0, 1, 1),
                            embedding=[1, 2, 3])
        assert r.embedding.dtype == np.float64

    def test_bad_kind_and_score(self):
        with pytest.raises(EngineError):
            DetectionRecord(frame=0, cls="x", kind="OTHER", box=Box2D(0, 0, 1, 1))
        with pytest.raises(EngineError):
            rec(0).__class__(frame=0, cls="x", kind=KIND_IPO, box=Box2D(0, 0, 1, 1), score=1.5)


class TestStreamConfig:
    def test_defaults(self):
        cfg = StreamConfig()
        assert (cfg.segment_len, cfg.fps, cfg.iou_eps, cfg.damping) == (150, 30, 0.7, 0.5)

    def test_validation(self):
        with pytest.raises(EngineError):
            StreamConfig(segment_len=0)
        with pytest.raises(EngineError):
            StreamConfig(iou_eps=1.0)
        with pytest.raises(EngineError):
            StreamConfig(damping=1.0)


class TestSegmentStream:
    def test_exact_division(self):
        records = [rec(f) for f in range(300)]
        segments = segment_stream(records, 150)
        assert len(segments) == 2
        assert segments[0].frame_range == (0, 149)
        assert segments[1].frame_range == (150, 299)

    def test_boundary_frame_starts_new_segment(self):
        records = [rec(f) for f in range(151)]
        segments = segment_stream(records, 150)
        assert len(segments) == 2
        assert [r.frame for r in segments[1].records] == [150]

    def test_sparse_records_bucketed_by_enumeration(self):
        # oracle: qN <= f < (q+1)N decides the bucket
        records = [rec(0), rec(151)]
        segments = segment_stream(records, 150)
        assert len(segments) == 2
        assert len(segments[0].records) == 1
        assert len(segments[1].records) == 1

    def test_gap_segments_emitted_empty(self):
        records = [rec(0), rec(450)]
        segments = segment_stream(records, 150)
        assert len(segments) == 4
        assert [len(s.records) for s in segments] == [1, 0, 0, 1]
        assert [s.index for s in segments] == [0, 1, 2, 3]

    def test_unsorted_rejected_with_index(self):
        records = [rec(5), rec(9), rec(7)]
        with pytest.raises(EngineError) as err:
            segment_stream(records, 150)
        assert "record 2" in str(err.value)

    def test_empty_input(self):
        assert segment_stream([], 150) == []

    @given(st.lists(st.integers(min_value=0, max_value=2000), min_size=0, max_size=60),
           st.integers(min_value=1, max_value=300))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, frames, n):
        records = [rec(f) for f in sorted(frames)]
        segments = segment_stream(records, n)
        flattened = [r for s in segments for r in s.records]
        assert flattened == records
        for s in segments:
            assert s.last_frame - s.first_frame + 1 == n
            assert all(s.first_frame <= r.frame <= s.last_frame for r in s.records)


class TestBroadcastFrame:
    def test_first_frame(self):
        assert broadcast_frame(0, 150) == 300

    def test_last_frame_of_segment(self):
        # schedule oracle: dispatch at (f//N + 1)*N, process N, add residual
        f, n = 149, 150
        expected = (f // n + 1) * n + n + (f - (f // n) * n)
        assert expected == 449
        assert broadcast_frame(f, n) == expected

    def test_segment_boundary(self):
        f, n = 150, 150
        expected = (f // n + 1) * n + n + (f - (f // n) * n)
        assert expected == 450
        assert broadcast_frame(f, n) == expected

    def test_constant_lag_sweep(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            f = int(rng.integers(0, 10_000_000))
            n = int(rng.integers(1, 1000))
            assert broadcast_frame(f, n) - f == 2 * n

    def test_negative_frame_rejected(self):
        with pytest.raises(EngineError):
            broadcast_frame(-1, 150)
