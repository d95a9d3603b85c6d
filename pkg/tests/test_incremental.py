import numpy as np
import pytest
from dataclasses import replace

from oracles import partition_by, same_frame_violations

from blurstream.affinity import ApParams, positioned_similarity, run_propagation
from blurstream.incremental import (
    IncrementalState,
    advance_segment,
    extend_messages,
    init_from_segment,
    nearest_predecessor,
    prune_state,
)
from blurstream.metrics import purity
from blurstream.stream import KIND_DPO, Box2D, DetectionRecord, segment_stream
from blurstream.synth import SynthConfig, generate


def make_record(frame, embedding, truth=None):
    return DetectionRecord(frame=frame, cls="face", kind=KIND_DPO,
                           box=Box2D(0, 0, 10, 10),
                           embedding=np.asarray(embedding, dtype=float), truth_id=truth)


def identity_records(rng, centers, frames, jitter=0.02, frame_offset=0):
    """One detection per identity per frame, identities on distinct rows."""
    out = []
    for f in frames:
        for ident, center in enumerate(centers):
            v = np.asarray(center, float) + rng.normal(0, jitter, len(center))
            out.append(make_record(f + frame_offset, v, truth=f"id{ident}"))
    return out


def batch_partition(records, params=None):
    sim = positioned_similarity(records, params or ApParams())
    _, result = run_propagation(sim, params or ApParams())
    keys = [(r.frame, r.truth_id) for r in records]
    return partition_by(keys, result.exemplar_of.tolist())


def state_partition(state):
    pairs = state.assignments()
    keys = [(rec.frame, rec.truth_id) for rec, _ in pairs]
    return partition_by(keys, [lin for _, lin in pairs])


class TestInitFromSegment:
    def test_single_identity_single_cluster(self):
        # one identity detected five times; the propagation oracle on the same
        # five nodes is the reference outcome
        records = [make_record(f, np.eye(4)[0], truth="id0") for f in range(5)]
        state = init_from_segment(records)
        sim = positioned_similarity(records, ApParams())
        _, oracle = run_propagation(sim, ApParams())
        assert oracle.n_clusters == 1
        assert state.result.n_clusters == 1
        assert state.n_nodes == 5

    def test_empty_segment_gives_empty_state(self):
        state = init_from_segment([])
        assert state.n_nodes == 0
        assert state.result is None
        # the next segment can still initialize it
        advance_segment(state, [make_record(f, np.eye(4)[0]) for f in range(3)], 1)
        assert state.result.n_clusters == 1

    def test_same_frame_records_split(self):
        records = [make_record(0, [1, 0, 0]), make_record(0, [1, 0, 0])]
        state = init_from_segment(records)
        assert state.result.n_clusters == 2


class TestNearestPredecessor:
    def setup_method(self):
        self.state = IncrementalState()
        basis = np.eye(4)
        self.state.records = [make_record(f, basis[f]) for f in range(4)]
        self.state.global_ids = [0, 1, 2, 3]
        self.state.segment_of = [0, 0, 0, 0]

    def test_identical_embedding_wins(self):
        assert nearest_predecessor(np.eye(4)[3], self.state) == 3

    def test_tie_breaks_to_lowest_index(self):
        state = IncrementalState()
        state.records = [make_record(0, [1, 0]), make_record(1, [1, 0])]
        state.global_ids = [0, 1]
        state.segment_of = [0, 0]
        assert nearest_predecessor(np.array([0.0, 1.0]), state) == 0

    def test_cosine_ordering(self):
        state = IncrementalState()
        state.records = [
            make_record(0, [1.0, 0.0]),
            make_record(1, [np.cos(0.45), np.sin(0.45)]),  # cos ~0.9 to query
            make_record(2, [np.cos(1.37), np.sin(1.37)]),  # cos ~0.2 to query
        ]
        state.global_ids = [0, 1, 2]
        state.segment_of = [0, 0, 0]
        query = np.array([np.cos(0.45), np.sin(0.45)])
        assert nearest_predecessor(query, state) == 1

    def test_no_old_nodes_signals_none(self):
        assert nearest_predecessor(np.array([1.0, 0.0]), IncrementalState()) is None


class TestExtendMessages:
    def test_blocks(self):
        rng = np.random.default_rng(2)
        old = identity_records(rng, list(np.eye(4)[:3]), range(4))  # 12 nodes
        state = init_from_segment(old, window=None)
        m = state.n_nodes
        r_prev = state.messages.r.copy()
        a_prev = state.messages.a.copy()

        new = [make_record(10, np.eye(4)[2] + 0.01)]  # nearest predecessor: identity 2
        combined = state.records + new
        sim = positioned_similarity(combined, state.params)
        ext = extend_messages(state, sim)

        assert np.array_equal(ext.r[:m, :m], r_prev)
        assert np.array_equal(ext.a[:m, :m], a_prev)
        assert np.all(ext.r[m:, m:] == 0.0)
        assert np.all(ext.a[m:, m:] == 0.0)

        pred = int(np.argmax(sim.s[m, :m]))
        assert np.array_equal(ext.r[m, :m], r_prev[pred, :])
        assert np.array_equal(ext.r[:m, m], r_prev[:, pred])
        assert np.array_equal(ext.a[m, :m], a_prev[pred, :])
        assert np.array_equal(ext.a[:m, m], a_prev[:, pred])


class TestAdvanceSegment:
    def test_same_identities_absorbed(self):
        rng = np.random.default_rng(3)
        centers = list(np.eye(6)[:2])
        seg0 = identity_records(rng, centers, range(8))
        seg1 = identity_records(rng, centers, range(8), frame_offset=10)
        state = init_from_segment(seg0, window=None)
        assert state.result.n_clusters == 2
        advance_segment(state, seg1, 1)
        assert state.result.n_clusters == 2
        assert state_partition(state) == batch_partition(seg0 + seg1)

    def test_new_identity_adds_cluster(self):
        rng = np.random.default_rng(4)
        centers = np.eye(6)
        seg0 = identity_records(rng, list(centers[:2]), range(8))
        state = init_from_segment(seg0, window=None)
        newcomer = [make_record(12 + i, centers[5] + rng.normal(0, 0.02, 6), truth="id5")
                    for i in range(6)]
        advance_segment(state, newcomer, 1)
        assert state.result.n_clusters == 3

    def test_empty_segment_only_moves_counter(self):
        rng = np.random.default_rng(5)
        state = init_from_segment(identity_records(rng, [np.eye(3)[0]], range(5)), window=None)
        before = state_partition(state)
        advance_segment(state, [], 1)
        assert state.segment_index == 1
        assert state_partition(state) == before

    def test_lineage_stable_across_segments(self):
        rng = np.random.default_rng(6)
        centers = list(np.eye(5)[:2])
        state = init_from_segment(identity_records(rng, centers, range(8)), window=None)
        lineage_by_truth = {}
        for rec, lin in state.assignments():
            lineage_by_truth.setdefault(rec.truth_id, set()).add(lin)
        advance_segment(state, identity_records(rng, centers, range(8), frame_offset=10), 1)
        after = {}
        for rec, lin in state.assignments():
            after.setdefault(rec.truth_id, set()).add(lin)
        assert after == lineage_by_truth

    def test_same_frame_exclusion_across_segments(self):
        rng = np.random.default_rng(7)
        centers = list(np.eye(5)[:3])
        state = init_from_segment(identity_records(rng, centers, range(6)), window=None)
        advance_segment(state, identity_records(rng, centers, range(6), frame_offset=6), 1)
        frames = [r.frame for r in state.records]
        assert same_frame_violations(frames, state.result.clusters) == 0


class TestPruneState:
    def build(self, window, n_segments=5, rng_seed=8):
        rng = np.random.default_rng(rng_seed)
        centers = list(np.eye(6)[:2])
        state = IncrementalState(params=ApParams(), window=window)
        for q in range(n_segments):
            recs = identity_records(rng, centers, range(6), frame_offset=10 * q)
            advance_segment(state, recs, q)
        return state

    def test_unbounded_window_is_identity(self):
        state = self.build(window=None)
        assert state.n_nodes == 60
        assert state.history == []

    def test_window_drops_old_non_exemplars(self):
        state = self.build(window=4)
        exemplar_segments = {state.segment_of[e] for e in state.result.clusters}
        # nodes from segment 0 are gone unless they are live exemplars
        old_retained = [i for i in range(state.n_nodes) if state.segment_of[i] == 0]
        assert all(i in state.result.clusters for i in old_retained)
        assert len(state.history) > 0
        assert state.m_prev == state.n_nodes

    def test_pruned_run_matches_unpruned_partition_on_retained(self):
        pruned = self.build(window=4, rng_seed=9)
        full = self.build(window=None, rng_seed=9)
        retained_keys = {(r.frame, r.truth_id) for r in pruned.records}
        def restrict(partition):
            return {frozenset(k for k in group if k in retained_keys)
                    for group in partition if group & retained_keys}
        assert restrict(state_partition(pruned)) == restrict(state_partition(full))

    def test_history_assignments_never_flip(self):
        state = self.build(window=2, rng_seed=10)
        frozen = {id(rec): lin for rec, lin in state.history}
        rng = np.random.default_rng(11)
        advance_segment(state, identity_records(rng, list(np.eye(6)[:2]), range(6),
                                                frame_offset=100), state.segment_index + 1)
        for rec, lin in state.history:
            if id(rec) in frozen:
                assert frozen[id(rec)] == lin


class TestPurityParity:
    def test_incremental_matches_batch_on_synthetic_streams(self):
        # scaled-down version of the long-stream parity check
        gaps = []
        for seed in range(5):
            cfg = SynthConfig(seed=seed, identities=3, lifespan=(40, 80), frames=150,
                              embed_dim=16, noise_sigma=0.15, co_occurrence=2)
            records, _ = generate(cfg)
            state = IncrementalState(params=ApParams(), window=4)
            for segment in segment_stream(records, 30):
                advance_segment(state, list(segment.records), segment.index)
            pairs = state.assignments()
            inc = purity([lin for _, lin in pairs], [rec.truth_id for rec, _ in pairs])
            sim = positioned_similarity(records, ApParams())
            _, result = run_propagation(sim, ApParams())
            batch = purity(result.exemplar_of.tolist(), [r.truth_id for r in records])
            gaps.append(abs(inc - batch))
        assert float(np.mean(gaps)) <= 0.02
