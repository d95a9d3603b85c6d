"""Segment-to-segment incremental clustering with warm-started messages.

Each new segment's nodes inherit the responsibility/availability rows and
columns of their most similar node from the previous state instead of
starting from zero, so the solver only has to refine an almost-converged
consensus.  A retention window keeps the matrices bounded over long streams:
old nodes are dropped (their final cluster assignment is frozen into the
history) while live exemplars always stay.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .affinity import (
    ApParams,
    ClusterResult,
    MessageState,
    SimilarityMatrix,
    criterion_and_exemplars,
    positioned_similarity,
    run_propagation,
)
from .errors import EngineError
from .stream import DetectionRecord


@dataclass
class IncrementalState:
    """Mutable clustering state carried across segments (one per DPO class)."""

    params: ApParams = field(default_factory=ApParams)
    window: int | None = 4
    records: list[DetectionRecord] = field(default_factory=list)
    global_ids: list[int] = field(default_factory=list)
    segment_of: list[int] = field(default_factory=list)
    messages: MessageState | None = None
    result: ClusterResult | None = None
    lineage: dict[int, int] = field(default_factory=dict)  # global id -> lineage
    history: list[tuple[DetectionRecord, int]] = field(default_factory=list)
    m_prev: int = 0
    segment_index: int = -1
    next_global_id: int = 0
    next_lineage_id: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.records)

    def assignments(self) -> list[tuple[DetectionRecord, int]]:
        """Every node ever seen with its (current or frozen) lineage."""
        out = list(self.history)
        out.extend((rec, self.lineage[gid]) for rec, gid in zip(self.records, self.global_ids))
        return out

    def lineage_members(self) -> dict[int, list[DetectionRecord]]:
        members: dict[int, list[DetectionRecord]] = {}
        for rec, lin in self.assignments():
            members.setdefault(lin, []).append(rec)
        return members


def nearest_predecessor(embedding: np.ndarray, state: IncrementalState) -> int | None:
    """Index of the retained node most similar to ``embedding`` (ties: lowest).

    Returns None when nothing is retained, telling the caller to fall back to
    zero initialization.
    """
    if not state.records:
        return None
    e = np.asarray(embedding, dtype=np.float64)
    norm = float(np.linalg.norm(e))
    if norm == 0.0:
        raise EngineError("incremental/zero-norm-embedding", "degenerate query embedding")
    old = np.vstack([r.embedding / np.linalg.norm(r.embedding) for r in state.records])
    return int(np.argmax(old @ (e / norm)))


def extend_messages(state: IncrementalState, sim: SimilarityMatrix) -> MessageState:
    """Grow the message matrices to cover new nodes appended after ``m_prev``.

    The old block is copied unchanged; a new node's rows/columns against old
    nodes replicate those of its nearest predecessor (the old node most
    similar to it); the new-new block starts at zero.
    """
    assert state.messages is not None
    m = len(state.records)
    total = sim.n
    fresh = total - m
    if fresh == 0:
        return state.messages
    pred = np.empty(fresh, dtype=np.int64)
    for j in range(fresh):
        pred[j] = int(np.argmax(sim.s[m + j, :m]))
    r = np.zeros((total, total))
    a = np.zeros((total, total))
    for mat, old in ((r, state.messages.r), (a, state.messages.a)):
        mat[:m, :m] = old
        mat[m:, :m] = old[pred, :]
        mat[:m, m:] = old[:, pred]
    return MessageState(r=r, a=a, iteration=0)


def _assign_lineages(state: IncrementalState, result: ClusterResult,
                     combined_gids: list[int]) -> dict[int, int]:
    """Propagate lineage ids onto the new clusters by member majority vote."""
    claims = []
    for ex in sorted(result.clusters):
        votes = Counter(
            state.lineage[combined_gids[i]]
            for i in result.clusters[ex]
            if combined_gids[i] in state.lineage
        )
        if votes:
            best = max(votes.items(), key=lambda kv: (kv[1], -kv[0]))
            claims.append((ex, best[0], best[1]))
        else:
            claims.append((ex, None, 0))
    granted: dict[int, int] = {}
    taken: set[int] = set()
    for ex, lin, count in sorted(claims, key=lambda t: (-t[2], t[0])):
        if lin is not None and lin not in taken:
            granted[ex] = lin
            taken.add(lin)
    for ex in sorted(result.clusters):
        if ex not in granted:
            granted[ex] = state.next_lineage_id
            state.next_lineage_id += 1
    new_lineage: dict[int, int] = {}
    for ex, members in result.clusters.items():
        for i in members:
            new_lineage[combined_gids[i]] = granted[ex]
    return new_lineage


def prune_state(state: IncrementalState, window: int | None = None) -> IncrementalState:
    """Drop nodes older than the retention window, keeping every live exemplar.

    Dropped nodes freeze their current lineage into the history; the message
    matrices shrink to the retained index set.
    """
    window = state.window if window is None else window
    if window is None or state.result is None or not state.records:
        state.m_prev = state.n_nodes
        return state
    cutoff = state.segment_index - window + 1
    exemplar_locals = set(state.result.clusters.keys())
    keep = [
        i
        for i in range(state.n_nodes)
        if state.segment_of[i] >= cutoff or i in exemplar_locals
    ]
    if len(keep) == state.n_nodes:
        state.m_prev = state.n_nodes
        return state
    keep_set = set(keep)
    remap = {old: new for new, old in enumerate(keep)}
    for i in range(state.n_nodes):
        if i not in keep_set:
            gid = state.global_ids[i]
            state.history.append((state.records[i], state.lineage.pop(gid)))
    idx = np.asarray(keep, dtype=np.int64)
    state.records = [state.records[i] for i in keep]
    state.global_ids = [state.global_ids[i] for i in keep]
    state.segment_of = [state.segment_of[i] for i in keep]
    if state.messages is not None:
        state.messages = MessageState(
            r=state.messages.r[np.ix_(idx, idx)],
            a=state.messages.a[np.ix_(idx, idx)],
            iteration=state.messages.iteration,
        )
    clusters = {
        remap[ex]: [remap[i] for i in members if i in keep_set]
        for ex, members in state.result.clusters.items()
    }
    exemplar_of = np.asarray([remap[int(state.result.exemplar_of[i])] for i in keep], dtype=np.int64)
    state.result = ClusterResult(
        exemplar_of=exemplar_of,
        clusters=clusters,
        converged=state.result.converged,
        iterations=state.result.iterations,
    )
    state.m_prev = state.n_nodes
    return state


def advance_segment(state: IncrementalState, records: list[DetectionRecord],
                    segment_index: int) -> IncrementalState:
    """Fold one segment's records into the state and re-run message passing."""
    state.segment_index = segment_index
    if not records:
        state.m_prev = state.n_nodes
        return state
    m = state.n_nodes
    combined = state.records + list(records)
    new_gids = list(range(state.next_global_id, state.next_global_id + len(records)))
    state.next_global_id += len(records)
    combined_gids = state.global_ids + new_gids

    sim = positioned_similarity(combined, state.params)
    if m == 0 or state.messages is None:
        init = None
    else:
        init = extend_messages(state, sim)
    state.records = combined
    state.global_ids = combined_gids
    state.segment_of = state.segment_of + [segment_index] * len(records)
    messages, result = run_propagation(sim, state.params, init_state=init)
    state.messages = messages
    state.lineage = _assign_lineages(state, result, combined_gids)
    state.result = result
    return prune_state(state)


def init_from_segment(records: list[DetectionRecord], params: ApParams | None = None,
                      window: int | None = 4) -> IncrementalState:
    """Build a fresh state from the first segment (may be empty)."""
    state = IncrementalState(params=params or ApParams(), window=window)
    return advance_segment(state, records, segment_index=0)
