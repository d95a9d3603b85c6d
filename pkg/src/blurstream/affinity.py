"""Cosine similarity construction and exemplar message passing.

Clustering is exemplar-based: responsibility messages (how strongly node i
wants k as its exemplar) and availability messages (how strongly k can serve)
are exchanged until the exemplar choice stabilizes.  The cluster count is not
fixed up front; it falls out of the preference written on the diagonal.

Detections that share a frame cannot be the same physical object, so their
similarity is pinned to a penalty value and their availability accumulation
actively repels them.  With no shared frames both updates reduce exactly to
the classic rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EngineError
from .stream import DetectionRecord


@dataclass(frozen=True)
class ApParams:
    """Solver knobs.

    ``preference=None`` uses the median of the off-diagonal similarities that
    were not pinned by the same-frame rule; a float fixes the diagonal.
    """

    damping: float = 0.5
    max_iter: int = 200
    conv_window: int = 15
    preference: float | None = None
    same_frame_penalty: float = -1.0

    def __post_init__(self):
        if not 0.0 <= self.damping < 1.0:
            raise EngineError("affinity/bad-params", f"damping must be in [0,1), got {self.damping}")
        if self.max_iter <= 0 or self.conv_window <= 0:
            raise EngineError("affinity/bad-params", "max_iter and conv_window must be positive")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise similarities with the preference on the diagonal."""

    s: np.ndarray
    frame_of: np.ndarray
    preference: float

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class MessageState:
    """Responsibility and availability matrices after ``iteration`` sweeps."""

    r: np.ndarray
    a: np.ndarray
    iteration: int = 0


@dataclass(frozen=True)
class ClusterResult:
    """Exemplar decisions: ``exemplar_of[i]`` is the exemplar node of i."""

    exemplar_of: np.ndarray
    clusters: dict[int, list[int]]
    converged: bool = True
    iterations: int = 0
    purity_inputs: dict[int, str] | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def labels(self) -> np.ndarray:
        return self.exemplar_of.copy()


def _unit_embeddings(records: list[DetectionRecord]) -> np.ndarray:
    if not records:
        raise EngineError("affinity/empty", "need at least one record")
    dim = None
    rows = []
    for i, rec in enumerate(records):
        if rec.embedding is None:
            raise EngineError("affinity/missing-embedding", f"record {i} has no embedding")
        e = np.asarray(rec.embedding, dtype=np.float64)
        if dim is None:
            dim = e.size
        elif e.size != dim:
            raise EngineError(
                "affinity/dim-mismatch",
                f"record {i} embedding has dimension {e.size}, expected {dim}",
            )
        norm = float(np.linalg.norm(e))
        if norm == 0.0 or not np.isfinite(norm):
            raise EngineError("affinity/zero-norm-embedding", f"record {i} embedding is degenerate")
        rows.append(e / norm)
    return np.vstack(rows)


def _build_similarity(records, params: ApParams, positioned: bool) -> SimilarityMatrix:
    emb = _unit_embeddings(records)
    n = emb.shape[0]
    s = np.clip(emb @ emb.T, -1.0, 1.0) - 1.0
    if positioned:
        frames = np.asarray([r.frame for r in records], dtype=np.int64)
        forced = frames[:, None] == frames[None, :]
    else:
        # surrogate distinct frames: the same-frame rule never fires
        frames = np.arange(n, dtype=np.int64)
        forced = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(forced, False)
    s[forced] = params.same_frame_penalty
    off_diag = ~np.eye(n, dtype=bool)
    free = off_diag & ~forced
    if params.preference is not None:
        pref = float(params.preference)
    elif free.any():
        pref = float(np.median(s[free]))
    else:
        pref = params.same_frame_penalty
    np.fill_diagonal(s, pref)
    return SimilarityMatrix(s=s, frame_of=frames, preference=pref)


def positioned_similarity(records: list[DetectionRecord], params: ApParams | None = None) -> SimilarityMatrix:
    """Cosine-minus-one similarities with same-frame pairs pinned to the penalty.

    Embeddings are unit-normalized before the dot product, so off-diagonal
    entries live in [-2, 0].  Detections sharing a frame get exactly the
    penalty value regardless of their embeddings.
    """
    return _build_similarity(records, params or ApParams(), positioned=True)


def plain_similarity(records: list[DetectionRecord], params: ApParams | None = None) -> SimilarityMatrix:
    """Same cosine construction with the position rule disabled (classic mode)."""
    return _build_similarity(records, params or ApParams(), positioned=False)


def update_responsibilities(sim: SimilarityMatrix, state: MessageState, damping: float) -> MessageState:
    """One damped responsibility sweep; all candidates use pre-sweep values."""
    s, a = sim.s, state.a
    n = sim.n
    if n == 1:
        r_star = s.copy()
    else:
        comp = a + s
        rows = np.arange(n)
        top = np.argmax(comp, axis=1)
        best = comp[rows, top]
        comp2 = comp.copy()
        comp2[rows, top] = -np.inf
        second = comp2.max(axis=1)
        r_star = s - best[:, None]
        r_star[rows, top] = s[rows, top] - second
    r_new = damping * state.r + (1.0 - damping) * r_star
    return MessageState(r=r_new, a=state.a, iteration=state.iteration)


def update_availabilities(sim: SimilarityMatrix, state: MessageState, damping: float) -> MessageState:
    """One damped availability sweep with same-frame repulsion.

    Positive responsibilities of a node's same-frame peers are dropped from
    the evidence sum and subtracted once more, so a peer's pull on an exemplar
    pushes this node away from it.  With every node on its own frame this is
    entry-for-entry the classic update.
    """
    r = state.r
    n = sim.n
    rp = np.maximum(r, 0.0)  # positive parts, diagonal kept
    diag_rp = rp.diagonal().copy()
    col_pos = rp.sum(axis=0) - diag_rp  # positive mass per column, diagonal excluded

    # A row's frame group is removed from the evidence once (exclusion from the
    # sum) and subtracted once more (repulsion), so off-diagonal entries of the
    # group sum count double while the column's own diagonal counts once.
    doubled = rp + rp
    idx = np.arange(n)
    doubled[idx, idx] = diag_rp
    _, inv = np.unique(sim.frame_of, return_inverse=True)
    if np.all(np.diff(inv) >= 0):
        starts = np.flatnonzero(np.r_[True, np.diff(inv) > 0])
        counts = np.diff(np.r_[starts, n])
        acc = np.add.reduceat(doubled, starts, axis=0)
        group_sum = np.repeat(acc, counts, axis=0)
    else:
        order = np.argsort(inv, kind="stable")
        inv_sorted = inv[order]
        starts = np.flatnonzero(np.r_[True, np.diff(inv_sorted) > 0])
        acc = np.add.reduceat(doubled[order], starts, axis=0)
        group_sum = acc[inv]

    a_star = r.diagonal()[None, :] + col_pos[None, :] + rp - group_sum
    np.minimum(a_star, 0.0, out=a_star)
    a_star[idx, idx] = col_pos
    a_new = damping * state.a + (1.0 - damping) * a_star
    return MessageState(r=state.r, a=a_new, iteration=state.iteration)


def _exemplar_indicator(sim: SimilarityMatrix, state: MessageState) -> np.ndarray:
    c = state.r + state.a
    return np.argmax(c, axis=1) == np.arange(sim.n)


def criterion_and_exemplars(sim: SimilarityMatrix, state: MessageState,
                            converged: bool = True) -> ClusterResult:
    """Read exemplars off the criterion matrix and finalize assignments.

    A node whose criterion-row argmax is itself becomes an exemplar (ties go
    to the lowest column); if nobody self-selects, the best self-criterion
    node is promoted.  Every other node then takes the most similar exemplar
    still free for its frame: one physical object cannot appear twice in a
    frame, so two nodes of one frame never share a cluster and an exemplar
    from the node's own frame is never eligible.  A node left with no
    eligible exemplar becomes a singleton.  Nodes are served in index order,
    so contested slots go to the lowest index.
    """
    n = sim.n
    c = state.r + state.a
    rows = np.arange(n)
    self_best = np.argmax(c, axis=1) == rows
    exemplars = np.flatnonzero(self_best)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(c.diagonal()))])

    sim_to_ex = sim.s[:, exemplars].copy()
    same_frame = sim.frame_of[:, None] == sim.frame_of[exemplars][None, :]
    same_frame[exemplars, np.arange(exemplars.size)] = False  # a node may keep itself
    sim_to_ex[same_frame] = -np.inf
    preference_order = np.argsort(-sim_to_ex, axis=1, kind="stable")

    pick = np.empty(n, dtype=np.int64)
    taken: dict[int, set[int]] = {}
    is_exemplar = np.zeros(n, dtype=bool)
    is_exemplar[exemplars] = True
    for e in exemplars:
        pick[e] = e
        taken.setdefault(int(sim.frame_of[e]), set()).add(int(e))
    for i in range(n):
        if is_exemplar[i]:
            continue
        used = taken.setdefault(int(sim.frame_of[i]), set())
        chosen = -1
        for j in preference_order[i]:
            if np.isneginf(sim_to_ex[i, j]):
                break  # descending order: everything after is ineligible too
            e = int(exemplars[j])
            if e not in used:
                chosen = e
                break
        if chosen < 0:
            chosen = i  # every exemplar shares the frame or is taken: singleton
        pick[i] = chosen
        used.add(chosen)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(int(pick[i]), []).append(i)
    return ClusterResult(
        exemplar_of=pick,
        clusters=clusters,
        converged=converged,
        iterations=state.iteration,
    )


def run_propagation(sim: SimilarityMatrix, params: ApParams | None = None,
                    init_state: MessageState | None = None) -> tuple[MessageState, ClusterResult]:
    """Alternate responsibility/availability sweeps until the exemplar set holds.

    Convergence means the set of self-selecting nodes is unchanged for
    ``conv_window`` consecutive sweeps; hitting ``max_iter`` first yields a
    result flagged as not converged rather than an error.
    """
    params = params or ApParams()
    n = sim.n
    if init_state is None:
        zero = np.zeros((n, n))
        state = MessageState(r=zero.copy(), a=zero.copy(), iteration=0)
    else:
        state = init_state
    if n == 1:
        state = MessageState(r=state.r, a=state.a, iteration=1)
        return state, criterion_and_exemplars(sim, state)

    indicator = _exemplar_indicator(sim, state)
    stable = 0
    converged = False
    for it in range(1, params.max_iter + 1):
        state = update_responsibilities(sim, state, params.damping)
        state = update_availabilities(sim, state, params.damping)
        state = MessageState(r=state.r, a=state.a, iteration=it)
        current = _exemplar_indicator(sim, state)
        if np.array_equal(current, indicator):
            stable += 1
        else:
            stable = 0
            indicator = current
        if stable >= params.conv_window:
            converged = True
            break
    return state, criterion_and_exemplars(sim, state, converged=converged)


def with_purity_inputs(result: ClusterResult, truth_ids: dict[int, str]) -> ClusterResult:
    """Attach node -> ground-truth identity for purity bookkeeping."""
    return replace(result, purity_inputs=dict(truth_ids))
