"""Independent reference implementations used to cross-check the engine.

Everything here is written as plain loops straight from the update rules and
stays deliberately independent of the vectorized production code paths.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np


def naive_responsibility(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Candidate responsibilities, row by row."""
    n = s.shape[0]
    r = np.empty_like(s)
    for i in range(n):
        for k in range(n):
            rivals = [a[i, kk] + s[i, kk] for kk in range(n) if kk != k]
            r[i, k] = s[i, k] - max(rivals)
    return r


def naive_availability(r: np.ndarray, frames=None) -> np.ndarray:
    """Candidate availabilities; ``frames=None`` means all frames distinct."""
    n = r.shape[0]
    if frames is None:
        frames = list(range(n))
    a = np.empty_like(r)
    for k in range(n):
        a[k, k] = sum(max(0.0, r[ii, k]) for ii in range(n) if ii != k)
    for i in range(n):
        peers = {jj for jj in range(n) if frames[jj] == frames[i] and jj != i}
        for k in range(n):
            if i == k:
                continue
            evidence = sum(
                max(0.0, r[ii, k])
                for ii in range(n)
                if ii != i and ii != k and ii not in peers
            )
            repulsion = sum(max(0.0, r[ii, k]) for ii in peers)
            a[i, k] = min(0.0, r[k, k] + evidence - repulsion)
    return a


def naive_availability_row_order(r: np.ndarray, frames, row_order) -> np.ndarray:
    """Same update evaluated in an arbitrary row order (must not matter)."""
    n = r.shape[0]
    a = np.zeros_like(r)
    for k in range(n):
        a[k, k] = sum(max(0.0, r[ii, k]) for ii in range(n) if ii != k)
    for i in row_order:
        peers = {jj for jj in range(n) if frames[jj] == frames[i] and jj != i}
        for k in range(n):
            if i == k:
                continue
            evidence = sum(
                max(0.0, r[ii, k])
                for ii in range(n)
                if ii != i and ii != k and ii not in peers
            )
            repulsion = sum(max(0.0, r[ii, k]) for ii in peers)
            a[i, k] = min(0.0, r[k, k] + evidence - repulsion)
    return a


def brute_force_best_total_iou(weights: np.ndarray) -> float:
    """Max total weight over all one-to-one assignments (zeros = non-edges)."""
    n_gt, n_pred = weights.shape
    best = 0.0
    if n_gt == 0 or n_pred == 0:
        return best
    if n_gt <= n_pred:
        for perm in permutations(range(n_pred), n_gt):
            best = max(best, sum(weights[g, p] for g, p in enumerate(perm)))
    else:
        for perm in permutations(range(n_gt), n_pred):
            best = max(best, sum(weights[g, p] for p, g in enumerate(perm)))
    return best


def partition_by(keys, labels) -> set[frozenset]:
    """Cluster structure as a set of member-key sets (label-invariant)."""
    groups: dict = {}
    for key, label in zip(keys, labels):
        groups.setdefault(label, set()).add(key)
    return {frozenset(v) for v in groups.values()}


def same_frame_violations(frames, clusters: dict[int, list[int]]) -> int:
    """Count same-frame pairs that ended up sharing a cluster."""
    bad = 0
    for members in clusters.values():
        seen = [frames[i] for i in members]
        bad += len(seen) - len(set(seen))
    return bad
