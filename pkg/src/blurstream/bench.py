"""Clustering benchmark: classic vs positioned vs incremental.

Three methods run on the same synthetic streams:

  ap-batch                classic affinity propagation, position rule off
  positioned-batch        same-frame exclusion, one solve over all nodes
  positioned-incremental  segment-wise warm-started solves with retention

The report is a CSV of per-seed rows plus rendered figures (purity by method,
per-segment propagation time against the batch solve).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affinity import ApParams, plain_similarity, positioned_similarity, run_propagation
from .incremental import IncrementalState, advance_segment
from .metrics import purity
from .stream import DetectionRecord, segment_stream
from .synth import SynthConfig, generate

METHOD_AP = "ap-batch"
METHOD_POSITIONED = "positioned-batch"
METHOD_INCREMENTAL = "positioned-incremental"


@dataclass(frozen=True)
class BenchRow:
    seed: int
    method: str
    purity: float
    clusters: int
    truth_clusters: int
    nodes: int
    time_s: float


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    segment_times: list[tuple[int, int, float]] = field(default_factory=list)  # (seed, segment, seconds)
    batch_times: list[tuple[int, float]] = field(default_factory=list)  # (seed, seconds)

    def purities(self, method: str) -> list[float]:
        return [r.purity for r in self.rows if r.method == method]

    def mean_purity(self, method: str) -> float:
        vals = self.purities(method)
        return float(np.mean(vals)) if vals else float("nan")


def _truth_ids(records: list[DetectionRecord]) -> list[str]:
    return [r.truth_id or "unknown" for r in records]


def run_batch(records: list[DetectionRecord], params: ApParams,
              positioned: bool) -> tuple[float, int, float]:
    """One full solve; returns (purity, cluster count, seconds)."""
    build = positioned_similarity if positioned else plain_similarity
    t0 = time.perf_counter()
    sim = build(records, params)
    _, result = run_propagation(sim, params)
    elapsed = time.perf_counter() - t0
    labels = result.exemplar_of.tolist()
    return purity(labels, _truth_ids(records)), result.n_clusters, elapsed


def run_incremental(records: list[DetectionRecord], params: ApParams, segment_len: int,
                    window: int | None = 4) -> tuple[float, int, list[float], IncrementalState]:
    """Segment-wise run; returns (purity, clusters, per-segment seconds, state)."""
    state = IncrementalState(params=params, window=window)
    seg_times: list[float] = []
    for segment in segment_stream(records, segment_len):
        t0 = time.perf_counter()
        advance_segment(state, list(segment.records), segment.index)
        seg_times.append(time.perf_counter() - t0)
    assignments = state.assignments()
    labels = [lin for _, lin in assignments]
    truths = _truth_ids([rec for rec, _ in assignments])
    n_clusters = len(set(labels))
    return purity(labels, truths), n_clusters, seg_times, state


def run_bench(base: SynthConfig, seeds: list[int], segment_len: int = 150,
              params: ApParams | None = None, window: int | None = 4) -> BenchReport:
    """Run all three methods over the given seeds."""
    from dataclasses import replace

    params = params or ApParams()
    report = BenchReport()
    for seed in seeds:
        records, _ = generate(replace(base, seed=seed))
        if not records:
            continue
        truth_clusters = len(set(_truth_ids(records)))
        n = len(records)

        pur, clusters, elapsed = run_batch(records, params, positioned=False)
        report.rows.append(BenchRow(seed, METHOD_AP, pur, clusters, truth_clusters, n, elapsed))

        pur, clusters, elapsed = run_batch(records, params, positioned=True)
        report.rows.append(BenchRow(seed, METHOD_POSITIONED, pur, clusters, truth_clusters, n, elapsed))
        report.batch_times.append((seed, elapsed))

        pur, clusters, seg_times, _ = run_incremental(records, params, segment_len, window)
        report.rows.append(BenchRow(seed, METHOD_INCREMENTAL, pur, clusters, truth_clusters, n, sum(seg_times)))
        report.segment_times.extend((seed, q, t) for q, t in enumerate(seg_times))
    return report


def write_bench_csv(report: BenchReport, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "bench.csv"
    with table.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "method", "purity", "clusters", "truth_clusters", "nodes", "time_s"])
        for row in report.rows:
            writer.writerow([
                row.seed, row.method, f"{row.purity:.6f}", row.clusters,
                row.truth_clusters, row.nodes, f"{row.time_s:.6f}",
            ])
    times = out_dir / "bench_segments.csv"
    with times.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "segment", "step_time_s"])
        for seed, q, t in report.segment_times:
            writer.writerow([seed, q, f"{t:.6f}"])
    return table


def render_bench_figures(report: BenchReport, out_dir: str | Path) -> list[Path]:
    """Render purity and timing figures next to the CSV tables."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    methods = [METHOD_AP, METHOD_POSITIONED, METHOD_INCREMENTAL]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for x, method in enumerate(methods):
        vals = report.purities(method)
        if not vals:
            continue
        jitter = np.linspace(-0.12, 0.12, len(vals))
        ax.plot(x + jitter, vals, "o", alpha=0.5, markersize=4)
        ax.plot([x - 0.2, x + 0.2], [np.mean(vals)] * 2, "k-", linewidth=2)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods, rotation=15)
    ax.set_ylabel("clustering purity")
    ax.set_title("Purity by method (bars: mean over seeds)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    p = out_dir / "purity_by_method.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    if report.segment_times:
        by_segment: dict[int, list[float]] = {}
        for _, q, t in report.segment_times:
            by_segment.setdefault(q, []).append(t)
        xs = sorted(by_segment)
        ys = [float(np.mean(by_segment[q])) for q in xs]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.plot(xs, ys, "o-", label="incremental step")
        if report.batch_times:
            batch = float(np.mean([t for _, t in report.batch_times]))
            ax.axhline(batch, color="tab:red", linestyle="--", label="batch solve (all nodes)")
        ax.set_xlabel("segment index")
        ax.set_ylabel("seconds")
        ax.set_title("Per-segment propagation time")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        p = out_dir / "time_by_segment.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        paths.append(p)
    return paths


def speedup_probe(cfg: SynthConfig, params: ApParams | None = None, segment_len: int = 150,
                  window: int | None = 4, probe_segment: int = 10) -> dict:
    """Compare the incremental step at one segment against a cold batch solve.

    The batch side gets every node accumulated up to and including the probe
    segment and solves from zero; the incremental side is the wall time of its
    step at that segment with its own retention window.
    """
    params = params or ApParams()
    records, _ = generate(cfg)
    segments = segment_stream(records, segment_len)
    if len(segments) <= probe_segment:
        raise ValueError(f"stream has {len(segments)} segments, need > {probe_segment}")
    state = IncrementalState(params=params, window=window)
    step_time = None
    for segment in segments[: probe_segment + 1]:
        t0 = time.perf_counter()
        advance_segment(state, list(segment.records), segment.index)
        if segment.index == probe_segment:
            step_time = time.perf_counter() - t0
    accumulated = [
        rec for segment in segments[: probe_segment + 1] for rec in segment.records
    ]
    t0 = time.perf_counter()
    sim = positioned_similarity(accumulated, params)
    _, batch_result = run_propagation(sim, params)
    batch_time = time.perf_counter() - t0
    return {
        "accumulated_nodes": len(accumulated),
        "retained_nodes": state.n_nodes,
        "step_time_s": step_time,
        "batch_time_s": batch_time,
        "ratio": step_time / batch_time,
        "batch_clusters": batch_result.n_clusters,
    }
