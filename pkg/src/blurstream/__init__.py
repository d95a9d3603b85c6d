"""Streaming privacy pixelation engine.

Detections come in as frame-stamped records; the engine clusters the
identity-bearing ones with position-constrained exemplar message passing,
extends the cluster state incrementally from segment to segment, links
clusters into smoothed trajectories, decides what is sensitive, and emits
blur masks plus evaluation metrics.
"""

from .affinity import (
    ApParams,
    ClusterResult,
    MessageState,
    SimilarityMatrix,
    criterion_and_exemplars,
    plain_similarity,
    positioned_similarity,
    run_propagation,
    update_availabilities,
    update_responsibilities,
)
from .errors import DetectionFileError, EngineError
from .incremental import (
    IncrementalState,
    advance_segment,
    extend_messages,
    init_from_segment,
    nearest_predecessor,
    prune_state,
)
from .metrics import (
    EvalEvents,
    FrameEvents,
    evaluate_frames,
    match_frame,
    mp,
    opr,
    purity,
    sopa,
    sopp,
)
from .pipeline import PipelineConfig, PipelineResult, cluster_stream, run_pipeline
from .stream import (
    KIND_DPO,
    KIND_IPO,
    Box2D,
    DetectionRecord,
    Segment,
    StreamConfig,
    broadcast_frame,
    segment_stream,
)
from .synth import SynthConfig, TruthEntry, generate, ground_truth_report
from .trajectory import (
    SensitivityPolicy,
    Trajectory,
    WhitelistAnchor,
    eliminate_false_positives,
    filter_sensitivity,
    iou,
    link_cluster_to_trajectory,
    resolve_domain_overlap,
    smooth_track,
)

__version__ = "0.1.0"
