"""Hybrid multi-object tracker: detection on keyframes, sparse optical flow in between."""

from .association import Detection, Track, TrackState, byte_associate, hungarian_solve
from .evaluation import ClearCounts, evaluate_sequence, generate_synthetic, mota, motp
from .geometry import BoundingBox, SimilarityTransform
from .imgcore import GrayImage, build_pyramid
from .pipeline import HybridTracker, StaticDetections, TrackerConfig, run_sequence

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "ClearCounts", "Detection", "GrayImage", "HybridTracker", "SimilarityTransform",
    "StaticDetections", "Track", "TrackState", "TrackerConfig", "build_pyramid", "byte_associate",
    "evaluate_sequence", "generate_synthetic", "hungarian_solve", "mota", "motp", "run_sequence",
]
