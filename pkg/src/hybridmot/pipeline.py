"""Hybrid scheduler: detection-driven keyframes, optical-flow frames in between."""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .association import Detection, Track, TrackState, byte_associate
from .features import Keypoint, detect_in_box
from .geometry import (BoundingBox, NoConsensus, NotEnoughPoints, RansacParams,
                       estimate_similarity_ransac, warp_bbox)
from .imgcore import GrayImage, Pyramid, build_pyramid
from .motion import kalman_init, kalman_predict, kalman_update
from .optflow import FlowParams, lk_track_points

logger = logging.getLogger(__name__)


class FrameMode(enum.Enum):
    KEYFRAME = "keyframe"
    FLOW = "flow"


@dataclass(frozen=True)
class TrackerConfig:
    skip: int = 0
    tau: float = 0.5
    tau_init: float = 0.6
    flow: FlowParams = field(default_factory=FlowParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    keypoint_budget: int = 20
    fast_threshold: float = 20.0
    max_lost: int = 30
    seed: int = 0
    # False turns flow frames into pure Kalman coasting
    use_flow: bool = True
    # feed the flow-warped box back into the Kalman filter as a pseudo-measurement
    flow_kalman_update: bool = True
    # False gives the single-stage (tau-filtered) baseline
    two_stage: bool = True
    embedding_momentum: float = 0.9

    def __post_init__(self):
        if self.skip < 0:
            raise ValueError("skip must be >= 0")
        for name in ("tau", "tau_init"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {v}")

    def is_keyframe(self, frame: int) -> bool:
        """Frames are 1-based; frame 1 and every (skip+1)-th after it are keyframes."""
        return (frame - 1) % (self.skip + 1) == 0


class DetectionSource(Protocol):
    def detect(self, frame: int) -> list[Detection]:
        """Detections for a 1-based frame index; must be deterministic."""
        ...


class StaticDetections:
    """In-memory detection source backed by a frame -> detections mapping."""

    def __init__(self, by_frame: Mapping[int, Sequence[Detection]]):
        self._by_frame = {int(k): list(v) for k, v in by_frame.items()}

    def detect(self, frame: int) -> list[Detection]:
        return list(self._by_frame.get(frame, []))


class DelayedSource:
    """Wraps a source and sleeps ``latency_ms`` per call to stand in for a detector's cost."""

    def __init__(self, inner: DetectionSource, latency_ms: float):
        self.inner = inner
        self.latency_ms = latency_ms

    def detect(self, frame: int) -> list[Detection]:
        if self.latency_ms > 0:
            time.sleep(self.latency_ms / 1000.0)
        return self.inner.detect(frame)


@dataclass
class FrameResult:
    frame: int
    entries: list[tuple[int, BoundingBox]]
    mode: FrameMode


@dataclass
class TrackLog:
    frames: list[FrameResult] = field(default_factory=list)
    detector_calls: int = 0
    frame_times: list[float] = field(default_factory=list)
    tracks_created: int = 0

    def as_mapping(self) -> dict[int, list[tuple[int, BoundingBox]]]:
        return {r.frame: list(r.entries) for r in self.frames}


class FrameSourceError(RuntimeError):
    """A frame could not be produced; ``log`` holds everything tracked before it."""

    def __init__(self, frame: int, log: TrackLog, cause: BaseException):
        super().__init__(f"failed to read frame {frame}: {cause}")
        self.frame = frame
        self.log = log


class HybridTracker:
    """Track state carried across frames.

    Identities are created and retired on keyframes only; flow frames just move
    the boxes of active tracks.
    """

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.tracks: list[Track] = []
        self.next_id = 1

    def _report(self, frame: int, mode: FrameMode) -> FrameResult:
        entries = sorted((t.id, t.box) for t in self.tracks if t.state is TrackState.ACTIVE)
        return FrameResult(frame, entries, mode)

    def step_keyframe(self, frame: int, image: GrayImage | None,
                      dets: Sequence[Detection]) -> FrameResult:
        cfg = self.config
        for t in self.tracks:
            t.kalman = kalman_predict(t.kalman)
            t.age += 1

        outcome, candidates = byte_associate(self.tracks, dets, cfg.tau, cfg.tau_init,
                                             second_stage=cfg.two_stage)
        for ti, di in outcome.matches:
            t = self.tracks[ti]
            det = dets[di]
            t.kalman = kalman_update(t.kalman, det.box)
            t.box = t.kalman.box()
            t.blend_embedding(det.embedding, cfg.embedding_momentum)
            t.state = TrackState.ACTIVE
            t.frames_since_update = 0
        for ti in outcome.unmatched_tracks:
            t = self.tracks[ti]
            t.frames_since_update += 1
            t.keypoints = []
            if t.state is TrackState.ACTIVE:
                t.state = TrackState.LOST
            if t.frames_since_update > cfg.max_lost:
                t.state = TrackState.REMOVED
        self.tracks = [t for t in self.tracks if t.state is not TrackState.REMOVED]

        for di in candidates:
            det = dets[di]
            emb = None if det.embedding is None else det.embedding.copy()
            self.tracks.append(Track(self.next_id, kalman_init(det.box), det.box, embedding=emb))
            self.next_id += 1

        if cfg.use_flow and image is not None:
            for t in self.tracks:
                if t.state is TrackState.ACTIVE:
                    t.keypoints = detect_in_box(image, t.box, cfg.keypoint_budget,
                                                cfg.fast_threshold)
        return self._report(frame, FrameMode.KEYFRAME)

    def _coast(self, t: Track, survivors: list[Keypoint]) -> None:
        t.box = t.kalman.box()
        t.keypoints = survivors
        t.frames_since_update += 1

    def step_flow(self, frame: int, prev_pyr: Pyramid | None, cur_pyr: Pyramid | None) -> FrameResult:
        cfg = self.config
        active = [t for t in self.tracks if t.state is TrackState.ACTIVE]
        for t in self.tracks:
            t.kalman = kalman_predict(t.kalman)
            t.age += 1
            if t.state is TrackState.LOST:
                t.frames_since_update += 1

        if not cfg.use_flow or prev_pyr is None or cur_pyr is None:
            for t in active:
                self._coast(t, [])
            return self._report(frame, FrameMode.FLOW)

        # one LK call for every active track's keypoints
        flat = [kp for t in active for kp in t.keypoints]
        results = lk_track_points(prev_pyr, cur_pyr, flat, cfg.flow)
        pos = 0
        for t in active:
            n = len(t.keypoints)
            res = results[pos:pos + n]
            src_kps = t.keypoints
            pos += n
            ok = [(s, r.point) for s, r in zip(src_kps, res) if r.tracked]
            survivors = [p for _, p in ok]
            if len(ok) < 2:
                self._coast(t, survivors)
                continue
            src = np.array([(s.x, s.y) for s, _ in ok])
            dst = np.array([(p.x, p.y) for _, p in ok])
            params = dataclasses.replace(cfg.ransac, seed=(cfg.seed, frame, t.id))
            try:
                m, _ = estimate_similarity_ransac(src, dst, params)
            except (NotEnoughPoints, NoConsensus):
                self._coast(t, survivors)
                continue
            box = warp_bbox(t.box, m)
            if box.w <= 0 or box.h <= 0:
                self._coast(t, survivors)
                continue
            t.box = box
            t.keypoints = survivors
            if cfg.flow_kalman_update:
                t.kalman = kalman_update(t.kalman, box)
        return self._report(frame, FrameMode.FLOW)


def run_sequence(frames: Iterable[GrayImage], source: DetectionSource,
                 config: TrackerConfig = TrackerConfig(),
                 on_frame: Callable[[FrameResult], None] | None = None) -> TrackLog:
    """Run the tracker over ``frames`` (an iterable, consumed lazily).

    Only the previous frame's pyramid is retained between steps.

    Raises:
        FrameSourceError: the frame iterable failed; carries the partial log.
    """
    tracker = HybridTracker(config)
    log = TrackLog()
    needs_pyramid = config.use_flow and config.skip > 0
    prev_pyr: Pyramid | None = None
    it = iter(frames)
    frame = 0
    while True:
        frame += 1
        try:
            image = next(it)
        except StopIteration:
            break
        except Exception as exc:
            raise FrameSourceError(frame, log, exc) from exc

        start = time.perf_counter()
        cur_pyr = build_pyramid(image, config.flow.levels) if needs_pyramid else None
        if config.is_keyframe(frame):
            dets = source.detect(frame)
            log.detector_calls += 1
            result = tracker.step_keyframe(frame, image, dets)
        else:
            result = tracker.step_flow(frame, prev_pyr, cur_pyr)
        prev_pyr = cur_pyr
        log.frame_times.append(time.perf_counter() - start)
        log.frames.append(result)
        if on_frame is not None:
            on_frame(result)
        logger.debug("frame %d (%s): %d tracks", frame, result.mode.value, len(result.entries))
    log.tracks_created = tracker.next_id - 1
    return log


def expected_detector_calls(n_frames: int, skip: int) -> int:
    return math.ceil(n_frames / (skip + 1))
