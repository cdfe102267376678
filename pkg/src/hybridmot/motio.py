"""MOT-Challenge sequence layout: seqinfo.ini, det/gt text files, frames, results."""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import cv2
import numpy as np

from .association import Detection
from .geometry import BoundingBox
from .imgcore import ColorImage, GrayImage, to_grayscale


class MotFormatError(ValueError):
    """A file exists but its content does not follow the expected format."""

    def __init__(self, path, message: str, line: int | None = None):
        where = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


@dataclass(frozen=True)
class SeqInfo:
    name: str
    image_dir: str
    frame_rate: float
    seq_length: int
    width: int
    height: int
    image_ext: str


_SEQ_KEYS = ("name", "imDir", "frameRate", "seqLength", "imWidth", "imHeight", "imExt")


def parse_seqinfo(path) -> SeqInfo:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    with open(path, encoding="utf-8") as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise MotFormatError(path, f"not a valid INI file ({exc.__class__.__name__})") from exc
    if not parser.has_section("Sequence"):
        raise MotFormatError(path, "missing [Sequence] section")
    sec = parser["Sequence"]
    for key in _SEQ_KEYS:
        if key not in sec:
            raise MotFormatError(path, f"missing required key {key}")
    try:
        info = SeqInfo(
            name=sec["name"],
            image_dir=sec["imDir"],
            frame_rate=float(sec["frameRate"]),
            seq_length=int(sec["seqLength"]),
            width=int(sec["imWidth"]),
            height=int(sec["imHeight"]),
            image_ext=sec["imExt"],
        )
    except ValueError as exc:
        raise MotFormatError(path, f"bad numeric value: {exc}") from exc
    if info.seq_length < 1 or info.width < 1 or info.height < 1:
        raise MotFormatError(path, "seqLength, imWidth and imHeight must be >= 1")
    return info


class BoxKind(enum.Enum):
    DETECTIONS = "detections"
    GROUND_TRUTH = "ground_truth"
    # tracker output: taken verbatim, no filtering or rescaling
    RESULTS = "results"


@dataclass(frozen=True)
class MotRecord:
    frame: int
    id: int
    box: BoundingBox
    conf: float
    world: tuple[float, float, float] = (-1.0, -1.0, -1.0)


def _as_int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def read_mot_boxes(path, kind: BoxKind = BoxKind.DETECTIONS,
                   normalize_conf: bool = True) -> dict[int, list[MotRecord]]:
    """Parse a det.txt / gt.txt style file into records grouped by frame.

    Ground-truth rows whose confidence column is 0 are ignore-flagged and
    dropped. For detections, if any confidence exceeds 1 the column is
    min-max rescaled to [0, 1] (disable with ``normalize_conf=False``).
    """
    rows: list[tuple[int, int, BoundingBox, float, tuple[float, float, float]]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 7:
                raise MotFormatError(path, f"expected at least 7 fields, got {len(parts)}", lineno)
            try:
                frame = _as_int(parts[0])
                tid = _as_int(parts[1])
                x, y, w, h, conf = (float(p) for p in parts[2:7])
                world = tuple(float(p) for p in parts[7:10])
                box = BoundingBox(x, y, w, h)
            except ValueError as exc:
                raise MotFormatError(path, str(exc), lineno) from exc
            if frame < 1:
                raise MotFormatError(path, f"frame must be >= 1, got {frame}", lineno)
            if not np.isfinite(conf) or not all(np.isfinite(world)):
                raise MotFormatError(path, "non-finite value", lineno)
            world = (world + (-1.0, -1.0, -1.0))[:3]
            rows.append((frame, tid, box, conf, world))

    if kind is BoxKind.GROUND_TRUTH:
        rows = [r for r in rows if r[3] != 0]
    elif kind is BoxKind.DETECTIONS and normalize_conf and rows:
        confs = np.array([r[3] for r in rows])
        lo, hi = confs.min(), confs.max()
        if hi > 1.0:
            scaled = np.ones_like(confs) if hi == lo else (confs - lo) / (hi - lo)
            rows = [(f, i, b, float(np.clip(c, 0.0, 1.0)), wd)
                    for (f, i, b, _, wd), c in zip(rows, scaled)]

    out: dict[int, list[MotRecord]] = {}
    for frame, tid, box, conf, world in rows:
        out.setdefault(frame, []).append(MotRecord(frame, tid, box, conf, world))
    return dict(sorted(out.items()))


def read_embeddings(path) -> dict[tuple[int, int], np.ndarray]:
    """Sidecar of per-detection appearance vectors keyed by (frame, ordinal)."""
    out: dict[tuple[int, int], np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                frame, ordinal = _as_int(parts[0]), _as_int(parts[1])
                vec = np.array([float(p) for p in parts[2:]])
            except (ValueError, IndexError) as exc:
                raise MotFormatError(path, f"bad embedding line: {exc}", lineno) from exc
            if dim is None:
                if len(vec) == 0:
                    raise MotFormatError(path, "embedding has no components", lineno)
                dim = len(vec)
            elif len(vec) != dim:
                raise MotFormatError(path, f"expected {dim} components, got {len(vec)}", lineno)
            norm = np.linalg.norm(vec)
            if not np.isfinite(norm) or norm == 0:
                raise MotFormatError(path, "zero or non-finite embedding", lineno)
            out[(frame, ordinal)] = vec / norm
    return out


def records_to_detections(records: Mapping[int, Sequence[MotRecord]],
                          embeddings: Mapping[tuple[int, int], np.ndarray] | None = None,
                          ) -> dict[int, list[Detection]]:
    out = {}
    for frame, recs in records.items():
        dets = []
        for k, r in enumerate(recs):
            emb = None if embeddings is None else embeddings.get((frame, k))
            dets.append(Detection(r.box, min(max(r.conf, 0.0), 1.0), emb))
        out[frame] = dets
    return out


def records_to_boxes(records: Mapping[int, Sequence[MotRecord]]) -> dict[int, list[tuple[int, BoundingBox]]]:
    return {frame: [(r.id, r.box) for r in recs] for frame, recs in records.items()}


def format_results(entries_by_frame: Mapping[int, Sequence[tuple[int, BoundingBox]]]) -> str:
    lines = []
    for frame in sorted(entries_by_frame):
        for tid, b in sorted(entries_by_frame[frame], key=lambda e: e[0]):
            lines.append(f"{frame},{tid},{b.x:.2f},{b.y:.2f},{b.w:.2f},{b.h:.2f},1,-1,-1,-1\n")
    return "".join(lines)


def write_results(log, path) -> None:
    """Write tracks in MOT submission format; ``log`` is a TrackLog or frame -> entries mapping."""
    entries = log.as_mapping() if hasattr(log, "as_mapping") else log
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_results(entries))


def load_gray(path) -> GrayImage:
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise OSError(f"cannot read image {path}")
    if data.ndim == 3 and data.shape[2] == 4:
        data = data[:, :, :3]
    if data.dtype != np.uint8:
        data = cv2.convertScaleAbs(data, alpha=255.0 / max(float(data.max()), 1.0))
    if data.ndim == 2:
        return GrayImage(data.astype(np.float64))
    return to_grayscale(ColorImage(cv2.cvtColor(data, cv2.COLOR_BGR2RGB)))


class FrameDirectory:
    """Lazily loaded frames ``<image_dir>/<NNNNNN><ext>`` for frames 1..seq_length."""

    def __init__(self, seq_dir, info: SeqInfo):
        self.root = Path(seq_dir) / info.image_dir
        self.info = info

    def path(self, frame: int) -> Path:
        return self.root / f"{frame:06d}{self.info.image_ext}"

    def __len__(self) -> int:
        return self.info.seq_length

    def __iter__(self) -> Iterator[GrayImage]:
        for frame in range(1, self.info.seq_length + 1):
            yield load_gray(self.path(frame))


@dataclass
class MotSequence:
    root: Path
    info: SeqInfo
    frames: FrameDirectory

    @classmethod
    def open(cls, seq_dir) -> "MotSequence":
        root = Path(seq_dir)
        ini = root / "seqinfo.ini"
        if root.is_dir() and not ini.exists():
            raise MotFormatError(ini, "sequence directory has no seqinfo.ini")
        info = parse_seqinfo(ini)
        return cls(root, info, FrameDirectory(root, info))

    @property
    def det_path(self) -> Path:
        return self.root / "det" / "det.txt"

    @property
    def gt_path(self) -> Path:
        return self.root / "gt" / "gt.txt"


def write_sequence(seq_dir, frames: Sequence[GrayImage],
                   gt: Mapping[int, Sequence[tuple[int, BoundingBox]]],
                   detections: Mapping[int, Sequence[Detection]],
                   name: str = "synthetic", frame_rate: float = 30.0) -> Path:
    """Export frames plus ground truth and detections in the MOT-Challenge layout."""
    root = Path(seq_dir)
    (root / "img1").mkdir(parents=True, exist_ok=True)
    (root / "det").mkdir(exist_ok=True)
    (root / "gt").mkdir(exist_ok=True)
    h, w = frames[0].shape if frames else (1, 1)
    for k, img in enumerate(frames, start=1):
        if not cv2.imwrite(str(root / "img1" / f"{k:06d}.png"),
                           np.rint(img.data).astype(np.uint8)):
            raise OSError(f"cannot write frame {k} under {root}")
    with open(root / "seqinfo.ini", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"[Sequence]\nname={name}\nimDir=img1\nframeRate={frame_rate:g}\n"
                 f"seqLength={len(frames)}\nimWidth={w}\nimHeight={h}\nimExt=.png\n")
    with open(root / "det" / "det.txt", "w", encoding="utf-8", newline="\n") as fh:
        for frame in sorted(detections):
            for d in detections[frame]:
                b = d.box
                fh.write(f"{frame},-1,{b.x:.3f},{b.y:.3f},{b.w:.3f},{b.h:.3f},{d.confidence:.4f},-1,-1,-1\n")
    with open(root / "gt" / "gt.txt", "w", encoding="utf-8", newline="\n") as fh:
        for frame in sorted(gt):
            for tid, b in sorted(gt[frame], key=lambda e: e[0]):
                fh.write(f"{frame},{tid},{b.x:.3f},{b.y:.3f},{b.w:.3f},{b.h:.3f},1,-1,-1,-1\n")
    return root

