"""Wire formats and frame blurring.

All tabular artifacts are JSONL with a typed header line; frames are binary
PPM (P6) to stay codec-free and bit-exact.  Writers go through a temp file
plus rename so readers never observe a half-written artifact.  Unknown JSON
fields are ignored for forward compatibility.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DetectionFileError, EngineError
from .stream import KIND_DPO, KIND_IPO, KINDS, Box2D, DetectionRecord
from .synth import TruthEntry
from .trajectory import SensitivityPolicy, Trajectory, WhitelistAnchor

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ClassInfo:
    kind: str
    embed_dim: int | None = None


@dataclass(frozen=True)
class StreamHeader:
    """First line of a detections file: format version, fps, class registry."""

    fps: int = 30
    classes: dict[str, ClassInfo] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_lines(path: str | Path, lines) -> None:
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _box_from_json(value, line: int) -> Box2D:
    if not (isinstance(value, list) and len(value) == 4):
        raise DetectionFileError("io/bad-box", f"box must be [x, y, w, h], got {value!r}", line)
    try:
        return Box2D(*[float(v) for v in value])
    except EngineError as exc:
        raise DetectionFileError("io/bad-box", str(exc), line) from exc


def _read_header(path: Path, expected_type: str) -> tuple[dict, list[tuple[int, dict]]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DetectionFileError("io/unreadable", f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines()]
    if not lines or not lines[0].strip():
        raise DetectionFileError("io/missing-header", "file is empty, expected a header line", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DetectionFileError("io/bad-json", f"header is not valid JSON: {exc}", 1) from exc
    if not isinstance(header, dict):
        raise DetectionFileError("io/bad-header", "header must be a JSON object", 1)
    file_type = header.get("type", expected_type)
    if file_type != expected_type:
        raise DetectionFileError(
            "io/wrong-type", f"expected a {expected_type} file, got {file_type!r}", 1
        )
    body = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DetectionFileError("io/bad-json", f"not valid JSON: {exc}", lineno) from exc
        if not isinstance(obj, dict):
            raise DetectionFileError("io/bad-record", "record must be a JSON object", lineno)
        body.append((lineno, obj))
    return header, body


def parse_detections(path: str | Path) -> tuple[StreamHeader, list[DetectionRecord]]:
    """Read a detections file; every validation failure names its line."""
    header_obj, body = _read_header(Path(path), "detections")
    classes = {}
    raw_classes = header_obj.get("classes", {})
    if not isinstance(raw_classes, dict):
        raise DetectionFileError("io/bad-header", "classes must be an object", 1)
    for name, info in raw_classes.items():
        kind = info.get("kind")
        if kind not in KINDS:
            raise DetectionFileError("io/bad-header", f"class {name!r} has invalid kind {kind!r}", 1)
        dim = info.get("embed_dim")
        if kind == KIND_DPO and (not isinstance(dim, int) or dim <= 0):
            raise DetectionFileError(
                "io/bad-header", f"DPO class {name!r} needs a positive embed_dim", 1
            )
        classes[name] = ClassInfo(kind=kind, embed_dim=dim if kind == KIND_DPO else None)
    header = StreamHeader(
        fps=int(header_obj.get("fps", 30)),
        classes=classes,
        version=int(header_obj.get("version", FORMAT_VERSION)),
    )

    records: list[DetectionRecord] = []
    prev_frame = -1
    for lineno, obj in body:
        frame = obj.get("frame")
        if not isinstance(frame, int) or frame < 0:
            raise DetectionFileError("io/bad-frame", f"frame must be a non-negative int, got {frame!r}", lineno)
        if frame < prev_frame:
            raise DetectionFileError(
                "io/unsorted-frames",
                f"frame {frame} appears after frame {prev_frame}",
                lineno,
            )
        prev_frame = frame
        cls = obj.get("class")
        if cls not in classes:
            raise DetectionFileError("io/unknown-class", f"class {cls!r} not declared in header", lineno)
        info = classes[cls]
        box = _box_from_json(obj.get("box"), lineno)
        embedding = obj.get("embedding")
        if info.kind == KIND_DPO:
            if embedding is None:
                raise DetectionFileError("io/missing-embedding", f"DPO record of class {cls!r} lacks an embedding", lineno)
            if len(embedding) != info.embed_dim:
                raise DetectionFileError(
                    "io/dim-mismatch",
                    f"embedding has {len(embedding)} dims, header declares {info.embed_dim} for {cls!r}",
                    lineno,
                )
        try:
            records.append(DetectionRecord(
                frame=frame,
                cls=cls,
                kind=info.kind,
                box=box,
                score=float(obj.get("score", 1.0)),
                embedding=np.asarray(embedding, dtype=np.float64) if embedding is not None else None,
                payload_text=obj.get("payload_text"),
                truth_id=obj.get("truth_id"),
            ))
        except EngineError as exc:
            raise DetectionFileError("io/bad-record", str(exc), lineno) from exc
    return header, records


def write_detections(path: str | Path, header: StreamHeader,
                     records: list[DetectionRecord]) -> None:
    head = {
        "version": header.version,
        "type": "detections",
        "fps": header.fps,
        "classes": {
            name: ({"kind": info.kind, "embed_dim": info.embed_dim}
                   if info.kind == KIND_DPO else {"kind": info.kind})
            for name, info in header.classes.items()
        },
    }
    lines = [json.dumps(head)]
    for rec in records:
        obj = {
            "frame": rec.frame,
            "class": rec.cls,
            "box": rec.box.as_list(),
            "score": rec.score,
        }
        if rec.embedding is not None:
            obj["embedding"] = [float(v) for v in rec.embedding]
        if rec.payload_text is not None:
            obj["payload_text"] = rec.payload_text
        if rec.truth_id is not None:
            obj["truth_id"] = rec.truth_id
        lines.append(json.dumps(obj))
    _atomic_write_lines(path, lines)


def header_for_records(records: list[DetectionRecord], fps: int = 30) -> StreamHeader:
    classes: dict[str, ClassInfo] = {}
    for rec in records:
        dim = int(rec.embedding.size) if rec.embedding is not None else None
        info = classes.get(rec.cls)
        if info is None:
            classes[rec.cls] = ClassInfo(kind=rec.kind, embed_dim=dim if rec.kind == KIND_DPO else None)
        elif info.kind != rec.kind:
            raise EngineError("io/kind-conflict", f"class {rec.cls!r} used with two kinds")
    return StreamHeader(fps=fps, classes=classes)


def write_truth(path: str | Path, truth: list[TruthEntry], fps: int = 30) -> None:
    lines = [json.dumps({"version": FORMAT_VERSION, "type": "truth", "fps": fps})]
    lines.extend(
        json.dumps({"frame": t.frame, "truth_id": t.truth_id, "box": t.box.as_list()})
        for t in truth
    )
    _atomic_write_lines(path, lines)


def parse_truth(path: str | Path) -> list[TruthEntry]:
    _, body = _read_header(Path(path), "truth")
    out = []
    for lineno, obj in body:
        frame = obj.get("frame")
        if not isinstance(frame, int) or frame < 0:
            raise DetectionFileError("io/bad-frame", f"bad frame {frame!r}", lineno)
        tid = obj.get("truth_id")
        if not isinstance(tid, str) or not tid:
            raise DetectionFileError("io/bad-record", "truth_id must be a non-empty string", lineno)
        out.append(TruthEntry(frame=frame, truth_id=tid, box=_box_from_json(obj.get("box"), lineno)))
    return out


MaskEntry = tuple[int, Box2D, str]  # (frame, box, trajectory id)


def write_masks(path: str | Path, masks: list[MaskEntry], fps: int = 30) -> None:
    lines = [json.dumps({"version": FORMAT_VERSION, "type": "masks", "fps": fps})]
    lines.extend(
        json.dumps({"frame": f, "box": box.as_list(), "traj": traj})
        for f, box, traj in sorted(masks, key=lambda m: (m[0], m[2]))
    )
    _atomic_write_lines(path, lines)


def parse_masks(path: str | Path) -> list[MaskEntry]:
    _, body = _read_header(Path(path), "masks")
    out = []
    for lineno, obj in body:
        frame = obj.get("frame")
        if not isinstance(frame, int) or frame < 0:
            raise DetectionFileError("io/bad-frame", f"bad frame {frame!r}", lineno)
        traj = obj.get("traj")
        if not isinstance(traj, str) or not traj:
            raise DetectionFileError("io/bad-record", "traj must be a non-empty string", lineno)
        out.append((frame, _box_from_json(obj.get("box"), lineno), traj))
    return out


def write_trajectories(path: str | Path, trajectories: list[Trajectory],
                       members: dict[str, list[tuple[int, str | None]]] | None = None,
                       fps: int = 30) -> None:
    """One JSON line per trajectory; optional per-point identity members."""
    lines = [json.dumps({"version": FORMAT_VERSION, "type": "trajectories", "fps": fps})]
    for traj in sorted(trajectories, key=lambda t: t.id):
        obj = {
            "id": traj.id,
            "class": traj.cls,
            "kind": traj.kind,
            "sensitive": traj.sensitive,
            "points": [[f, box.as_list()] for f, box in traj.points],
        }
        if traj.payload_texts:
            obj["payload_texts"] = list(traj.payload_texts)
        if members and traj.id in members:
            obj["members"] = [[f, tid] for f, tid in members[traj.id]]
        lines.append(json.dumps(obj))
    _atomic_write_lines(path, lines)


def parse_trajectories(path: str | Path) -> tuple[list[Trajectory], dict[str, list[tuple[int, str | None]]]]:
    _, body = _read_header(Path(path), "trajectories")
    trajectories = []
    members: dict[str, list[tuple[int, str | None]]] = {}
    for lineno, obj in body:
        points = obj.get("points")
        if not isinstance(points, list):
            raise DetectionFileError("io/bad-record", "points must be a list", lineno)
        try:
            traj = Trajectory(
                id=str(obj.get("id")),
                cls=str(obj.get("class")),
                kind=str(obj.get("kind")),
                points=tuple((int(f), _box_from_json(box, lineno)) for f, box in points),
                sensitive=bool(obj.get("sensitive", True)),
                payload_texts=tuple(obj.get("payload_texts", ())),
            )
        except EngineError as exc:
            raise DetectionFileError("io/bad-record", str(exc), lineno) from exc
        trajectories.append(traj)
        if "members" in obj:
            members[traj.id] = [(int(f), tid) for f, tid in obj["members"]]
    return trajectories, members


def write_assignments(path: str | Path,
                      rows: list[tuple[DetectionRecord, str]], fps: int = 30) -> None:
    """Cluster output: one line per detection with its trajectory label."""
    lines = [json.dumps({"version": FORMAT_VERSION, "type": "assignments", "fps": fps})]
    for rec, label in rows:
        obj = {"frame": rec.frame, "class": rec.cls, "box": rec.box.as_list(), "cluster": label}
        if rec.truth_id is not None:
            obj["truth_id"] = rec.truth_id
        lines.append(json.dumps(obj))
    _atomic_write_lines(path, lines)


def load_policy(path: str | Path | None, word_list_path: str | Path | None = None) -> SensitivityPolicy:
    """Load a sensitivity policy JSON, optionally merging a plain word-list file."""
    whitelist: list[WhitelistAnchor] = []
    words: list[str] = []
    default_sensitive = True
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DetectionFileError("io/bad-policy", f"cannot load policy {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise DetectionFileError("io/bad-policy", "policy must be a JSON object")
        for i, entry in enumerate(obj.get("whitelist", [])):
            frame = entry.get("frame")
            if not isinstance(frame, int) or frame < 0:
                raise DetectionFileError("io/bad-policy", f"whitelist entry {i} has bad frame {frame!r}")
            whitelist.append(WhitelistAnchor(frame=frame, box=_box_from_json(entry.get("box"), i)))
        words.extend(str(w) for w in obj.get("word_list", []))
        default_sensitive = bool(obj.get("default_dpo_face_sensitive", True))
    if word_list_path is not None:
        try:
            extra = Path(word_list_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DetectionFileError("io/bad-policy", f"cannot load word list: {exc}") from exc
        words.extend(w.strip() for w in extra.splitlines() if w.strip())
    return SensitivityPolicy(
        whitelist=tuple(whitelist),
        word_list=tuple(words),
        default_dpo_face_sensitive=default_sensitive,
    )


def sniff_file_type(path: str | Path) -> str:
    """Return the declared type of a JSONL artifact (its header's ``type``)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
        return str(json.loads(first).get("type", "unknown"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DetectionFileError("io/bad-header", f"cannot sniff {path}: {exc}") from exc


def read_ppm(path: str | Path) -> np.ndarray:
    """Load a binary P6 PPM as an (h, w, 3) uint8 array."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise DetectionFileError("io/bad-ppm", f"{path} is not a binary PPM (P6)")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise DetectionFileError("io/bad-ppm", f"only 8-bit PPM supported, maxval={maxval}")
    payload = data[pos : pos + width * height * 3]
    if len(payload) != width * height * 3:
        raise DetectionFileError("io/bad-ppm", f"truncated PPM payload in {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise EngineError("io/bad-image", "image must be (h, w, 3) uint8")
    h, w, _ = image.shape
    _atomic_write_bytes(path, b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def _blur_1d(channel: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = kernel.size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(channel, pad, mode="symmetric")
    out = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), axis, padded)
    return out


def blur_regions(image: np.ndarray, boxes: list[Box2D], sigma: float = 6.0) -> np.ndarray:
    """Gaussian-blur the interior of each box; everything else stays bit-exact.

    The blur is separable with kernel radius ceil(3*sigma) and reflected
    boundaries taken from the box region itself, so content outside a box can
    never bleed in.  Boxes fully outside the image are warned about and
    skipped; partial boxes are clipped.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise EngineError("io/bad-image", "image must be (h, w, 3)")
    h, w, _ = image.shape
    out = image.copy()
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    for box in boxes:
        x0 = int(math.floor(box.x))
        y0 = int(math.floor(box.y))
        x1 = int(math.ceil(box.x + box.w))
        y1 = int(math.ceil(box.y + box.h))
        cx0, cy0 = max(0, x0), max(0, y0)
        cx1, cy1 = min(w, x1), min(h, y1)
        if cx0 >= cx1 or cy0 >= cy1:
            log.warning("blur box %s fully outside %dx%d image, ignored", box.as_list(), w, h)
            continue
        region = out[cy0:cy1, cx0:cx1].astype(np.float64)
        # cap the kernel so symmetric padding stays well-defined on small regions
        ry = min(radius, region.shape[0] - 1) if region.shape[0] > 1 else 0
        rx = min(radius, region.shape[1] - 1) if region.shape[1] > 1 else 0
        for ch in range(3):
            plane = region[:, :, ch]
            if ry > 0:
                k = kernel if ry == radius else _trimmed_kernel(sigma, ry)
                plane = _blur_1d(plane, k, axis=0)
            if rx > 0:
                k = kernel if rx == radius else _trimmed_kernel(sigma, rx)
                plane = _blur_1d(plane, k, axis=1)
            region[:, :, ch] = plane
        out[cy0:cy1, cx0:cx1] = np.clip(np.rint(region), 0, 255).astype(np.uint8)
    return out


def _trimmed_kernel(sigma: float, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()
