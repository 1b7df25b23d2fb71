"""On-disk dataset layout and the Tusimple-style annotation adapter.

Layout written by :func:`export_dataset`::

    <dir>/manifest.json                {"schema_version", "num_clips", "clips": [...]}
    <dir>/<clip>/imgs/0.png, 1.png     previous and current frame, 8-bit RGB
    <dir>/<clip>/flow.bin              little-endian float32, H x W x 2, row-major
    <dir>/<clip>/annotation.json       {"clip_id", "dt", "image_size", "intrinsics",
                                        "vehicles": [AnnotationRecord, ...]}

``flow.bin`` is omitted for clips without flow ground truth.
"""
from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from ..errors import DatasetFormatError
from ..geometry import BoundingBox2D, CameraIntrinsics, VehicleState, planar_distance
from .generator import FramePairSample

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
FLOW_DTYPE = np.dtype("<f4")

# Default camera for Tusimple clips (1280 x 720); pass the benchmark's own
# calibration via ``intrinsics`` when it is at hand.
TUSIMPLE_INTRINSICS = CameraIntrinsics(f_x=714.1526, f_y=710.3725, c_x=713.85, c_y=327.0,
                                       height_above_ground=1.8)
TUSIMPLE_FPS = 20.0


@dataclass
class AnnotationRecord:
    vehicle_id: int
    bbox: List[float]
    position: List[float]
    velocity: List[float]
    distance: float

    def __post_init__(self):
        if len(self.bbox) != 4 or not (self.bbox[2] > 0 and self.bbox[3] > 0):
            raise ValueError(f"bad bbox {self.bbox}")
        if not self.distance > 0:
            raise ValueError(f"bad distance {self.distance}")

    def to_dict(self):
        return {"vehicle_id": self.vehicle_id, "bbox": list(self.bbox), "position": list(self.position),
                "velocity": list(self.velocity), "distance": self.distance}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["vehicle_id"]), [float(v) for v in d["bbox"]], [float(v) for v in d["position"]],
                   [float(v) for v in d["velocity"]], float(d["distance"]))


def _save_png(path, image):
    arr = np.round(np.asarray(image) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def _load_image(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DatasetFormatError(f"unreadable image: {exc}", path) from exc
    return arr.astype(np.float64) / 255.0


def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1)
    os.replace(tmp, path)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DatasetFormatError("missing file", path) from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"corrupt JSON: {exc}", path) from exc


def sample_to_annotation(sample: FramePairSample):
    records = [
        AnnotationRecord(i, box.to_ltwh(), list(st.position), list(st.velocity), st.distance).to_dict()
        for i, (box, st) in enumerate(zip(sample.boxes, sample.states))
    ]
    ann = {
        "clip_id": sample.clip_id,
        "dt": sample.dt,
        "image_size": list(sample.image_size),
        "intrinsics": sample.intrinsics.to_dict(),
        "vehicles": records,
    }
    if sample.prev_positions is not None:
        ann["prev_positions"] = [list(p) for p in sample.prev_positions]
    return ann


def export_dataset(samples, directory) -> Path:
    """Write ``samples`` under ``directory`` and return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    clips = []
    for idx, sample in enumerate(samples):
        clip = sample.clip_id or f"clip_{idx:05d}"
        if clip in clips:
            raise ValueError(f"duplicate clip id {clip}")
        clips.append(clip)
        cdir = directory / clip
        (cdir / "imgs").mkdir(parents=True, exist_ok=True)
        _save_png(cdir / "imgs" / "0.png", sample.image_prev)
        _save_png(cdir / "imgs" / "1.png", sample.image_curr)
        if sample.flow_gt is not None:
            np.ascontiguousarray(sample.flow_gt, dtype=FLOW_DTYPE).tofile(cdir / "flow.bin")
        ann = sample_to_annotation(sample)
        ann["clip_id"] = clip
        _write_json(cdir / "annotation.json", ann)
    manifest = {"schema_version": SCHEMA_VERSION, "num_clips": len(clips), "clips": clips}
    path = directory / MANIFEST
    _write_json(path, manifest)
    return path


def _records_to_states(records, path):
    boxes, states = [], []
    for rec in records:
        try:
            r = AnnotationRecord.from_dict(rec)
            boxes.append(BoundingBox2D.from_ltwh(*r.bbox))
            states.append(VehicleState(tuple(r.position), tuple(r.velocity), r.distance))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"bad vehicle record {rec!r}: {exc}", path) from exc
    return boxes, states


def load_clip(cdir) -> FramePairSample:
    cdir = Path(cdir)
    ann_path = cdir / "annotation.json"
    ann = _read_json(ann_path)
    try:
        dt = float(ann["dt"])
        cam = CameraIntrinsics.from_dict(ann["intrinsics"])
        h, w = (int(v) for v in ann["image_size"])
        records = ann["vehicles"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"bad annotation: {exc}", ann_path) from exc
    boxes, states = _records_to_states(records, ann_path)
    frames = []
    for t in (0, 1):
        p = cdir / "imgs" / f"{t}.png"
        if not p.exists():
            raise DatasetFormatError("missing image", p)
        img = _load_image(p)
        if img.shape[:2] != (h, w):
            raise DatasetFormatError(f"image shape {img.shape[:2]} != {(h, w)}", p)
        frames.append(img)
    flow = None
    fpath = cdir / "flow.bin"
    if fpath.exists():
        raw = np.fromfile(fpath, dtype=FLOW_DTYPE)
        if raw.size != h * w * 2:
            raise DatasetFormatError(f"flow has {raw.size} values, expected {h * w * 2}", fpath)
        flow = raw.reshape(h, w, 2).astype(np.float64)
    prev = ann.get("prev_positions")
    prev = [tuple(float(c) for c in p) for p in prev] if prev is not None else None
    return FramePairSample(frames[0], frames[1], boxes, states, flow, dt, cam,
                           clip_id=str(ann.get("clip_id", cdir.name)), prev_positions=prev)


def load_dataset(directory) -> List[FramePairSample]:
    directory = Path(directory)
    mpath = directory / MANIFEST
    manifest = _read_json(mpath)
    if not isinstance(manifest, dict) or "clips" not in manifest:
        raise DatasetFormatError("manifest lacks a clip list", mpath)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(f"unsupported schema version {manifest.get('schema_version')!r}", mpath)
    return [load_clip(directory / clip) for clip in manifest["clips"]]


def _frame_key(path):
    m = re.findall(r"\d+", path.stem)
    return (int(m[-1]) if m else -1, path.name)


def _tusimple_clip_dirs(directory):
    return sorted({p.parent for p in Path(directory).rglob("annotation.json") if (p.parent / "imgs").is_dir()})


def _tusimple_box(bbox):
    if isinstance(bbox, dict):
        left, top, right, bottom = (float(bbox[k]) for k in ("left", "top", "right", "bottom"))
        return BoundingBox2D.from_ltwh(left, top, right - left, bottom - top)
    return BoundingBox2D.from_ltwh(*(float(v) for v in bbox))


def load_tusimple_format(directory, intrinsics: Optional[CameraIntrinsics] = None,
                         fps: float = TUSIMPLE_FPS) -> List[FramePairSample]:
    """Read Tusimple velocity-benchmark clips.

    Each clip directory holds ``imgs/<n>.jpg`` (or png) and an
    ``annotation.json`` list of ``{"bbox": {"left","top","right","bottom"},
    "velocity": [v_x, v_z], "position": [p_x, p_z]}``.  Only the last two
    frames are kept.  Velocities are forwarded verbatim; ``flow_gt`` is None.
    """
    cam = intrinsics or TUSIMPLE_INTRINSICS
    dt = 1.0 / fps
    samples = []
    for cdir in _tusimple_clip_dirs(directory):
        clip_id = str(cdir.relative_to(directory))
        frames = sorted((p for p in (cdir / "imgs").iterdir()
                         if p.suffix.lower() in (".jpg", ".jpeg", ".png")), key=_frame_key)
        if len(frames) < 2:
            raise DatasetFormatError(f"clip {clip_id} has {len(frames)} frame(s), need 2", cdir)
        ann_path = cdir / "annotation.json"
        ann = _read_json(ann_path)
        if isinstance(ann, dict):
            ann = ann.get("vehicles", ann.get("annotations"))
        if not isinstance(ann, list):
            raise DatasetFormatError(f"clip {clip_id}: annotation is not a list", ann_path)
        boxes, states = [], []
        for rec in ann:
            try:
                box = _tusimple_box(rec["bbox"])
                pos = (float(rec["position"][0]), float(rec["position"][1]))
                vel = (float(rec["velocity"][0]), float(rec["velocity"][1]))
                states.append(VehicleState(pos, vel, planar_distance(pos)))
                boxes.append(box)
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise DatasetFormatError(f"clip {clip_id}: bad record {rec!r}: {exc}", ann_path) from exc
        prev, curr = _load_image(frames[-2]), _load_image(frames[-1])
        samples.append(FramePairSample(prev, curr, boxes, states, None, dt, cam, clip_id=clip_id))
    logger.info("loaded %d tusimple clips from %s", len(samples), directory)
    return samples
