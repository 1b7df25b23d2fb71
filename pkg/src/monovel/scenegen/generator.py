"""Deterministic synthetic frame-pair generator with exact ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import GenerationFailureError, InvalidArgumentError
from ..geometry import BoundingBox2D, CameraIntrinsics, VehicleState, relative_velocity
from .render import NQ, render_frame

MAX_ATTEMPTS = 100
MAX_OCCLUSION = 0.5
# positions are snapped to this grid so that prev + v * dt reproduces curr exactly
POSITION_QUANTUM = 2.0 ** -10


def default_intrinsics():
    return CameraIntrinsics(f_x=240.0, f_y=240.0, c_x=96.0, c_y=24.0, height_above_ground=1.5)


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    image_size: Tuple[int, int] = (64, 192)
    num_vehicles: int = 3
    dt: float = 0.5
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    position_range: Tuple[Tuple[float, float], Tuple[float, float]] = ((-10.0, 10.0), (10.0, 60.0))
    speed_range: Tuple[float, float] = (0.0, 6.0)
    vehicle_width_range: Tuple[float, float] = (1.6, 2.0)
    vehicle_height_range: Tuple[float, float] = (1.3, 1.9)
    max_heading_deg: float = 20.0

    def __post_init__(self):
        if self.num_vehicles < 1:
            raise InvalidArgumentError("num_vehicles must be >= 1")
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        (x0, x1), (z0, z1) = self.position_range
        if not (z0 > 0 and z1 >= z0 and x1 >= x0):
            raise InvalidArgumentError(f"bad position_range {self.position_range}")
        s0, s1 = self.speed_range
        if not (0 <= s0 <= s1):
            raise InvalidArgumentError(f"bad speed_range {self.speed_range}")
        h, w = self.image_size
        if h < 1 or w < 1:
            raise InvalidArgumentError("image_size must be positive")

    def to_dict(self):
        return {
            "seed": self.seed,
            "image_size": list(self.image_size),
            "num_vehicles": self.num_vehicles,
            "dt": self.dt,
            "intrinsics": self.intrinsics.to_dict(),
            "position_range": [list(r) for r in self.position_range],
            "speed_range": list(self.speed_range),
            "vehicle_width_range": list(self.vehicle_width_range),
            "vehicle_height_range": list(self.vehicle_height_range),
            "max_heading_deg": self.max_heading_deg,
        }

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        if "intrinsics" in kw:
            kw["intrinsics"] = CameraIntrinsics.from_dict(kw["intrinsics"])
        for key in ("image_size", "speed_range", "vehicle_width_range", "vehicle_height_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "position_range" in kw:
            kw["position_range"] = tuple(tuple(r) for r in kw["position_range"])
        return cls(**kw)


@dataclass(frozen=True)
class VehicleSpec:
    """A vehicle's size, appearance and poses in both frames."""

    x: float
    z: float
    x_prev: float
    z_prev: float
    width: float = 1.8
    height: float = 1.5
    color: Tuple[float, float, float] = (0.8, 0.2, 0.2)
    texture_periods: Tuple[float, float] = (0.45, 0.35)
    texture_phase: float = 0.0

    def quad_row(self):
        return [self.x, self.z, self.width, self.height, self.x_prev, self.z_prev,
                *self.color, *self.texture_periods, self.texture_phase]


@dataclass
class FramePairSample:
    image_prev: np.ndarray
    image_curr: np.ndarray
    boxes: List[BoundingBox2D]
    states: List[VehicleState]
    flow_gt: Optional[np.ndarray]
    dt: float
    intrinsics: CameraIntrinsics
    clip_id: str = ""
    prev_positions: Optional[List[Tuple[float, float]]] = None

    def __post_init__(self):
        if len(self.boxes) != len(self.states):
            raise InvalidArgumentError("boxes and states must align")

    @property
    def image_size(self):
        return self.image_curr.shape[:2]

    def __eq__(self, other):
        if not isinstance(other, FramePairSample):
            return NotImplemented
        same_flow = (self.flow_gt is None and other.flow_gt is None) or (
            self.flow_gt is not None and other.flow_gt is not None
            and np.array_equal(self.flow_gt, other.flow_gt))
        return (np.array_equal(self.image_prev, other.image_prev)
                and np.array_equal(self.image_curr, other.image_curr)
                and self.boxes == other.boxes and self.states == other.states
                and same_flow and self.dt == other.dt and self.intrinsics == other.intrinsics
                and self.clip_id == other.clip_id and self.prev_positions == other.prev_positions)


def project_box(cam: CameraIntrinsics, x, z, width, height) -> BoundingBox2D:
    """Exact image box of a fronto-parallel quad standing on the road."""
    left = cam.f_x * (x - 0.5 * width) / z + cam.c_x
    right = cam.f_x * (x + 0.5 * width) / z + cam.c_x
    top = cam.f_y * (cam.height_above_ground - height) / z + cam.c_y
    bottom = cam.f_y * cam.height_above_ground / z + cam.c_y
    return BoundingBox2D(0.5 * (left + right), 0.5 * (top + bottom), right - left, bottom - top)


def _box_inside(box, image_size):
    h, w = image_size
    return box.left >= 0 and box.top >= 0 and box.right <= w and box.bottom <= h


def _pixel_count(box):
    # number of pixel centers j + 0.5 in [left, right] times rows
    nx = math.floor(box.right - 0.5) - math.ceil(box.left - 0.5) + 1
    ny = math.floor(box.bottom - 0.5) - math.ceil(box.top - 0.5) + 1
    return max(nx, 0) * max(ny, 0)


def _quantize(value):
    return round(value / POSITION_QUANTUM) * POSITION_QUANTUM


def render_pair(config: SceneConfig, specs: Sequence[VehicleSpec], clip_id: str = "") -> FramePairSample:
    """Render a frame pair from fully specified vehicles."""
    cam = config.intrinsics
    image_prev, _, _ = render_frame(config.image_size, cam, _painter_quads(specs, True), use_prev=True)
    image_curr, _, flow = render_frame(config.image_size, cam, _painter_quads(specs, False), use_prev=False)
    boxes, states, prev_positions = [], [], []
    for s in specs:
        boxes.append(project_box(cam, s.x, s.z, s.width, s.height))
        vel = relative_velocity((s.x, s.z), (s.x_prev, s.z_prev), config.dt)
        states.append(VehicleState.from_kinematics((s.x, s.z), vel))
        prev_positions.append((s.x_prev, s.z_prev))
    # 8-bit quantization keeps PNG storage lossless
    image_prev = np.round(image_prev * 255.0) / 255.0
    image_curr = np.round(image_curr * 255.0) / 255.0
    return FramePairSample(image_prev, image_curr, boxes, states, flow, config.dt, cam,
                           clip_id=clip_id, prev_positions=prev_positions)


def _painter_order(specs, use_prev):
    depth = (lambda s: s.z_prev) if use_prev else (lambda s: s.z)
    return sorted(range(len(specs)), key=lambda k: (-depth(specs[k]), k))


def _painter_quads(specs, use_prev):
    rows = [specs[k].quad_row() for k in _painter_order(specs, use_prev)]
    return np.array(rows, dtype=np.float64).reshape(-1, NQ)


def _visible_fraction(specs, image_size, cam, use_prev):
    order = _painter_order(specs, use_prev)
    _, ids, _ = render_frame(image_size, cam, _painter_quads(specs, use_prev), use_prev=use_prev, supersample=1)
    fractions = []
    counts = np.bincount(ids[ids >= 0].ravel(), minlength=len(specs))
    for rank, k in enumerate(order):
        s = specs[k]
        if use_prev:
            box = project_box(cam, s.x_prev, s.z_prev, s.width, s.height)
        else:
            box = project_box(cam, s.x, s.z, s.width, s.height)
        total = _pixel_count(box)
        fractions.append(counts[rank] / total if total > 0 else 0.0)
    return min(fractions)


def _sample_spec(rng, config):
    cam = config.intrinsics
    (x0, x1), (z0, z1) = config.position_range
    width = rng.uniform(*config.vehicle_width_range)
    height = rng.uniform(*config.vehicle_height_range)
    z = _quantize(rng.uniform(z0, z1))
    # lateral bound so the quad stays inside the image horizontally
    half = min(cam.c_x, config.image_size[1] - cam.c_x) * z / cam.f_x - 0.5 * width
    lo, hi = max(x0, -half), min(x1, half)
    if lo > hi:
        return None
    x = _quantize(rng.uniform(lo, hi))
    speed = rng.uniform(*config.speed_range)
    # motion mostly along the road: heading within max_heading of the z axis, either direction
    heading = math.radians(rng.uniform(-config.max_heading_deg, config.max_heading_deg))
    direction = 1.0 if rng.uniform() < 0.5 else -1.0
    dx = _quantize(speed * math.sin(heading) * config.dt)
    dz = _quantize(direction * speed * math.cos(heading) * config.dt)
    color = tuple(float(c) for c in rng.uniform(0.2, 1.0, size=3))
    periods = (float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.25, 0.6)))
    phase = float(rng.uniform(0.0, 1.0))
    return VehicleSpec(x, z, x - dx, z - dz, width, height, color, periods, phase)


def sample_vehicles(config: SceneConfig, rng=None) -> List[VehicleSpec]:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    cam = config.intrinsics
    for _ in range(MAX_ATTEMPTS):
        specs = [_sample_spec(rng, config) for _ in range(config.num_vehicles)]
        if any(s is None for s in specs):
            continue
        ok = True
        for s in specs:
            if s.z_prev <= 0:
                ok = False
                break
            for (x, z) in ((s.x, s.z), (s.x_prev, s.z_prev)):
                if not _box_inside(project_box(cam, x, z, s.width, s.height), config.image_size):
                    ok = False
            if not ok:
                break
        if not ok:
            continue
        if (_visible_fraction(specs, config.image_size, cam, False) < 1 - MAX_OCCLUSION
                or _visible_fraction(specs, config.image_size, cam, True) < 1 - MAX_OCCLUSION):
            continue
        return specs
    raise GenerationFailureError(
        f"could not place {config.num_vehicles} vehicles after {MAX_ATTEMPTS} attempts")


def generate_scene(config: SceneConfig, clip_id: str = "") -> FramePairSample:
    specs = sample_vehicles(config)
    return render_pair(config, specs, clip_id=clip_id)


def generate_dataset(config: SceneConfig, num_clips: int, prefix: str = "clip") -> List[FramePairSample]:
    """``num_clips`` scenes; clip ``i`` is seeded by ``(config.seed, i)``."""
    samples = []
    for i in range(num_clips):
        rng = np.random.default_rng([config.seed, i])
        specs = sample_vehicles(config, rng)
        samples.append(render_pair(config, specs, clip_id=f"{prefix}_{i:05d}"))
    return samples
