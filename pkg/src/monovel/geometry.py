"""Pinhole camera geometry and the per-vehicle state representation.

Camera frame: x right, y down, z forward.  The road is the plane
``y = height_above_ground``.  Planar positions and velocities are stored as
``(x, z)`` pairs in meters and m/s; the vertical component is not modeled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import HorizonDegenerateError, InvalidArgumentError

DEFAULT_Z_HAT = 10.0

Planar = Tuple[float, float]


@dataclass(frozen=True)
class CameraIntrinsics:
    f_x: float
    f_y: float
    c_x: float
    c_y: float
    height_above_ground: float = 1.5

    def __post_init__(self):
        if not (self.f_x > 0 and self.f_y > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got ({self.f_x}, {self.f_y})")
        if not self.height_above_ground > 0:
            raise InvalidArgumentError(f"camera height must be positive, got {self.height_above_ground}")

    def project(self, x, y, z):
        """Project camera-frame points to pixel coordinates ``(u, v)``."""
        return self.f_x * x / z + self.c_x, self.f_y * y / z + self.c_y

    def to_dict(self):
        return {
            "f_x": self.f_x,
            "f_y": self.f_y,
            "c_x": self.c_x,
            "c_y": self.c_y,
            "height_above_ground": self.height_above_ground,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["f_x"]), float(d["f_y"]), float(d["c_x"]), float(d["c_y"]),
                   float(d.get("height_above_ground", 1.5)))


@dataclass(frozen=True)
class BoundingBox2D:
    """Axis-aligned box in pixels, center/size parameterization."""

    b_x: float
    b_y: float
    b_w: float
    b_h: float

    def __post_init__(self):
        if not (self.b_w > 0 and self.b_h > 0):
            raise InvalidArgumentError(f"degenerate box size ({self.b_w}, {self.b_h})")

    @property
    def left(self):
        return self.b_x - 0.5 * self.b_w

    @property
    def right(self):
        return self.b_x + 0.5 * self.b_w

    @property
    def top(self):
        return self.b_y - 0.5 * self.b_h

    @property
    def bottom(self):
        return self.b_y + 0.5 * self.b_h

    @classmethod
    def from_ltwh(cls, left, top, width, height):
        return cls(left + 0.5 * width, top + 0.5 * height, width, height)

    def to_ltwh(self):
        return [self.left, self.top, self.b_w, self.b_h]

    def expanded(self, ratio):
        """Grow the box by ``ratio`` of its size on every side."""
        return BoundingBox2D(self.b_x, self.b_y, self.b_w * (1 + 2 * ratio), self.b_h * (1 + 2 * ratio))


@dataclass(frozen=True)
class NormalizedBox:
    p_x: float
    p_y: float
    p_w: float
    p_h: float

    def as_array(self):
        return np.array([self.p_x, self.p_y, self.p_w, self.p_h], dtype=np.float64)


@dataclass(frozen=True)
class VehicleState:
    position: Planar
    velocity: Planar
    distance: float

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))
        if not self.distance > 0:
            raise InvalidArgumentError(f"distance must be positive, got {self.distance}")
        if abs(self.distance - planar_distance(self.position)) > 1e-9:
            raise InvalidArgumentError(
                f"distance {self.distance} inconsistent with position {self.position}")

    @classmethod
    def from_kinematics(cls, position, velocity):
        return cls(position, velocity, planar_distance(position))

    def as_array(self):
        """``[v_x, v_z, p_x, p_z]``."""
        return np.array([*self.velocity, *self.position], dtype=np.float64)


def box_to_world(box: BoundingBox2D, cam: CameraIntrinsics, z_hat: float = DEFAULT_Z_HAT) -> NormalizedBox:
    if not z_hat > 0:
        raise InvalidArgumentError(f"z_hat must be positive, got {z_hat}")
    if not (box.b_w > 0 and box.b_h > 0):
        raise InvalidArgumentError("degenerate box")
    return NormalizedBox(
        (box.b_x - cam.c_x) / cam.f_x * z_hat,
        (box.b_y - cam.c_y) / cam.f_y * z_hat,
        box.b_w / cam.f_x,
        box.b_h / cam.f_y,
    )


def world_to_box(nbox: NormalizedBox, cam: CameraIntrinsics, z_hat: float = DEFAULT_Z_HAT) -> BoundingBox2D:
    """Inverse of :func:`box_to_world` for the same ``z_hat``."""
    if not z_hat > 0:
        raise InvalidArgumentError(f"z_hat must be positive, got {z_hat}")
    return BoundingBox2D(
        nbox.p_x / z_hat * cam.f_x + cam.c_x,
        nbox.p_y / z_hat * cam.f_y + cam.c_y,
        nbox.p_w * cam.f_x,
        nbox.p_h * cam.f_y,
    )


def backproject_bottom_center(box: BoundingBox2D, cam: CameraIntrinsics) -> Planar:
    """Lift the bottom-center pixel of ``box`` onto the flat road.

    Returns ``(x_world, z_world)``.
    """
    dv = box.b_y + 0.5 * box.b_h - cam.c_y
    if not dv > 0:
        raise HorizonDegenerateError(
            f"bottom edge v={box.b_y + 0.5 * box.b_h} not below horizon c_y={cam.c_y}")
    z = cam.f_y * cam.height_above_ground / dv
    x = (box.b_x - cam.c_x) * z / cam.f_x
    return x, z


def relative_velocity(p_now, p_prev, dt: float) -> Planar:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    return (p_now[0] - p_prev[0]) / dt, (p_now[1] - p_prev[1]) / dt


def planar_distance(position) -> float:
    return math.hypot(position[0], position[1])
