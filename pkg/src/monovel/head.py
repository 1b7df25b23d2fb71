"""Regression head and decoding of raw outputs into vehicle states.

The network emits three numbers per vehicle: a depth residual on top of the
ground-plane reference, and the two planar velocity components.  The lateral
position is recovered by inverse projection at the decoded depth.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError
from .geometry import BoundingBox2D, CameraIntrinsics, VehicleState, backproject_bottom_center, planar_distance

OUTPUT_DIM = 3


@dataclass(frozen=True)
class RawPrediction:
    z_residual: float
    v_x: float
    v_z: float


class VelocityHead(nn.Module):
    def __init__(self, in_dim, hidden=128):
        super().__init__()
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, OUTPUT_DIM)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"head expects {self.in_dim} features, got {x.shape[-1]}")
        return self.fc2(F.silu(self.fc1(x)))

    def predict(self, x) -> RawPrediction:
        out = self(x.reshape(1, -1))[0]
        return RawPrediction(*out.detach().tolist())


def decode_state(raw: RawPrediction, box: BoundingBox2D, cam: CameraIntrinsics) -> VehicleState:
    """``box`` is the crop whose bottom-center pixel gives the reference depth."""
    _, z_ref = backproject_bottom_center(box, cam)
    z = z_ref + raw.z_residual
    x = (box.b_x - cam.c_x) * z / cam.f_x
    return VehicleState((x, z), (raw.v_x, raw.v_z), planar_distance((x, z)))


def encode_residual(state: VehicleState, box: BoundingBox2D, cam: CameraIntrinsics) -> float:
    """Depth residual that :func:`decode_state` turns back into ``state``'s depth."""
    return state.position[1] - backproject_bottom_center(box, cam)[1]


def decode_batch(raw, z_ref, lateral):
    """Differentiable decode of K raw outputs.

    ``z_ref`` is the per-vehicle reference depth and ``lateral`` the ray slope
    ``(b_x - c_x) / f_x``.  Returns K x 4 states ``[v_x, v_z, p_x, p_z]``.
    """
    z = z_ref + raw[:, 0]
    return torch.stack([raw[:, 1], raw[:, 2], lateral * z, z], dim=1)
