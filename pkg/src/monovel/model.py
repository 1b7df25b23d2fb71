"""Full network: three streams, optional attention fusion, regression head."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError
from .fusion import MSAF
from .geometry import DEFAULT_Z_HAT, backproject_bottom_center
from .head import VelocityHead, decode_batch
from .streams import (CROP_EXPANSION, ContextStream, EncoderConfig, MotionStream, SpatialStream,
                      boxes_to_xyxy, roi_align_batch, spatial_inputs)

SMOOTH_CROP = (16, 16)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_motion: bool = True
    use_spatial: bool = True
    use_context: bool = True
    use_msaf: bool = True
    shortcut: str = "f_sp"
    scaled_attention: bool = False
    d_q: int = 64
    d_v: int = 64
    head_hidden: int = 128
    z_hat: float = DEFAULT_Z_HAT

    def __post_init__(self):
        if not (self.use_motion or self.use_spatial or self.use_context):
            raise ConfigurationError("at least one stream must be enabled")
        if self.use_msaf and not (self.use_motion and self.use_spatial and self.use_context):
            raise ConfigurationError("attention fusion needs all three streams")


@dataclass
class PreparedSample:
    """Tensors derived once from a FramePairSample."""

    prev: torch.Tensor           # 3 x H x W
    curr: torch.Tensor
    flow_gt: Optional[torch.Tensor]  # 2 x H x W
    crops: torch.Tensor          # K x 4 expanded boxes, xyxy
    normalized: torch.Tensor     # K x 4
    patterns: torch.Tensor       # K x 3 x gh x gw
    z_ref: torch.Tensor          # K
    lateral: torch.Tensor        # K
    targets: torch.Tensor        # K x 4
    clip_id: str = ""


def prepare_sample(sample, z_hat=DEFAULT_Z_HAT, dtype=torch.float64) -> PreparedSample:
    cam = sample.intrinsics
    img = lambda a: torch.as_tensor(np.ascontiguousarray(a.transpose(2, 0, 1)), dtype=dtype)
    crops = [b.expanded(CROP_EXPANSION) for b in sample.boxes]
    normalized, patterns = spatial_inputs(sample.boxes, cam, sample.image_size, z_hat, dtype)
    z_ref = [backproject_bottom_center(c, cam)[1] for c in crops]
    lateral = [(b.b_x - cam.c_x) / cam.f_x for b in sample.boxes]
    targets = np.stack([s.as_array() for s in sample.states])
    return PreparedSample(
        prev=img(sample.image_prev),
        curr=img(sample.image_curr),
        flow_gt=None if sample.flow_gt is None else img(sample.flow_gt),
        crops=boxes_to_xyxy(sample.boxes, CROP_EXPANSION, dtype),
        normalized=normalized,
        patterns=patterns,
        z_ref=torch.tensor(z_ref, dtype=dtype),
        lateral=torch.tensor(lateral, dtype=dtype),
        targets=torch.as_tensor(targets, dtype=dtype),
        clip_id=sample.clip_id,
    )


@dataclass
class Batch:
    prev: torch.Tensor
    curr: torch.Tensor
    flow_gt: Optional[torch.Tensor]
    crops: torch.Tensor
    batch_index: torch.Tensor
    normalized: torch.Tensor
    patterns: torch.Tensor
    z_ref: torch.Tensor
    lateral: torch.Tensor
    targets: torch.Tensor
    frame_slices: List[slice]
    clip_ids: List[str]


def collate(prepared: Sequence[PreparedSample]) -> Batch:
    counts = [p.targets.shape[0] for p in prepared]
    starts = np.concatenate([[0], np.cumsum(counts)])
    flows = [p.flow_gt for p in prepared]
    return Batch(
        prev=torch.stack([p.prev for p in prepared]),
        curr=torch.stack([p.curr for p in prepared]),
        flow_gt=None if any(f is None for f in flows) else torch.stack(flows),
        crops=torch.cat([p.crops for p in prepared]),
        batch_index=torch.repeat_interleave(torch.arange(len(prepared)), torch.tensor(counts)),
        normalized=torch.cat([p.normalized for p in prepared]),
        patterns=torch.cat([p.patterns for p in prepared]),
        z_ref=torch.cat([p.z_ref for p in prepared]),
        lateral=torch.cat([p.lateral for p in prepared]),
        targets=torch.cat([p.targets for p in prepared]),
        frame_slices=[slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])],
        clip_ids=[p.clip_id for p in prepared],
    )


class VelocityNet(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        # the flow network is always built: its output drives the smoothness term
        self.motion = MotionStream(enc)
        self.context = ContextStream(enc) if cfg.use_context else None
        self.spatial = SpatialStream(enc) if cfg.use_spatial else None
        if cfg.use_msaf:
            self.msaf = MSAF(self.context.token_dim, self.motion.token_dim, self.spatial.out_dim,
                             enc.motion_channels if cfg.use_motion else 0, cfg.d_q, cfg.d_v,
                             shortcut=cfg.shortcut, context_dim=enc.context_channels,
                             scaled_attention=cfg.scaled_attention)
            fused = self.msaf.out_dim
        else:
            self.msaf = None
            fused = ((enc.motion_channels if cfg.use_motion else 0)
                     + (self.spatial.out_dim if cfg.use_spatial else 0)
                     + (enc.context_channels if cfg.use_context else 0))
        self.fused_dim = fused
        self.head = VelocityHead(fused, cfg.head_hidden)

    def fuse(self, batch: Batch, flow_hint=None):
        f_m, m_tok, flow = self.motion(batch.prev, batch.curr, batch.crops, batch.batch_index, flow_hint)
        parts = {}
        if self.cfg.use_motion:
            parts["motion"] = f_m
        if self.spatial is not None:
            parts["spatial"] = self.spatial(batch.normalized, batch.patterns)
        if self.context is not None:
            parts["context"], c_tok = self.context(batch.curr, batch.crops, batch.batch_index)
        if self.msaf is not None:
            x = self.msaf(c_tok, m_tok, parts["spatial"], f_m, parts["context"])
        else:
            x = torch.cat([parts[k] for k in ("motion", "spatial", "context") if k in parts], dim=1)
        return x, flow

    def forward(self, batch: Batch, teacher_forcing=False):
        hint = batch.flow_gt if teacher_forcing else None
        x, flow = self.fuse(batch, hint)
        raw = self.head(x)
        states = decode_batch(raw, batch.z_ref, batch.lateral)
        return {"raw": raw, "states": states, "flow": flow, "fused": x}

    def smoothness_crops(self, batch: Batch, flow):
        """Per-vehicle flow and image crops on a fixed grid for the smoothness term."""
        stride = 1
        f = roi_align_batch(flow, batch.crops, batch.batch_index, stride, SMOOTH_CROP, sampling=1)
        im = roi_align_batch(batch.curr, batch.crops, batch.batch_index, stride, SMOOTH_CROP, sampling=1)
        return f, im
