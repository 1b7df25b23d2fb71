"""Motion, context and spatial feature streams.

All three are small trainable torch modules.  Feature maps keep an explicit
``stride`` (image pixels per cell) so boxes given in image pixels can be pooled
from any of them with :func:`roi_align`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgumentError, InvalidRegionError
from .geometry import DEFAULT_Z_HAT, BoundingBox2D, CameraIntrinsics, box_to_world

PATTERN_GRID = (32, 96)
CROP_EXPANSION = 0.2
FEATURE_ROLES = ("motion", "context", "instance", "pattern", "spatial", "fused")


@dataclass
class FeatureMap:
    data: torch.Tensor  # C x H x W
    stride: float = 1.0

    def __post_init__(self):
        if self.data.dim() != 3 or min(self.data.shape) < 1:
            raise InvalidArgumentError(f"feature map must be C x H x W, got {tuple(self.data.shape)}")
        if not self.stride >= 1:
            raise InvalidArgumentError("stride must be >= 1")


@dataclass
class FeatureVector:
    data: torch.Tensor
    role: str

    def __post_init__(self):
        if self.role not in FEATURE_ROLES:
            raise InvalidArgumentError(f"unknown feature role {self.role!r}")

    def __len__(self):
        return self.data.shape[-1]


@dataclass(frozen=True)
class EncoderConfig:
    motion_channels: int = 32
    context_channels: int = 32
    instance_dim: int = 16
    pattern_dim: int = 16
    roi_size: Tuple[int, int] = (7, 7)
    denseaspp_rates: Tuple[int, ...] = (1, 2, 4)
    flow_width: int = 16
    context_width: int = 32
    aspp_growth: int = 16

    def __post_init__(self):
        vals = (self.motion_channels, self.context_channels, self.instance_dim, self.pattern_dim,
                *self.roi_size, *self.denseaspp_rates, self.flow_width, self.context_width, self.aspp_growth)
        if any(int(v) < 1 for v in vals) or not self.denseaspp_rates:
            raise InvalidArgumentError(f"encoder sizes must be positive: {self}")

    @property
    def num_tokens(self):
        return self.roi_size[0] * self.roi_size[1]

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


# ---------------------------------------------------------------------------
# RoI align


def boxes_to_xyxy(boxes: Sequence[BoundingBox2D], expansion: float = 0.0, dtype=torch.float64):
    rows = []
    for b in boxes:
        if expansion:
            b = b.expanded(expansion)
        rows.append([b.left, b.top, b.right, b.bottom])
    return torch.tensor(rows, dtype=dtype).reshape(-1, 4)


def roi_align_batch(features, boxes_xyxy, batch_index, stride, out_size=(7, 7), sampling=2):
    """Pool ``K`` boxes from ``features`` (B x C x H x W) into K x C x h x w.

    ``sampling`` x ``sampling`` bilinear samples per output cell are averaged.
    Samples falling outside the map take the nearest border value.
    """
    _, C, H, W = features.shape
    oh, ow = out_size
    dtype = features.dtype
    boxes_xyxy = boxes_xyxy.to(dtype)
    frac_y = (torch.arange(oh * sampling, dtype=dtype) + 0.5) / (oh * sampling)
    frac_x = (torch.arange(ow * sampling, dtype=dtype) + 0.5) / (ow * sampling)
    x1, y1, x2, y2 = boxes_xyxy.unbind(1)
    ys = y1[:, None] + (y2 - y1)[:, None] * frac_y[None, :]   # K x oh*s, image pixels
    xs = x1[:, None] + (x2 - x1)[:, None] * frac_x[None, :]
    # image pixels -> normalized grid coordinates (align_corners=False convention)
    gy = 2.0 * ys / (stride * H) - 1.0
    gx = 2.0 * xs / (stride * W) - 1.0
    grid = torch.stack(torch.broadcast_tensors(gx[:, None, :], gy[:, :, None]), dim=-1)
    src = features[batch_index]
    sampled = F.grid_sample(src, grid, mode="bilinear", padding_mode="border", align_corners=False)
    return F.avg_pool2d(sampled, kernel_size=sampling) if sampling > 1 else sampled


def roi_align(fmap: FeatureMap, box: BoundingBox2D, out_size=(7, 7), sampling=2):
    """Pool one box from a single feature map; returns C x h x w."""
    _, H, W = fmap.data.shape
    ext_w, ext_h = W * fmap.stride, H * fmap.stride
    if box.right <= 0 or box.bottom <= 0 or box.left >= ext_w or box.top >= ext_h:
        raise InvalidRegionError(f"box {box} does not intersect the {ext_w}x{ext_h} map extent")
    xyxy = torch.tensor([[box.left, box.top, box.right, box.bottom]], dtype=fmap.data.dtype)
    out = roi_align_batch(fmap.data[None], xyxy, torch.zeros(1, dtype=torch.long), fmap.stride,
                          out_size, sampling)
    return out[0]


def _conv(cin, cout, stride=1, dilation=1, k=3):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=dilation * (k // 2), dilation=dilation)


# ---------------------------------------------------------------------------
# Motion stream


class FlowNet(nn.Module):
    """Tiny encoder-decoder predicting flow prev -> curr.

    Input: both frames plus an optional ground-truth flow hint (zeros when
    absent).  ``features`` of the output is the stride-2 map feeding the flow
    head; that map is the motion feature map.
    """

    stride = 2
    flow_scale = 8.0

    def __init__(self, width=16):
        super().__init__()
        w = width
        self.conv1 = _conv(8, w, stride=2)
        self.conv2 = _conv(w, 2 * w, stride=2)
        self.conv3 = _conv(2 * w, 2 * w, dilation=2)
        self.conv4 = _conv(2 * w, 2 * w, dilation=4)
        self.conv5 = _conv(3 * w, w)
        self.flow_head = _conv(w, 2)
        self.out_channels = w

    def forward(self, image_prev, image_curr, flow_hint=None):
        if image_prev.shape != image_curr.shape:
            raise InvalidArgumentError(f"frame shapes differ: {tuple(image_prev.shape)} vs {tuple(image_curr.shape)}")
        B, _, H, W = image_curr.shape
        if flow_hint is None:
            hint = image_curr.new_zeros(B, 2, H, W)
        else:
            hint = flow_hint / self.flow_scale
        x = torch.cat([image_prev - 0.5, image_curr - 0.5, hint], dim=1)
        e1 = F.silu(self.conv1(x))
        e2 = F.silu(self.conv2(e1))
        e3 = F.silu(self.conv3(e2))
        e4 = F.silu(self.conv4(e3))
        up = F.interpolate(e4, size=e1.shape[-2:], mode="bilinear", align_corners=False)
        feat = F.silu(self.conv5(torch.cat([up, e1], dim=1)))
        flow = self.flow_head(feat) * self.flow_scale
        flow = F.interpolate(flow, size=(H, W), mode="bilinear", align_corners=False)
        return feat, flow


class MotionStream(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.flownet = FlowNet(cfg.flow_width)
        self.proj = nn.Linear(cfg.flow_width * cfg.num_tokens, cfg.motion_channels)

    @property
    def token_dim(self):
        return self.flownet.out_channels

    def forward(self, image_prev, image_curr, boxes_xyxy, batch_index, flow_hint=None):
        """Returns ``(f_m, tokens, flow_pred)`` for K boxes over a B-frame batch."""
        feat, flow = self.flownet(image_prev, image_curr, flow_hint)
        pooled = roi_align_batch(feat, boxes_xyxy, batch_index, self.flownet.stride, self.cfg.roi_size)
        f_m = self.proj(pooled.flatten(1))
        tokens = pooled.flatten(2).transpose(1, 2)  # K x L x C
        return f_m, tokens, flow

    def encode(self, image_prev, image_curr, box: BoundingBox2D, flow_hint=None):
        """Single-sample helper: H x W x 3 arrays in, ``(FeatureVector, flow H x W x 2)`` out."""
        prev, curr = _image_tensor(image_prev, self), _image_tensor(image_curr, self)
        if prev.shape != curr.shape:
            raise InvalidArgumentError("image_prev and image_curr must have the same size")
        hint = None
        if flow_hint is not None:
            hint = torch.as_tensor(np.asarray(flow_hint), dtype=prev.dtype).permute(2, 0, 1)[None]
        xyxy = boxes_to_xyxy([box], CROP_EXPANSION, prev.dtype)
        f_m, _, flow = self(prev, curr, xyxy, torch.zeros(1, dtype=torch.long), hint)
        return FeatureVector(f_m[0], "motion"), flow[0].permute(1, 2, 0)


# ---------------------------------------------------------------------------
# Context stream


class DenseASPP(nn.Module):
    """Densely connected dilated branches; each branch sees the input and all
    earlier branch outputs.  ``proj`` maps the concatenated branches back to
    the input width so the block can be added residually."""

    def __init__(self, channels, rates=(1, 2, 4), growth=16):
        super().__init__()
        self.branches = nn.ModuleList()
        cin = channels
        for r in rates:
            self.branches.append(_conv(cin, growth, dilation=r))
            cin += growth
        self.proj = nn.Conv2d(growth * len(rates), channels, 1)

    def forward(self, x):
        feats = [x]
        outs = []
        for branch in self.branches:
            y = F.silu(branch(torch.cat(feats, dim=1)))
            feats.append(y)
            outs.append(y)
        return self.proj(torch.cat(outs, dim=1))

    def zero_init(self):
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)


class ContextStream(nn.Module):
    stride = 4

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.context_width
        self.backbone = nn.ModuleList([
            _conv(3, w // 2, stride=2),
            _conv(w // 2, w, stride=2),
            _conv(w, w),
            _conv(w, w),
        ])
        self.aspp = DenseASPP(w, cfg.denseaspp_rates, cfg.aspp_growth)
        self.proj = nn.Linear(w * cfg.num_tokens, cfg.context_channels)

    @property
    def token_dim(self):
        return self.cfg.context_width

    def feature_map(self, image, use_aspp=True):
        x = image - 0.5
        for conv in self.backbone:
            x = F.silu(conv(x))
        if use_aspp:
            x = self.aspp(x) + x
        return x

    def forward(self, image_curr, boxes_xyxy, batch_index, use_aspp=True):
        fmap = self.feature_map(image_curr, use_aspp)
        pooled = roi_align_batch(fmap, boxes_xyxy, batch_index, self.stride, self.cfg.roi_size)
        f_c = self.proj(pooled.flatten(1))
        return f_c, pooled.flatten(2).transpose(1, 2)

    def encode(self, image_curr, box: BoundingBox2D, use_aspp=True):
        img = _image_tensor(image_curr, self)
        xyxy = boxes_to_xyxy([box], CROP_EXPANSION, img.dtype)
        f_c, _ = self(img, xyxy, torch.zeros(1, dtype=torch.long), use_aspp)
        return FeatureVector(f_c[0], "context")


# ---------------------------------------------------------------------------
# Spatial stream


def rasterize_box_mask(box: BoundingBox2D, image_size, grid=PATTERN_GRID):
    """Binary mask on a fixed grid: ones at cells whose centers fall in the box.

    A box too small to cover any cell center marks the cell holding its center.
    """
    gh, gw = grid
    H, W = image_size
    sy, sx = gh / H, gw / W
    cy = (np.arange(gh) + 0.5) / sy
    cx = (np.arange(gw) + 0.5) / sx
    rows = (cy >= box.top) & (cy <= box.bottom)
    cols = (cx >= box.left) & (cx <= box.right)
    mask = (rows[:, None] & cols[None, :]).astype(np.float64)
    if not mask.any():
        i = min(max(int(box.b_y * sy), 0), gh - 1)
        j = min(max(int(box.b_x * sx), 0), gw - 1)
        mask[i, j] = 1.0
    return mask


def pattern_input(mask):
    """Mask plus mask-weighted normalized coordinate channels (3 x gh x gw)."""
    gh, gw = mask.shape[-2:]
    yy = np.broadcast_to(np.linspace(-1.0, 1.0, gh)[:, None], (gh, gw))
    xx = np.broadcast_to(np.linspace(-1.0, 1.0, gw)[None, :], (gh, gw))
    return np.stack([mask, mask * xx, mask * yy])


class SpatialStream(nn.Module):
    def __init__(self, cfg: EncoderConfig, hidden=32, pattern_width=8):
        super().__init__()
        self.cfg = cfg
        self.instance = nn.Sequential(nn.Linear(4, hidden), nn.SiLU(), nn.Linear(hidden, cfg.instance_dim))
        self.pattern_conv1 = nn.Conv2d(3, pattern_width, 5, stride=2, padding=2)
        self.pattern_conv2 = nn.Conv2d(pattern_width, 2 * pattern_width, 5, stride=2, padding=2)
        self.pattern_fc = nn.Linear(2 * pattern_width, cfg.pattern_dim)

    @property
    def out_dim(self):
        return self.cfg.instance_dim + self.cfg.pattern_dim

    def forward(self, normalized_boxes, pattern_maps):
        """``normalized_boxes`` K x 4, ``pattern_maps`` K x 3 x gh x gw -> K x D."""
        f_i = self.instance(normalized_boxes)
        p = F.silu(self.pattern_conv1(pattern_maps))
        p = F.silu(self.pattern_conv2(p))
        f_p = self.pattern_fc(p.mean(dim=(2, 3)))
        return torch.cat([f_i, f_p], dim=1)

    def encode(self, box: BoundingBox2D, cam: CameraIntrinsics, image_size, z_hat=DEFAULT_Z_HAT):
        nb, pm = spatial_inputs([box], cam, image_size, z_hat, dtype=_param_dtype(self))
        return FeatureVector(self(nb, pm)[0], "spatial")


def spatial_inputs(boxes, cam, image_size, z_hat=DEFAULT_Z_HAT, dtype=torch.float64):
    nb = np.stack([box_to_world(b, cam, z_hat).as_array() for b in boxes])
    pm = np.stack([pattern_input(rasterize_box_mask(b, image_size)) for b in boxes])
    return torch.as_tensor(nb, dtype=dtype), torch.as_tensor(pm, dtype=dtype)


def _param_dtype(module):
    return next(module.parameters()).dtype


def _image_tensor(image, module):
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidArgumentError(f"expected H x W x 3 image, got {arr.shape}")
    return torch.as_tensor(arr, dtype=_param_dtype(module)).permute(2, 0, 1)[None].contiguous()
