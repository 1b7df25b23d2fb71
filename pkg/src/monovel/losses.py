"""Training objectives.

States are K x 4 tensors ordered ``[v_x, v_z, p_x, p_z]`` (see
``VehicleState.as_array``).  Every distance function reduces by summing over
components and vehicles.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError

VEL = slice(0, 2)
POS = slice(2, 4)
LOSS_VARIANTS = ("charbonnier", "L1", "smoothL1")


@dataclass(frozen=True)
class LossWeights:
    lambda_pos: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 0.3
    epsilon: float = 1e-6
    glc_normalize: bool = True
    smooth_normalize: bool = True

    def __post_init__(self):
        if min(self.lambda_pos, self.lambda1, self.lambda2) < 0:
            raise InvalidArgumentError("loss weights must be non-negative")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FrameBatch:
    """One frame's vehicles plus the flow/crop pair for the smoothness term.

    ``flow_pred`` is ``... x 2 x H x W`` and ``crop_image`` ``... x 3 x H x W``
    (or ``... x H x W`` grayscale) on the same grid.
    """

    predictions: torch.Tensor
    targets: torch.Tensor
    flow_pred: Optional[torch.Tensor] = None
    crop_image: Optional[torch.Tensor] = None

    def __post_init__(self):
        self.predictions = _as_states(self.predictions)
        self.targets = _as_states(self.targets, like=self.predictions)
        if self.predictions.shape != self.targets.shape:
            raise InvalidArgumentError(
                f"predictions {tuple(self.predictions.shape)} and targets {tuple(self.targets.shape)} differ")
        if self.predictions.shape[0] < 1:
            raise InvalidArgumentError("a frame needs at least one vehicle")


def _as_states(x, like=None):
    if isinstance(x, torch.Tensor):
        t = x
    elif len(x) and hasattr(x[0], "as_array"):
        t = torch.as_tensor(np.stack([s.as_array() for s in x]))
    else:
        t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if like is not None:
        t = t.to(like.dtype)
    return t.reshape(-1, 4)


def _check_shapes(s, s_hat):
    if s.shape != s_hat.shape:
        raise InvalidArgumentError(f"shape mismatch {tuple(s.shape)} vs {tuple(s_hat.shape)}")


def charbonnier(s, s_hat, epsilon=1e-6):
    s, s_hat = torch.as_tensor(s), torch.as_tensor(s_hat)
    _check_shapes(s, s_hat)
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    return torch.sqrt((s - s_hat) ** 2 + epsilon ** 2).sum()


def l1(s, s_hat, epsilon=None):
    s, s_hat = torch.as_tensor(s), torch.as_tensor(s_hat)
    _check_shapes(s, s_hat)
    return (s - s_hat).abs().sum()


def smooth_l1(s, s_hat, epsilon=None):
    s, s_hat = torch.as_tensor(s), torch.as_tensor(s_hat)
    _check_shapes(s, s_hat)
    return F.smooth_l1_loss(s, s_hat, reduction="sum", beta=1.0)


_DISTANCES = {"charbonnier": charbonnier, "L1": l1, "smoothL1": smooth_l1}


def distance_fn(variant):
    try:
        return _DISTANCES[variant]
    except KeyError:
        raise InvalidArgumentError(f"unknown loss variant {variant!r}; choose from {LOSS_VARIANTS}") from None


def regression_loss(batch: FrameBatch, w: LossWeights = LossWeights(), variant="charbonnier"):
    h = distance_fn(variant)
    p, t = batch.predictions, batch.targets
    return h(p[:, VEL], t[:, VEL], w.epsilon) + w.lambda_pos * h(p[:, POS], t[:, POS], w.epsilon)


def glc_loss(batch: FrameBatch, w: LossWeights = LossWeights()):
    """Charbonnier distance between predicted and true pairwise state differences.

    Sums over ordered pairs ``i != j``; divided by ``N (N - 1)`` when
    ``w.glc_normalize``.  Zero for a single vehicle.
    """
    p, t = batch.predictions, batch.targets
    n = p.shape[0]
    if n < 2:
        return p.new_zeros(())
    d_pred = p[:, None, :] - p[None, :, :]
    d_true = t[:, None, :] - t[None, :, :]
    off = ~torch.eye(n, dtype=torch.bool)
    total = torch.sqrt((d_pred[off] - d_true[off]) ** 2 + w.epsilon ** 2).sum()
    return total / (n * (n - 1)) if w.glc_normalize else total


def _gray(image):
    if image.dim() >= 3 and image.shape[-3] == 3:
        r, g, b = image.unbind(-3)
        return 0.299 * r + 0.587 * g + 0.114 * b
    return image


def smoothness_loss(flow, image, normalize=False):
    """Edge-aware first-order flow smoothness, summed over pixels, axes and channels.

    With ``normalize`` the sum becomes a mean over all difference terms.
    """
    flow = torch.as_tensor(flow)
    gray = _gray(torch.as_tensor(image, dtype=flow.dtype))
    if flow.dim() < 3 or flow.shape[-3] != 2:
        raise InvalidArgumentError(f"flow must be ... x 2 x H x W, got {tuple(flow.shape)}")
    if gray.shape[-2:] != flow.shape[-2:]:
        raise InvalidArgumentError(f"flow {tuple(flow.shape[-2:])} and image {tuple(gray.shape[-2:])} misaligned")
    gray = gray.unsqueeze(-3)
    fx = (flow[..., :, 1:] - flow[..., :, :-1]).abs()
    fy = (flow[..., 1:, :] - flow[..., :-1, :]).abs()
    wx = torch.exp(-(gray[..., :, 1:] - gray[..., :, :-1]).abs())
    wy = torch.exp(-(gray[..., 1:, :] - gray[..., :-1, :]).abs())
    total = (fx * wx).sum() + (fy * wy).sum()
    if normalize:
        total = total / max(fx.numel() + fy.numel(), 1)
    return total


def total_loss(batch: FrameBatch, w: LossWeights = LossWeights(), variant="charbonnier",
               use_smooth=True, use_glc=True):
    """Weighted sum ``L_reg + lambda1 L_smooth + lambda2 L_rel``.

    Returns ``(total, breakdown)``; disabled terms appear as zero.
    """
    reg = regression_loss(batch, w, variant)
    zero = reg.new_zeros(())
    smooth = zero
    if use_smooth and batch.flow_pred is not None and batch.crop_image is not None:
        smooth = smoothness_loss(batch.flow_pred, batch.crop_image, w.smooth_normalize)
    rel = glc_loss(batch, w) if use_glc else zero
    total = reg + w.lambda1 * smooth + w.lambda2 * rel
    return total, {"reg": reg, "smooth": smooth, "rel": rel, "total": total}
