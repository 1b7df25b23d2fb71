"""Run configuration (JSON-serializable)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import torch

from ..errors import ConfigurationError
from ..losses import LOSS_VARIANTS, LossWeights
from ..model import ModelConfig
from ..streams import EncoderConfig

ABLATION_SWITCHES = ("use_motion", "use_spatial", "use_context", "use_msaf", "loss_variant",
                     "use_smooth", "use_glc", "shortcut")
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class RunConfig:
    seed: int = 0
    dataset: Optional[str] = None
    eval_dataset: Optional[str] = None
    lr: float = 1e-3
    batch_size: int = 4
    epochs: int = 30
    loss_weights: LossWeights = field(default_factory=LossWeights)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_motion: bool = True
    use_spatial: bool = True
    use_context: bool = True
    use_msaf: bool = True
    loss_variant: str = "charbonnier"
    use_smooth: bool = True
    use_glc: bool = True
    shortcut: str = "f_sp"
    scaled_attention: bool = False
    d_q: int = 64
    d_v: int = 64
    head_hidden: int = 128
    z_hat: float = 10.0
    teacher_forcing_epochs: int = 5
    flow_pretrain_epochs: int = 10
    flow_pretrain_lr: float = 1e-3
    dtype: str = "float32"
    num_threads: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigurationError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.dtype not in DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(DTYPES)}")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        self.model_config()  # validates the stream switches

    @property
    def torch_dtype(self):
        return DTYPES[self.dtype]

    def model_config(self) -> ModelConfig:
        return ModelConfig(encoder=self.encoder, use_motion=self.use_motion, use_spatial=self.use_spatial,
                           use_context=self.use_context, use_msaf=self.use_msaf, shortcut=self.shortcut,
                           scaled_attention=self.scaled_attention, d_q=self.d_q, d_v=self.d_v,
                           head_hidden=self.head_hidden, z_hat=self.z_hat)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["loss_weights"] = self.loss_weights.to_dict()
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights.from_dict(d["loss_weights"])
        if "encoder" in d:
            d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc


def config_diff(a: RunConfig, b: RunConfig):
    """Field names whose values differ between two configs."""
    da, db = a.to_dict(), b.to_dict()
    return sorted(k for k in da if da[k] != db[k])
