"""Training, evaluation and checkpointing."""
from __future__ import annotations

import csv
import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from ..errors import DatasetFormatError, NonFiniteLossError
from ..losses import FrameBatch, total_loss
from ..metrics import EvalReport, bucketize, evaluate_states
from ..model import VelocityNet, collate, prepare_sample
from ..scenegen import load_dataset, load_tusimple_format
from .config import RunConfig

logger = logging.getLogger(__name__)

EVAL_CHUNK = 16


def seed_everything(seed, num_threads=1):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)
    torch.set_num_threads(num_threads)


def load_samples(path):
    """Load a dataset directory: our manifest layout, else Tusimple clips."""
    if path is None:
        raise DatasetFormatError("no dataset given")
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("dataset directory does not exist", path)
    if (path / "manifest.json").exists():
        return load_dataset(path)
    samples = load_tusimple_format(path)
    if not samples:
        raise DatasetFormatError("no manifest.json and no Tusimple clips found", path)
    return samples


@dataclass
class Checkpoint:
    model_state: Dict[str, torch.Tensor]
    config: RunConfig
    epoch: int
    rng_state: dict
    best_metric: dict = field(default_factory=dict)
    history: List[dict] = field(default_factory=list)
    loss_trajectory: List[float] = field(default_factory=list)
    optimizer_state: Optional[dict] = None

    def build_model(self) -> VelocityNet:
        model = VelocityNet(self.config.model_config()).to(self.config.torch_dtype)
        model.load_state_dict(self.model_state)
        model.eval()
        return model

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "model_state": self.model_state,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "best_metric": self.best_metric,
            "history": self.history,
            "loss_trajectory": self.loss_trajectory,
            "optimizer_state": self.optimizer_state,
        }
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(payload, tmp)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path):
        payload = torch.load(path, map_location="cpu", weights_only=False)
        payload["config"] = RunConfig.from_dict(payload["config"])
        return cls(**payload)


def _rng_state(np_rng):
    return {"torch": torch.get_rng_state(), "numpy": np_rng.bit_generator.state, "python": random.getstate()}


def frame_losses(out, batch, cfg: RunConfig, flow_crops=None):
    """Sum of per-frame total losses over the minibatch, plus summed breakdown."""
    if flow_crops is None:
        flow_crops = (None, None)
    f_crop, im_crop = flow_crops
    total = None
    breakdown = {"reg": 0.0, "smooth": 0.0, "rel": 0.0, "total": 0.0}
    for sl in batch.frame_slices:
        fb = FrameBatch(out["states"][sl], batch.targets[sl],
                        None if f_crop is None else f_crop[sl], None if im_crop is None else im_crop[sl])
        loss, parts = total_loss(fb, cfg.loss_weights, cfg.loss_variant, cfg.use_smooth, cfg.use_glc)
        total = loss if total is None else total + loss
        for k in breakdown:
            breakdown[k] += float(parts[k].detach())
    return total, breakdown


def balanced_flow_l1(flow, gt):
    """Mean L1 flow error, averaged separately over moving and static pixels.

    Moving vehicles cover a few percent of a frame; without balancing the
    static background dominates and the network settles on zero flow.
    """
    err = (flow - gt).abs().sum(dim=1)
    moving = gt.abs().sum(dim=1) > 0
    terms = [err[m].mean() for m in (moving, ~moving) if bool(m.any())]
    return sum(terms) / len(terms)


def pretrain_flow(model: VelocityNet, prepared, cfg: RunConfig, rng):
    """Supervised warm-up of the flow network on ground-truth flow.

    Stands in for a flow network pretrained on an external flow dataset.
    """
    usable = [p for p in prepared if p.flow_gt is not None]
    if not usable or cfg.flow_pretrain_epochs <= 0:
        return []
    flownet = model.motion.flownet
    opt = torch.optim.Adam(flownet.parameters(), lr=cfg.flow_pretrain_lr)
    history = []
    for epoch in range(cfg.flow_pretrain_epochs):
        order = rng.permutation(len(usable))
        total, n = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [usable[i] for i in order[start:start + cfg.batch_size]]
            prev = torch.stack([p.prev for p in chunk])
            curr = torch.stack([p.curr for p in chunk])
            gt = torch.stack([p.flow_gt for p in chunk])
            _, flow = flownet(prev, curr)
            loss = balanced_flow_l1(flow, gt)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
            n += len(chunk)
        history.append({"flow_epoch": epoch + 1, "flow_l1": total / n})
    return history


def train(config: RunConfig, samples=None, eval_samples=None, out_dir=None, log_path=None) -> Checkpoint:
    """Mini-batch Adam on the total loss.  Deterministic given ``config.seed``."""
    seed_everything(config.seed, config.num_threads)
    np_rng = np.random.default_rng(config.seed)
    if samples is None:
        if config.dataset is None:
            raise DatasetFormatError("no dataset given")
        samples = load_samples(config.dataset)
    if eval_samples is None and config.eval_dataset:
        eval_samples = load_samples(config.eval_dataset)
    dtype = config.torch_dtype
    prepared = [prepare_sample(s, config.z_hat, dtype) for s in samples]
    if not prepared:
        raise DatasetFormatError("dataset is empty", config.dataset)

    model = VelocityNet(config.model_config()).to(dtype)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "train_log.jsonl"
    log_fh = open(log_path, "w") if log_path is not None else None

    def log(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()

    try:
        for rec in pretrain_flow(model, prepared, config, np_rng):
            log(rec)
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
        has_flow = all(p.flow_gt is not None for p in prepared)
        trajectory, history = [], []
        best = {}
        for epoch in range(1, config.epochs + 1):
            t0 = time.time()
            model.train()
            teacher = has_flow and epoch <= config.teacher_forcing_epochs
            order = np_rng.permutation(len(prepared))
            sums = {"reg": 0.0, "smooth": 0.0, "rel": 0.0, "total": 0.0}
            preds, targets = [], []
            for b_id, start in enumerate(range(0, len(order), config.batch_size)):
                batch = collate([prepared[i] for i in order[start:start + config.batch_size]])
                out = model(batch, teacher_forcing=teacher)
                crops = model.smoothness_crops(batch, out["flow"]) if config.use_smooth else None
                loss, parts = frame_losses(out, batch, config, crops)
                if not torch.isfinite(loss):
                    diag = {"epoch": epoch, "batch": b_id, "clip_ids": batch.clip_ids, "terms": parts}
                    if out_dir is not None:
                        (out_dir / "nonfinite_dump.json").write_text(json.dumps(diag, indent=2, default=str))
                    raise NonFiniteLossError(f"non-finite loss at epoch {epoch} batch {b_id}", diag)
                opt.zero_grad()
                loss.backward()
                opt.step()
                trajectory.append(loss.item())
                for k in sums:
                    sums[k] += parts[k]
                preds.append(out["states"].detach().double().numpy())
                targets.append(batch.targets.double().numpy())
            report = evaluate_states(np.concatenate(preds), np.concatenate(targets))
            record = {"epoch": epoch, "teacher_forcing": teacher, **{f"loss_{k}": v for k, v in sums.items()},
                      "train_mse_velocity": report.mse_velocity["avg"], "train_mse_position": report.mse_position,
                      "seconds": time.time() - t0}
            if eval_samples is not None:
                ev = evaluate_model(model, eval_samples, config)
                record["eval_mse_velocity"] = ev.mse_velocity["avg"]
                record["eval_mse_position"] = ev.mse_position
            history.append(record)
            log(record)
            key = record.get("eval_mse_velocity", record["train_mse_velocity"])
            if not best or key < best["mse_velocity"]:
                best = {"epoch": epoch, "mse_velocity": key}
            logger.info("epoch %d loss %.4f vel-mse %.3f", epoch, sums["total"], record["train_mse_velocity"])
    finally:
        if log_fh is not None:
            log_fh.close()

    ckpt = Checkpoint(
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        config=config, epoch=config.epochs, rng_state=_rng_state(np_rng), best_metric=best,
        history=history, loss_trajectory=trajectory, optimizer_state=opt.state_dict())
    if out_dir is not None:
        ckpt.save(out_dir / "checkpoint.pt")
    return ckpt


@torch.no_grad()
def predict_states(model: VelocityNet, samples, config: RunConfig, prepared=None):
    """Returns ``(pred, target, clip_ids)``; pred/target are K x 4 float64 arrays."""
    model.eval()
    if prepared is None:
        prepared = [prepare_sample(s, config.z_hat, config.torch_dtype) for s in samples]
    preds, targets, ids = [], [], []
    for start in range(0, len(prepared), EVAL_CHUNK):
        batch = collate(prepared[start:start + EVAL_CHUNK])
        out = model(batch)
        preds.append(out["states"].double().numpy())
        targets.append(batch.targets.double().numpy())
        for cid, sl in zip(batch.clip_ids, batch.frame_slices):
            ids.extend((cid, i) for i in range(sl.stop - sl.start))
    return np.concatenate(preds), np.concatenate(targets), ids


def evaluate_model(model, samples, config, csv_path=None) -> EvalReport:
    pred, target, ids = predict_states(model, samples, config)
    if csv_path is not None:
        write_vehicle_csv(csv_path, pred, target, ids)
    return evaluate_states(pred, target)


def evaluate(checkpoint: Checkpoint, samples, csv_path=None) -> EvalReport:
    return evaluate_model(checkpoint.build_model(), samples, checkpoint.config, csv_path)


CSV_FIELDS = ["clip_id", "vehicle", "pred_p_x", "pred_p_z", "pred_v_x", "pred_v_z",
              "gt_p_x", "gt_p_z", "gt_v_x", "gt_v_z", "gt_distance", "bucket"]


def write_vehicle_csv(path, pred, target, ids):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for (cid, k), p, t in zip(ids, pred, target):
            d = math.hypot(t[2], t[3])
            # repr of a Python float round-trips exactly
            values = [p[2], p[3], p[0], p[1], t[2], t[3], t[0], t[1], d]
            w.writerow([cid, k, *(repr(float(v)) for v in values), bucketize(d)])


def baseline_reports(samples, config: Optional[RunConfig] = None):
    """Zero-velocity and reference-depth-only predictors on ``samples``."""
    config = config or RunConfig(dtype="float64")
    prepared = [prepare_sample(s, config.z_hat, torch.float64) for s in samples]
    batch = collate(prepared)
    targets = batch.targets.numpy()
    zero_v = targets.copy()
    zero_v[:, :2] = 0.0
    ref = targets.copy()
    z = batch.z_ref.numpy()
    ref[:, 2] = batch.lateral.numpy() * z
    ref[:, 3] = z
    return {"zero_velocity": evaluate_states(zero_v, targets), "reference_only": evaluate_states(ref, targets)}
