"""Static figures from training logs and evaluation reports."""
from __future__ import annotations

import csv
import json
import tempfile
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import InvalidArgumentError  # noqa: E402
from ..metrics import BUCKETS, EvalReport  # noqa: E402

MANIFEST = "plots_manifest.json"
# fixed metadata keeps repeated renders byte-identical
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}


def read_log(path) -> List[dict]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read log {path}: {exc}") from exc
    records = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}:{n}: not JSON ({exc})") from exc
    epochs = [r for r in records if "epoch" in r]
    if not epochs:
        raise InvalidArgumentError(f"log {path} has no epoch records")
    return epochs


def read_report(path) -> EvalReport:
    try:
        return EvalReport.from_json(Path(path).read_text())
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise InvalidArgumentError(f"cannot read report {path}: {exc}") from exc


def read_vehicle_csv(path) -> Dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidArgumentError(f"{path} has no vehicles")
    cols = [k for k in rows[0] if k.startswith(("pred_", "gt_"))]
    return {k: np.array([float(r[k]) for r in rows]) for k in cols}


def loss_curve_figure(records):
    epochs = [r["epoch"] for r in records]
    fig, (ax_loss, ax_mse) = plt.subplots(1, 2, figsize=(10, 4))
    for key in ("loss_total", "loss_reg", "loss_smooth", "loss_rel"):
        if any(key in r for r in records):
            ax_loss.plot(epochs, [r.get(key, np.nan) for r in records], label=key[5:])
    ax_loss.set_yscale("symlog")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("summed loss")
    ax_loss.legend()
    for key in ("train_mse_velocity", "eval_mse_velocity", "train_mse_position", "eval_mse_position"):
        if any(key in r for r in records):
            ax_mse.plot(epochs, [r.get(key, np.nan) for r in records], label=key)
    ax_mse.set_xlabel("epoch")
    ax_mse.set_ylabel("MSE")
    ax_mse.legend()
    fig.tight_layout()
    return fig


def bucket_bar_figure(report: EvalReport):
    names = [*BUCKETS, "avg"]
    values = [np.nan if report.mse_velocity.get(b) is None else report.mse_velocity[b] for b in names]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(names, values, color=["#4c72b0", "#55a868", "#c44e52", "#8172b2"])
    for i, b in enumerate(BUCKETS):
        ax.annotate(f"n={report.counts.get(b, 0)}", (i, 0), ha="center", va="bottom")
    ax.set_ylabel("velocity MSE")
    fig.tight_layout()
    return fig


def scatter_figure(columns: Dict[str, np.ndarray]):
    """Predicted against ground truth for each state component, with the identity line."""
    comps = ["v_x", "v_z", "p_x", "p_z"]
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.6))
    for ax, c in zip(axes, comps):
        gt, pred = columns[f"gt_{c}"], columns[f"pred_{c}"]
        ax.scatter(gt, pred, s=6)
        lo, hi = float(min(gt.min(), pred.min())), float(max(gt.max(), pred.max()))
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        ax.set_xlabel(f"ground truth {c}")
        ax.set_ylabel(f"predicted {c}")
    fig.tight_layout()
    return fig


def plot(out_dir, log=None, report=None, vehicles_csv=None) -> List[Path]:
    """Render every figure the inputs allow and write a manifest.

    Inputs are read and validated before anything is written, and figures go
    to a scratch directory first, so a failure leaves ``out_dir`` untouched.
    A report's per-vehicle CSV is picked up from ``<report>.csv`` when present.
    """
    if log is None and report is None:
        raise InvalidArgumentError("nothing to plot: give a log or a report")
    figures = {}
    if log is not None:
        figures["loss_curves.png"] = loss_curve_figure(read_log(log))
    if report is not None:
        rep = report if isinstance(report, EvalReport) else read_report(report)
        figures["bucket_mse.png"] = bucket_bar_figure(rep)
        if vehicles_csv is None and not isinstance(report, EvalReport):
            candidate = Path(report).with_suffix(".csv")
            vehicles_csv = candidate if candidate.exists() else None
    if vehicles_csv is not None:
        figures["scatter.png"] = scatter_figure(read_vehicle_csv(vehicles_csv))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        for name, fig in figures.items():
            fig.savefig(Path(tmp) / name, **_SAVE_KW)
            plt.close(fig)
        for name in figures:
            (Path(tmp) / name).replace(out_dir / name)
            written.append(out_dir / name)
    (out_dir / MANIFEST).write_text(json.dumps({"files": [p.name for p in written]}, indent=2))
    return written
