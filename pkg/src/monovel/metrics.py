"""Range-bucketed velocity/position MSE and depth-style distance metrics."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import EmptyEvaluationError, InvalidArgumentError

logger = logging.getLogger(__name__)

BUCKETS = ("near", "medium", "far")
NEAR_LIMIT = 20.0
FAR_LIMIT = 45.0


def bucketize(distance_gt: float) -> str:
    """Ties at 20 m and 45 m go to the farther bucket."""
    if not distance_gt > 0:
        raise InvalidArgumentError(f"distance must be positive, got {distance_gt}")
    if distance_gt < NEAR_LIMIT:
        return "near"
    if distance_gt < FAR_LIMIT:
        return "medium"
    return "far"


def _states(x):
    """List of VehicleState or K x 4 array -> K x 4 float64 array [v_x, v_z, p_x, p_z]."""
    if isinstance(x, np.ndarray):
        arr = x
    elif len(x) and hasattr(x[0], "as_array"):
        arr = np.stack([s.as_array() for s in x])
    else:
        arr = np.asarray(x, dtype=np.float64)
    return np.asarray(arr, dtype=np.float64).reshape(-1, 4)


def bucket_average(bucket_mse: Dict[str, Optional[float]]) -> float:
    vals = [bucket_mse[b] for b in BUCKETS if bucket_mse.get(b) is not None]
    if not vals:
        raise EmptyEvaluationError("all buckets are empty")
    return float(sum(vals) / len(vals))


def velocity_mse(predictions, targets):
    """Per-bucket mean squared velocity-error norm; buckets from true distance.

    Returns ``(mse, counts, empty)`` where ``mse`` has keys near/medium/far/avg
    and empty buckets map to None.
    """
    p, t = _states(predictions), _states(targets)
    if p.shape != t.shape:
        raise InvalidArgumentError(f"predictions {p.shape} and targets {t.shape} differ")
    if p.shape[0] == 0:
        raise EmptyEvaluationError("no vehicles to evaluate")
    sq = ((p[:, :2] - t[:, :2]) ** 2).sum(axis=1)
    dist = np.hypot(t[:, 2], t[:, 3])
    labels = np.array([bucketize(d) for d in dist])
    mse, counts, empty = {}, {}, []
    for b in BUCKETS:
        sel = labels == b
        counts[b] = int(sel.sum())
        if counts[b]:
            mse[b] = float(sq[sel].mean())
        else:
            mse[b] = None
            empty.append(b)
    if empty:
        logger.warning("empty range bucket(s) %s excluded from the average", ", ".join(empty))
    mse["avg"] = bucket_average(mse)
    return mse, counts, empty


def position_mse(predictions, targets) -> float:
    p, t = _states(predictions), _states(targets)
    if p.shape[0] == 0:
        raise EmptyEvaluationError("no vehicles to evaluate")
    return float(((p[:, 2:] - t[:, 2:]) ** 2).sum(axis=1).mean())


def distance_metrics(predicted_d, target_d):
    d = np.asarray(predicted_d, dtype=np.float64).ravel()
    g = np.asarray(target_d, dtype=np.float64).ravel()
    if d.shape != g.shape:
        raise InvalidArgumentError("predicted and target distances differ in length")
    if d.size == 0:
        raise EmptyEvaluationError("no distances to evaluate")
    if (d <= 0).any() or (g <= 0).any():
        raise InvalidArgumentError("distances must be positive")
    err = d - g
    ratio = np.maximum(d / g, g / d)
    return {
        "abs_rel": float(np.mean(np.abs(err) / g)),
        "sq_rel": float(np.mean(err ** 2 / g)),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(d) - np.log(g)) ** 2))),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25 ** 2)),
        "delta3": float(np.mean(ratio < 1.25 ** 3)),
    }


@dataclass
class EvalReport:
    mse_velocity: Dict[str, Optional[float]]
    mse_position: float
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    counts: Dict[str, int]
    empty_buckets: List[str] = field(default_factory=list)

    @property
    def total(self):
        return sum(self.counts.values())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def to_table(self, name="model"):
        return format_velocity_table({name: self}) + "\n\n" + format_distance_table({name: self})


def evaluate_states(predictions, targets, pred_distances=None) -> EvalReport:
    """Full report.  Distances default to the planar norm of each position."""
    p, t = _states(predictions), _states(targets)
    mse, counts, empty = velocity_mse(p, t)
    if pred_distances is None:
        pred_distances = np.hypot(p[:, 2], p[:, 3])
    dm = distance_metrics(pred_distances, np.hypot(t[:, 2], t[:, 3]))
    return EvalReport(mse, position_mse(p, t), counts=counts, empty_buckets=empty, **dm)


def _fmt(v, digits=2):
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def _table(header, rows):
    cols = [header] + rows
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    line = lambda r: " | ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def format_velocity_table(reports: Dict[str, EvalReport]):
    header = ["", "Position MSE", "MSE (near)", "MSE (medium)", "MSE (far)", "MSE (avg.)"]
    rows = [[name, _fmt(r.mse_position), *(_fmt(r.mse_velocity.get(b)) for b in (*BUCKETS, "avg"))]
            for name, r in reports.items()]
    return _table(header, rows)


def format_distance_table(reports: Dict[str, EvalReport]):
    header = ["", "AbsRel", "SqRel", "RMSE", "RMSE (log)", "d<1.25", "d<1.25^2", "d<1.25^3"]
    rows = [[name, *(_fmt(getattr(r, k), 3) for k in
                     ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"))]
            for name, r in reports.items()]
    return _table(header, rows)
