"""Ablation runner: one training run per switch combination and seed."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import statistics
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from ..errors import ConfigurationError, DatasetFormatError
from ..losses import LOSS_VARIANTS
from ..metrics import BUCKETS, EvalReport, _fmt, _table
from .config import ABLATION_SWITCHES, RunConfig
from .train import evaluate_model, load_samples, train

logger = logging.getLogger(__name__)

SWITCH_VALUES = {
    "use_motion": (True, False),
    "use_spatial": (True, False),
    "use_context": (True, False),
    "use_msaf": (True, False),
    "loss_variant": LOSS_VARIANTS,
    "use_smooth": (True, False),
    "use_glc": (True, False),
    "shortcut": ("f_sp", "context"),
}

_STREAMS = ("use_motion", "use_spatial", "use_context", "use_msaf")
TABLE5_ROWS = {
    "M": dict(zip(_STREAMS, (True, False, False, False))),
    "M+SP": dict(zip(_STREAMS, (True, True, False, False))),
    "M+SP+C": dict(zip(_STREAMS, (True, True, True, False))),
    "M+SP+C+MSAF": dict(zip(_STREAMS, (True, True, True, True))),
}
TABLE6_ROWS = {
    "L1": dict(loss_variant="L1", use_smooth=False, use_glc=False),
    "smoothL1": dict(loss_variant="smoothL1", use_smooth=False, use_glc=False),
    "Cha": dict(loss_variant="charbonnier", use_smooth=False, use_glc=False),
    "Cha+Smooth": dict(loss_variant="charbonnier", use_smooth=True, use_glc=False),
    "Cha+Smooth+Rel": dict(loss_variant="charbonnier", use_smooth=True, use_glc=True),
}
PRESETS = {"table5": TABLE5_ROWS, "table6": TABLE6_ROWS}


def grid_rows(axes: Sequence[str]) -> Dict[str, dict]:
    """Cartesian product of the listed switches, named ``key=value,...``."""
    unknown = [a for a in axes if a not in ABLATION_SWITCHES]
    if unknown:
        raise ConfigurationError(f"unknown ablation axes {unknown}; choose from {ABLATION_SWITCHES}")
    if not axes:
        raise ConfigurationError("no ablation axes given")
    rows = {}
    for values in itertools.product(*(SWITCH_VALUES[a] for a in axes)):
        overrides = dict(zip(axes, values))
        rows[",".join(f"{k}={v}" for k, v in overrides.items())] = overrides
    return rows


def resolve_axes(axes) -> Dict[str, dict]:
    """``axes`` is a preset name, a list of switch names, or a ``{row: overrides}`` mapping."""
    if isinstance(axes, str):
        if axes in PRESETS:
            return dict(PRESETS[axes])
        axes = [a.strip() for a in axes.split(",") if a.strip()]
    if isinstance(axes, Mapping):
        for name, overrides in axes.items():
            bad = set(overrides) - set(ABLATION_SWITCHES)
            if bad:
                raise ConfigurationError(f"row {name!r} sets non-ablation fields {sorted(bad)}")
        return {k: dict(v) for k, v in axes.items()}
    return grid_rows(list(axes))


@dataclass
class RunResult:
    row: str
    seed: int
    overrides: dict
    report: Optional[EvalReport] = None
    error: Optional[str] = None
    seconds: Optional[float] = None

    @property
    def ok(self):
        return self.report is not None

    def to_dict(self):
        return {"row": self.row, "seed": self.seed, "overrides": self.overrides,
                "report": None if self.report is None else self.report.to_dict(), "error": self.error,
                "seconds": self.seconds}

    @classmethod
    def from_dict(cls, d):
        report = None if d.get("report") is None else EvalReport.from_dict(d["report"])
        return cls(d["row"], d["seed"], d["overrides"], report, d.get("error"), d.get("seconds"))


@dataclass
class AblationTable:
    rows: List[str]
    results: List[RunResult] = field(default_factory=list)

    def runs(self, row) -> List[RunResult]:
        return [r for r in self.results if r.row == row]

    def median(self, row, key="avg") -> Optional[float]:
        """Median over successful seeds of a velocity-MSE bucket or ``"position"``."""
        vals = []
        for r in self.runs(row):
            if not r.ok:
                continue
            v = r.report.mse_position if key == "position" else r.report.mse_velocity.get(key)
            if v is not None:
                vals.append(v)
        return statistics.median(vals) if vals else None

    def to_table(self):
        header = ["", "runs", "Position MSE", "MSE (near)", "MSE (medium)", "MSE (far)", "MSE (avg.)"]
        lines = []
        for row in self.rows:
            runs = self.runs(row)
            ok = sum(r.ok for r in runs)
            status = f"{ok}/{len(runs)}" + ("" if ok == len(runs) else " FAILED")
            lines.append([row, status, _fmt(self.median(row, "position")),
                          *(_fmt(self.median(row, b)) for b in (*BUCKETS, "avg"))])
        return _table(header, lines)

    def to_dict(self):
        return {"rows": self.rows, "results": [r.to_dict() for r in self.results]}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["rows"]), [RunResult.from_dict(r) for r in d["results"]])


def run_config(base: RunConfig, overrides: dict, seed: int) -> RunConfig:
    return base.replace(seed=seed, **overrides)


def ablate(config: RunConfig, axes, seeds: Optional[Sequence[int]] = None, samples=None,
           eval_samples=None, out_dir=None) -> AblationTable:
    """Train and evaluate one run per row and seed.

    A row whose config is invalid or whose training raises is recorded as
    failed; the table is still produced.  With ``out_dir`` every finished run
    is stored under ``runs/`` keyed by a hash of its full config and reused
    later, so an interrupted sweep resumes where it stopped and identical
    rows of different tables train once.
    """
    rows = resolve_axes(axes)
    seeds = [config.seed] if seeds is None else list(seeds)
    if samples is None:
        if config.dataset is None:
            raise DatasetFormatError("no dataset given")
        samples = load_samples(config.dataset)
    if eval_samples is None:
        eval_samples = load_samples(config.eval_dataset) if config.eval_dataset else samples
    out_dir = Path(out_dir) if out_dir is not None else None
    table = AblationTable(list(rows))
    for name, overrides in rows.items():
        for seed in seeds:
            table.results.append(_run_one(config, name, overrides, seed, samples, eval_samples, out_dir))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.json").write_text(json.dumps(table.to_dict(), indent=2))
        (out_dir / "ablation.txt").write_text(table.to_table() + "\n")
    return table


def _run_one(base, name, overrides, seed, samples, eval_samples, out_dir):
    cache = None
    try:
        cfg = run_config(base, overrides, seed)
    except (ConfigurationError, TypeError) as exc:
        return RunResult(name, seed, overrides, error=f"invalid config: {exc}")
    if out_dir is not None:
        cache = out_dir / "runs" / f"{config_hash(cfg)}.json"
        if cache.exists():
            stored = json.loads(cache.read_text())
            if stored.get("config") == cfg.to_dict() and stored.get("report") is not None:
                logger.info("reusing %s", cache)
                return RunResult(name, seed, overrides, EvalReport.from_dict(stored["report"]),
                                 seconds=stored.get("seconds"))
    logger.info("ablation run %s seed %d", name, seed)
    t0 = time.perf_counter()
    try:
        ckpt = train(cfg, samples)
        result = RunResult(name, seed, overrides, evaluate_model(ckpt.build_model(), eval_samples, cfg),
                           seconds=time.perf_counter() - t0)
    except Exception as exc:  # a failed run is reported, not fatal
        logger.warning("run %s seed %d failed: %s", name, seed, exc)
        result = RunResult(name, seed, overrides, error="".join(traceback.format_exception_only(type(exc), exc)).strip())
    if cache is not None and result.ok:
        cache.parent.mkdir(parents=True, exist_ok=True)
        cache.write_text(json.dumps({"config": cfg.to_dict(), "report": result.report.to_dict(),
                                     "seconds": result.seconds}, indent=2))
    return result


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha1(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
