"""Command-line entry point: ``monovel <datagen|train|eval|ablate|plot> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ConfigurationError, MonovelError
from ..scenegen import SceneConfig, export_dataset, generate_dataset
from .ablate import ablate
from .config import RunConfig
from .plot import plot
from .train import Checkpoint, evaluate, load_samples, train

DEFAULT_CLIPS = 200


def _read_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc


def cmd_datagen(args):
    raw = _read_json(args.config)
    num_clips = args.num_clips or raw.pop("num_clips", DEFAULT_CLIPS)
    prefix = raw.pop("prefix", "clip")
    samples = generate_dataset(SceneConfig.from_dict(raw), num_clips, prefix=prefix)
    export_dataset(samples, args.out)
    print(f"wrote {len(samples)} clips to {args.out}")


def _run_config(args):
    cfg = RunConfig.from_dict(_read_json(args.config))
    changes = {}
    if getattr(args, "data", None):
        changes["dataset"] = str(args.data)
    if getattr(args, "eval_data", None):
        changes["eval_dataset"] = str(args.eval_data)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def cmd_train(args):
    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    ckpt = train(cfg, out_dir=out)
    last = ckpt.history[-1]
    print(f"trained {ckpt.epoch} epochs; final loss {last['loss_total']:.4f}; checkpoint {out / 'checkpoint.pt'}")


def cmd_eval(args):
    ckpt = Checkpoint.load(args.ckpt)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report = evaluate(ckpt, load_samples(args.data), csv_path=report_path.with_suffix(".csv"))
    report_path.write_text(report.to_json(indent=2))
    print(report.to_table(Path(args.ckpt).stem))


def cmd_ablate(args):
    cfg = _run_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    axes = args.axes if args.axes in ("table5", "table6") else [a.strip() for a in args.axes.split(",") if a.strip()]
    table = ablate(cfg, axes, seeds=seeds, out_dir=args.out)
    print(table.to_table())
    for r in table.results:
        if not r.ok:
            print(f"failed: {r.row} seed {r.seed}: {r.error}", file=sys.stderr)


def cmd_plot(args):
    for path in plot(args.out, log=args.log, report=args.report, vehicles_csv=args.csv):
        print(path)


def build_parser():
    parser = argparse.ArgumentParser(prog="monovel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON with SceneConfig fields, plus optional num_clips and prefix")
    p.add_argument("--out", required=True)
    p.add_argument("--num-clips", type=int)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="report JSON path; per-vehicle CSV is written alongside")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    p.add_argument("--config", help="RunConfig JSON (must name a dataset unless --data is given)")
    p.add_argument("--axes", required=True, help="table5, table6, or comma-separated switch names")
    p.add_argument("--data")
    p.add_argument("--eval-data")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--out", help="directory for per-run results and the table")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render figures from a training log or eval report")
    src = p.add_argument_group("inputs")
    src.add_argument("--log")
    src.add_argument("--report")
    src.add_argument("--csv", help="per-vehicle CSV (defaults to the report's sibling .csv)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except MonovelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
