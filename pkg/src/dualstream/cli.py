"""Command-line entry point: ``dualstream <subcommand> --config cfg.json``.

Exit status is 0 on success; failures print one line
``error: <ErrorClass>: <message>`` to stderr and exit with status 1
(2 for usage errors).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import pipeline as pl
from .config import COMBOS, ConfigError, PipelineConfig, load_config

TASKS = ("rp", "ts", "fs")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config (JSON)")
    common.add_argument("--seed-override", type=int, default=None, help="replace the config's top-level seed")
    common.add_argument("--out-dir", default=None, help="replace the config's output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes for pretrain")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch log lines")

    p = argparse.ArgumentParser(prog="dualstream", description="Dual-stream self-supervised sleep staging pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate synthetic recordings")
    sub.add_parser("ingest", parents=[common], help="read EDF/raw files listed in data.paths")
    sub.add_parser("prep", parents=[common], help="filter, downsample, window, normalise; fix the split")
    s = sub.add_parser("sample", parents=[common], help="sample pretext examples")
    s.add_argument("tasks", nargs="+", choices=TASKS)
    s = sub.add_parser("pretrain", parents=[common], help="train embedders on pretext examples")
    s.add_argument("tasks", nargs="+", choices=TASKS)
    s = sub.add_parser("embed", parents=[common], help="extract frozen features from every checkpoint")
    s.add_argument("tasks", nargs="*", choices=TASKS)
    s = sub.add_parser("downstream", parents=[common], help="fit and evaluate the sleep-stage classifier")
    s.add_argument("combos", nargs="+", choices=COMBOS)
    s = sub.add_parser("sweep", parents=[common], help="label-budget sweep")
    s.add_argument("combos", nargs="+", choices=COMBOS)
    sub.add_parser("report", parents=[common], help="summarise metrics and pretext training")
    s = sub.add_parser("project2d", parents=[common], help="2-D PCA projection of a feature set")
    s.add_argument("combo", nargs="?", choices=COMBOS)
    sub.add_parser("run-all", parents=[common], help="every stage in order")
    return p


def _load(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    if args.out_dir is not None:
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def run_all(cfg: PipelineConfig, lay: pl.Layout, jobs: int = 1, progress=None) -> str:
    if cfg.data.source == "synth":
        pl.run_synth(cfg, lay)
    else:
        pl.run_ingest(cfg, lay)
    pl.run_prep(cfg, lay)
    for t in TASKS:
        pl.run_sample(cfg, lay, t)
    pl.run_pretrain_many(cfg, lay, TASKS, jobs, progress)
    pl.run_embed(cfg, lay)
    for c in COMBOS:
        pl.run_downstream(cfg, lay, c)
        pl.run_sweep(cfg, lay, c)
    pl.run_project2d(cfg, lay)
    return pl.run_report(cfg, lay)


def dispatch(args) -> None:
    cfg = _load(args)
    lay = pl.Layout(cfg.out_dir)
    lay.root.mkdir(parents=True, exist_ok=True)
    progress = None if args.quiet else (lambda line: print(line, file=sys.stderr, flush=True))
    cmd = args.command
    if cmd == "synth":
        ids = pl.run_synth(cfg, lay)
        print(f"wrote {len(ids)} recordings to {lay.recordings}")
    elif cmd == "ingest":
        ids = pl.run_ingest(cfg, lay)
        print(f"ingested {len(ids)} recordings into {lay.recordings}")
    elif cmd == "prep":
        splits = pl.run_prep(cfg, lay)
        print("split: " + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    elif cmd == "sample":
        for t in args.tasks:
            counts = pl.run_sample(cfg, lay, t)
            print(f"{t}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    elif cmd == "pretrain":
        for t, meta in pl.run_pretrain_many(cfg, lay, args.tasks, args.jobs, progress).items():
            print(f"{t}: best epoch {meta['best_epoch']}/{meta['epochs_run']}, "
                  f"val_loss {meta['val_loss']:.4f}, val_acc {meta['val_accuracy']:.4f}")
    elif cmd == "embed":
        done = pl.run_embed(cfg, lay, args.tasks or TASKS)
        print(f"features: {', '.join(done)}")
    elif cmd == "downstream":
        for c in args.combos:
            rep = pl.run_downstream(cfg, lay, c)
            print(f"{c}: balanced accuracy {rep.balanced_accuracy:.4f}")
    elif cmd == "sweep":
        for c in args.combos:
            for budget, mean, sd in pl.run_sweep(cfg, lay, c):
                print(f"{c} budget {budget}: {mean:.4f} +/- {sd:.4f}")
    elif cmd == "report":
        print(pl.run_report(cfg, lay), end="")
    elif cmd == "project2d":
        _, _, vals = pl.run_project2d(cfg, lay, args.combo)
        print(f"projection eigenvalues: {vals[0]:.6g}, {vals[1]:.6g}")
    elif cmd == "run-all":
        print(run_all(cfg, lay, args.jobs, progress), end="")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except ConfigError as exc:
        print(f"error: ConfigError: {len(exc.problems)} problem(s): " + " | ".join(exc.problems), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single-line report is the contract
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
