"""Multi-seed desk experiment: the full pipeline per seed with stage timings."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import COMBOS, PipelineConfig, load_config

TASKS = ("rp", "ts", "fs")


@dataclass
class SeedResult:
    seed: int
    balanced_accuracy: dict[str, float]
    pretext: dict[str, dict]  # task -> best_epoch, epochs_run, val_loss, val_accuracy, seconds
    sweep: dict[str, list]  # combo -> [(budget, mean, sd)]
    seconds: float


@dataclass
class DeskResult:
    seeds: list[SeedResult] = field(default_factory=list)
    seconds: float = 0.0

    def mean_balanced_accuracy(self) -> dict[str, float]:
        return {c: float(np.mean([s.balanced_accuracy[c] for s in self.seeds])) for c in COMBOS}

    def improvements(self) -> dict[str, float]:
        m = self.mean_balanced_accuracy()
        return {"rp+fs - rp": m["rp+fs"] - m["rp"], "ts+fs - ts": m["ts+fs"] - m["ts"]}

    def mean_sweep(self, combo: str) -> list[tuple[str, float, float]]:
        """Per budget, the seed-averaged mean and across-iteration sd."""
        rows = [s.sweep[combo] for s in self.seeds]
        return [(rows[0][i][0], float(np.mean([r[i][1] for r in rows])), float(np.mean([r[i][2] for r in rows])))
                for i in range(len(rows[0]))]

    def to_json(self) -> str:
        return json.dumps({"seconds": self.seconds, "seeds": [asdict(s) for s in self.seeds],
                           "mean_balanced_accuracy": self.mean_balanced_accuracy(),
                           "improvements": self.improvements()}, indent=2, sort_keys=True)


def run_seed(cfg: PipelineConfig, out_dir, progress=None) -> SeedResult:
    lay = pl.Layout(out_dir)
    lay.root.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if cfg.data.source == "synth":
        pl.run_synth(cfg, lay)
    else:
        pl.run_ingest(cfg, lay)
    pl.run_prep(cfg, lay)
    pretext = {}
    for task in TASKS:
        t = time.perf_counter()
        pl.run_sample(cfg, lay, task)
        meta = pl.run_pretrain(cfg, lay, task, progress)
        pretext[task] = {k: meta[k] for k in ("best_epoch", "epochs_run", "val_loss", "val_accuracy")}
        pretext[task]["seconds"] = time.perf_counter() - t
    pl.run_embed(cfg, lay)
    bacc, sweep = {}, {}
    for combo in COMBOS:
        bacc[combo] = pl.run_downstream(cfg, lay, combo).balanced_accuracy
        sweep[combo] = [list(r) for r in pl.run_sweep(cfg, lay, combo)]
    pl.run_project2d(cfg, lay)
    pl.run_report(cfg, lay)
    return SeedResult(cfg.seed, bacc, pretext, sweep, time.perf_counter() - t0)


def run_desk_experiment(config_path, seeds=(0, 1, 2), out_root=None, progress=None) -> DeskResult:
    """Run the pipeline once per seed under ``out_root/seed<k>``; write ``summary.json``."""
    base = load_config(config_path)
    root = Path(out_root or base.out_dir)
    result = DeskResult()
    t0 = time.perf_counter()
    for seed in seeds:
        result.seeds.append(run_seed(base.with_seed(seed), root / f"seed{seed}", progress))
        if progress is not None:
            progress(f"seed {seed} done in {result.seeds[-1].seconds:.0f} s")
    result.seconds = time.perf_counter() - t0
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.json").write_text(result.to_json() + "\n")
    return result
