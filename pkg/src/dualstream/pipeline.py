"""Pipeline stages operating on an output directory.

Each stage reads the artifacts of earlier stages from disk and writes its own;
a missing input raises :class:`MissingArtifactError` naming the stage to run.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import COMBOS, PipelineConfig
from .downstream import (
    LogregConfig,
    evaluate,
    label_budget_sweep,
    pca_2d,
    select_lambda,
    summarize_sweep,
    train_logreg,
    extract_features,
)
from .io import Recording, SleepStage, generate_synthetic, read_edf, read_raw, write_raw
from .model import load_checkpoint, save_checkpoint
from .prep import Window, preprocess
from .samplers import read_examples, sample_task, write_examples
from .train import TASK_CODES, WindowBank, pretrain, split_recordings

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
STAGE_NAMES = [s.name for s in SleepStage]


class MissingArtifactError(RuntimeError):
    def __init__(self, path: Path, step: str):
        super().__init__(f"{path} not found; run `{step}` first")
        self.path, self.step = path, step


class Layout:
    def __init__(self, out_dir):
        self.root = Path(out_dir)

    recordings = property(lambda self: self.root / "recordings")
    prep = property(lambda self: self.root / "prep")
    window_index = property(lambda self: self.root / "prep" / "windows.csv")
    splits = property(lambda self: self.root / "splits.json")
    examples = property(lambda self: self.root / "examples")
    checkpoints = property(lambda self: self.root / "checkpoints")
    logs = property(lambda self: self.root / "logs")
    features = property(lambda self: self.root / "features")
    metrics = property(lambda self: self.root / "metrics")
    sweep = property(lambda self: self.root / "sweep")
    projection = property(lambda self: self.root / "projection")

    def require(self, path: Path, step: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(path, step)
        return path


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- acquisition -------------------------------------------------------------------

def _store_recordings(recs, lay: Layout) -> list[str]:
    lay.recordings.mkdir(parents=True, exist_ok=True)
    for old in lay.recordings.glob("*.raw"):
        old.unlink()
    ids = [r.id for r in recs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate recording ids: {sorted(ids)}")
    for r in recs:
        write_raw(r, lay.recordings / f"{r.id}.raw")
    return ids


def run_synth(cfg: PipelineConfig, lay: Layout) -> list[str]:
    return _store_recordings(generate_synthetic(cfg.synth), lay)


def _stage_sidecar(path: Path):
    """Optional ``<stem>.stages.csv`` next to an EDF file: ``start_sample,stage`` rows."""
    side = path.with_suffix(".stages.csv")
    if not side.is_file():
        return None
    return [(int(r["start_sample"]), SleepStage[r["stage"]]) for r in _read_csv(side)]


def run_ingest(cfg: PipelineConfig, lay: Layout) -> list[str]:
    recs = []
    for p in map(Path, cfg.data.paths):
        if p.suffix.lower() == ".edf":
            rec = read_edf(p)
            anns = _stage_sidecar(p)
            if anns is not None:
                rec = rec.replace(stage_annotations=anns)
        else:
            rec = read_raw(p)
        recs.append(rec)
    return _store_recordings(recs, lay)


# --- preprocessing -----------------------------------------------------------------

WINDOW_FIELDS = ("recording_id", "window", "start_sample", "stage", "flagged")


def run_prep(cfg: PipelineConfig, lay: Layout) -> dict[str, list[str]]:
    """Windows per recording persist as a raw file of concatenated windows plus
    one index row per window; the recording split is fixed here."""
    src = sorted(lay.require(lay.recordings, "synth` or `ingest").glob("*.raw"))
    if not src:
        raise MissingArtifactError(lay.recordings / "*.raw", "synth` or `ingest")
    lay.prep.mkdir(parents=True, exist_ok=True)
    for old in lay.prep.glob("*.raw"):
        old.unlink()
    rows = []
    for path in src:
        rec = read_raw(path)
        wins = preprocess(rec, cfg.prep)
        data = np.concatenate([w.data for w in wins], axis=1)
        anns = None
        if all(w.stage is not None for w in wins):
            anns = []
            for k, w in enumerate(wins):
                if not anns or anns[-1][1] != w.stage:
                    anns.append((k * cfg.prep.window_len, w.stage))
        write_raw(Recording(list(cfg.prep.keep_channels), cfg.prep.target_rate,
                            data.astype(np.float32), anns, rec.id), lay.prep / f"{rec.id}.raw")
        for k, w in enumerate(wins):
            rows.append((rec.id, k, w.start_sample, "" if w.stage is None else w.stage.name, int(w.flagged)))
    _write_csv(lay.window_index, WINDOW_FIELDS, rows)
    splits = split_recordings([p.stem for p in src], cfg.split)
    lay.splits.write_text(json.dumps(splits, indent=2, sort_keys=True) + "\n")
    return splits


def load_windows(lay: Layout) -> dict[str, list[Window]]:
    index = _read_csv(lay.require(lay.window_index, "prep"))
    by_rec: dict[str, list[dict]] = {}
    for r in index:
        by_rec.setdefault(r["recording_id"], []).append(r)
    out = {}
    for rid, rows in sorted(by_rec.items()):
        rec = read_raw(lay.require(lay.prep / f"{rid}.raw", "prep"))
        data = rec.data.astype(np.float64)
        n = data.shape[1] // len(rows)
        out[rid] = [
            Window(data[:, k * n : (k + 1) * n], int(r["start_sample"]), rid, rec.sample_rate,
                   SleepStage[r["stage"]] if r["stage"] else None, r["flagged"] == "1")
            for k, r in enumerate(rows)
        ]
    return out


def load_splits(lay: Layout) -> dict[str, list[str]]:
    return json.loads(lay.require(lay.splits, "prep").read_text())


# --- pretext sampling and training -------------------------------------------------

def run_sample(cfg: PipelineConfig, lay: Layout, task: str) -> dict[str, int]:
    windows, splits = load_windows(lay), load_splits(lay)
    scfg = cfg.sampler(task)
    out = {split: [ex for rid in splits[split] for ex in sample_task(task, windows[rid], scfg, cfg.welch)]
           for split in ("train", "val")}
    lay.examples.mkdir(parents=True, exist_ok=True)
    write_examples(lay.examples / f"{task}.csv", out)
    return {k: len(v) for k, v in out.items()}


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy", "improved")


def run_pretrain(cfg: PipelineConfig, lay: Layout, task: str, progress=None) -> dict:
    examples = read_examples(lay.require(lay.examples / f"{task}.csv", f"sample {task}"))
    windows, splits = load_windows(lay), load_splits(lay)
    bank = WindowBank([w for rid in splits["train"] + splits["val"] for w in windows[rid]])
    res = pretrain(task, examples.get("train", []), examples.get("val", []), bank, cfg.embedder,
                   cfg.train_run(), progress)
    lay.checkpoints.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.checkpoint, lay.checkpoints / f"{task}.ckpt")
    _write_csv(lay.logs / f"{task}_history.csv", HISTORY_FIELDS,
               [(h.epoch, h.train_loss, h.val_loss, h.val_accuracy, int(h.improved)) for h in res.history])
    return res.checkpoint.metadata


def _pretrain_job(args):
    cfg, root, task = args
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    return task, run_pretrain(cfg, Layout(root), task)


def run_pretrain_many(cfg: PipelineConfig, lay: Layout, tasks, jobs: int = 1, progress=None) -> dict:
    tasks = list(dict.fromkeys(tasks))
    for t in tasks:
        lay.require(lay.examples / f"{t}.csv", f"sample {t}")
    if jobs <= 1 or len(tasks) == 1:
        return {t: run_pretrain(cfg, lay, t, progress) for t in tasks}
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return dict(pool.map(_pretrain_job, [(cfg, str(lay.root), t) for t in tasks]))


# --- features and downstream -------------------------------------------------------

INDEX_FIELDS = ("split", "recording_id", "start_sample", "stage")


def _ordered_windows(lay: Layout):
    windows, splits = load_windows(lay), load_splits(lay)
    out = []
    for split in SPLITS:
        for rid in splits[split]:
            out.extend((split, w) for w in windows[rid])
    return out


def run_embed(cfg: PipelineConfig, lay: Layout, tasks=tuple(TASK_CODES)) -> list[str]:
    done = []
    ordered = _ordered_windows(lay)
    lay.features.mkdir(parents=True, exist_ok=True)
    for task in tasks:
        path = lay.checkpoints / f"{task}.ckpt"
        if not path.exists():
            continue
        feats = extract_features(load_checkpoint(path), [w for _, w in ordered])
        np.save(lay.features / f"{task}.npy", feats)
        done.append(task)
    if not done:
        raise MissingArtifactError(lay.checkpoints / "<task>.ckpt", "pretrain")
    _write_csv(lay.features / "index.csv", INDEX_FIELDS,
               [(s, w.recording_id, w.start_sample, "" if w.stage is None else w.stage.name) for s, w in ordered])
    return done


def combo_tasks(combo: str) -> list[str]:
    if combo not in COMBOS:
        raise ValueError(f"unknown feature combination {combo!r}; choose from {COMBOS}")
    return combo.split("+")


def load_combo(lay: Layout, combo: str):
    """Features for ``combo`` (time-domain block first) split by recording split."""
    blocks = [np.load(lay.require(lay.features / f"{t}.npy", "embed")) for t in combo_tasks(combo)]
    x = np.hstack(blocks)
    index = _read_csv(lay.require(lay.features / "index.csv", "embed"))
    split = np.array([r["split"] for r in index])
    stage = np.array([SleepStage[r["stage"]] if r["stage"] else -1 for r in index], dtype=np.int64)
    if np.all(stage < 0):
        raise ValueError("no window carries a sleep-stage label; downstream evaluation needs annotations")
    out = {}
    for s in SPLITS:
        keep = (split == s) & (stage >= 0)
        out[s] = (x[keep], stage[keep])
    return out, x, index


def _logreg_cfg(cfg: PipelineConfig) -> LogregConfig:
    return LogregConfig(max_iter=cfg.downstream.max_iter, tol=cfg.downstream.tol, seed=cfg.seed)


def _lambda_for(cfg: PipelineConfig, data) -> tuple[float, list]:
    if cfg.downstream.l2_lambda is not None:
        return cfg.downstream.l2_lambda, []
    (tx, ty), (vx, vy) = data["train"], data["val"]
    return select_lambda(tx, ty, vx, vy, cfg.downstream.lambda_grid, _logreg_cfg(cfg))


def _tag(combo: str) -> str:
    return combo.replace("+", "_")


def run_downstream(cfg: PipelineConfig, lay: Layout, combo: str):
    data, _, _ = load_combo(lay, combo)
    lam, scores = _lambda_for(cfg, data)
    clf = train_logreg(*data["train"], lam, _logreg_cfg(cfg))
    rep = evaluate(clf, *data["test"])
    tag = _tag(combo)
    _write_csv(lay.metrics / f"{tag}.csv", ("metric", "value"),
               [("l2_lambda", lam)] + rep.as_rows())
    _write_csv(lay.metrics / f"{tag}_confusion.csv", ["true\\pred"] + STAGE_NAMES,
               [[STAGE_NAMES[i]] + list(row) for i, row in enumerate(rep.confusion)])
    if scores:
        _write_csv(lay.metrics / f"{tag}_lambda.csv", ("l2_lambda", "val_balanced_accuracy"),
                   [(lam_, ba) for ba, lam_ in scores])
    (lay.metrics / f"{tag}.txt").write_text(format_report(combo, lam, rep))
    return rep


def format_report(combo: str, lam: float, rep) -> str:
    lines = [f"features: {combo}", f"l2_lambda: {lam!r}", f"test windows: {rep.n_examples}",
             f"balanced accuracy:  {rep.balanced_accuracy:.4f}",
             f"weighted precision: {rep.weighted_precision:.4f}",
             f"weighted recall:    {rep.weighted_recall:.4f}", "",
             "per-class accuracy (support):"]
    lines += [f"  {STAGE_NAMES[c]:>2}: {a:.4f} ({int(n)})"
              for c, (a, n) in enumerate(zip(rep.per_class_accuracy, rep.support))]
    lines += ["", "confusion (rows true, columns predicted):", "      " + " ".join(f"{s:>5}" for s in STAGE_NAMES)]
    lines += [f"  {STAGE_NAMES[i]:>2}  " + " ".join(f"{v:5d}" for v in row) for i, row in enumerate(rep.confusion)]
    return "\n".join(lines) + "\n"


def _stored_lambda(cfg: PipelineConfig, lay: Layout, combo: str) -> float | None:
    """Lambda chosen by a ``downstream`` run on the current features, if one exists."""
    path = lay.metrics / f"{_tag(combo)}.csv"
    if cfg.downstream.l2_lambda is not None or not path.exists():
        return None
    newest = max((lay.features / f).stat().st_mtime_ns for f in [f"{t}.npy" for t in combo_tasks(combo)] + ["index.csv"])
    if path.stat().st_mtime_ns < newest:
        return None
    rows = {r["metric"]: r["value"] for r in _read_csv(path)}
    return float(rows["l2_lambda"]) if "l2_lambda" in rows else None


def run_sweep(cfg: PipelineConfig, lay: Layout, combo: str):
    data, _, _ = load_combo(lay, combo)
    lam = _stored_lambda(cfg, lay, combo)
    if lam is None:
        lam, _ = _lambda_for(cfg, data)
    rows = label_budget_sweep(*data["train"], *data["test"], cfg.downstream.budgets, cfg.downstream.n_iterations,
                              cfg.seed, lam, _logreg_cfg(cfg))
    tag = _tag(combo)
    _write_csv(lay.sweep / f"{tag}.csv", ("budget", "iteration", "balanced_accuracy", "n_train"),
               [(r.budget, r.iteration, r.balanced_accuracy, r.n_train) for r in rows])
    summary = summarize_sweep(rows)
    _write_csv(lay.sweep / f"{tag}_summary.csv", ("budget", "mean_balanced_accuracy", "sd_balanced_accuracy"), summary)
    return summary


def run_project2d(cfg: PipelineConfig, lay: Layout, combo: str | None = None):
    combo = combo or cfg.downstream.project_combo
    _, x, index = load_combo(lay, combo)
    proj, comps, vals = pca_2d(x)
    tag = _tag(combo)
    _write_csv(lay.projection / f"{tag}.csv", ("x", "y", "stage", "split", "recording_id", "start_sample"),
               [(p[0], p[1], r["stage"], r["split"], r["recording_id"], r["start_sample"])
                for p, r in zip(proj, index)])
    _write_csv(lay.projection / f"{tag}_components.csv", ["component", "eigenvalue"] + [f"f{i}" for i in range(x.shape[1])],
               [[k, vals[k]] + list(comps[k]) for k in range(2)])
    return proj, comps, vals


def run_report(cfg: PipelineConfig, lay: Layout) -> str:
    lay.require(lay.metrics, "downstream")
    results = {}
    for combo in COMBOS:
        path = lay.metrics / f"{_tag(combo)}.csv"
        if path.exists():
            results[combo] = {r["metric"]: float(r["value"]) for r in _read_csv(path)}
    if not results:
        raise MissingArtifactError(lay.metrics / "<combo>.csv", "downstream")
    rows = [(c, m["balanced_accuracy"], m["weighted_precision"], m["weighted_recall"], m["l2_lambda"])
            for c, m in results.items()]
    _write_csv(lay.root / "report.csv",
               ("features", "balanced_accuracy", "weighted_precision", "weighted_recall", "l2_lambda"), rows)
    lines = [f"seed {cfg.seed}", "", f"{'features':<8} {'bal.acc':>8} {'w.prec':>8} {'w.rec':>8}"]
    lines += [f"{c:<8} {ba:8.4f} {wp:8.4f} {wr:8.4f}" for c, ba, wp, wr, _ in rows]
    for dual, single in (("rp+fs", "rp"), ("ts+fs", "ts")):
        if dual in results and single in results:
            d = results[dual]["balanced_accuracy"] - results[single]["balanced_accuracy"]
            lines.append(f"{dual} - {single}: {d:+.4f}")
    pre = []
    for task in TASK_CODES:
        hist = lay.logs / f"{task}_history.csv"
        if hist.exists():
            h = _read_csv(hist)
            best = min(h, key=lambda r: (float(r["val_loss"]), int(r["epoch"])))
            pre.append(f"{task} pretext: {len(h)} epochs, best epoch {best['epoch']}, "
                       f"val_loss {float(best['val_loss']):.4f}, val_acc {float(best['val_accuracy']):.4f}")
    if pre:
        lines += [""] + pre
    for combo in results:
        summ = lay.sweep / f"{_tag(combo)}_summary.csv"
        if summ.exists():
            lines += ["", f"label-budget sweep ({combo}): budget mean sd"]
            lines += [f"  {r['budget']:>6} {float(r['mean_balanced_accuracy']):.4f} "
                      f"{float(r['sd_balanced_accuracy']):.4f}" for r in _read_csv(summ)]
    text = "\n".join(lines) + "\n"
    (lay.root / "report.txt").write_text(text)
    return text
