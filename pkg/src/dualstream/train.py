"""Recording-level splits and pretext-task training with early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ContrastiveHead, EmbedderCheckpoint, EmbedderConfig, StagerNet
from .samplers import PretextExample

log = logging.getLogger(__name__)

TASK_CODES = {"rp": 11, "ts": 12, "fs": 13}


class TrainingError(RuntimeError):
    pass


# --- splits ----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr):
            errs.append(f"split fractions must be nonnegative, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            errs.append(f"split fractions sum to {sum(fr):.6g}, not 1")
        return errs


def split_recordings(ids, spec: SplitSpec = SplitSpec()) -> dict[str, list[str]]:
    """Shuffle recording ids and cut them into train/val/test by whole recordings."""
    errs = spec.validate()
    if errs:
        raise ValueError("; ".join(errs))
    ids = sorted(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate recording ids")
    order = [ids[i] for i in np.random.default_rng([spec.seed, 7]).permutation(len(ids))]
    n = len(ids)
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    n_val = min(n_val, n - n_train)
    return {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train : n_train + n_val]),
        "test": sorted(order[n_train + n_val :]),
    }


# --- window lookup ---------------------------------------------------------------

class WindowBank:
    """Stacked window data addressed by ``(recording_id, start_sample)``."""

    def __init__(self, windows):
        windows = list(windows)
        self.keys = [w.key for w in windows]
        self._row = {k: i for i, k in enumerate(self.keys)}
        if len(self._row) != len(self.keys):
            raise ValueError("duplicate window keys")
        self.data = np.stack([np.asarray(w.data, dtype=np.float64) for w in windows]) if windows else None

    def __len__(self) -> int:
        return len(self.keys)

    def rows(self, examples) -> np.ndarray:
        try:
            return np.array([[self._row[r] for r in ex.refs] for ex in examples], dtype=np.int64)
        except KeyError as exc:
            raise TrainingError(f"example refers to unknown window {exc.args[0]}") from None


# --- pretraining -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainRunConfig:
    max_epochs: int = 70
    patience: int = 10
    batch_size: int = 256
    seed: int = 0
    alpha: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_batch: int = 256
    group_by_recording: bool = True

    def validate(self) -> list[str]:
        errs = []
        if self.max_epochs < 1:
            errs.append("max_epochs must be >= 1")
        if self.patience < 1 or self.patience > self.max_epochs:
            errs.append(f"patience={self.patience} must lie in [1, max_epochs={self.max_epochs}]")
        if self.batch_size < 2:
            errs.append("batch_size must be >= 2 (batch norm needs several values)")
        if self.alpha < 0:
            errs.append("alpha must be >= 0")
        return errs


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    improved: bool


@dataclass(eq=False)
class PretrainResult:
    checkpoint: EmbedderCheckpoint
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best(self) -> EpochRecord:
        return self.history[self.best_epoch - 1]


def _logits(net, head, data, rows, training, rng):
    """Embed each distinct window of the batch once, then gather per example slot."""
    uniq, inverse = np.unique(rows, return_inverse=True)
    inverse = inverse.reshape(rows.shape)
    emb = net(data[uniq], training=training, rng=rng)
    return head([ad.take_rows(emb, inverse[:, k]) for k in range(rows.shape[1])], training, rng)


def _batches(rows, recordings, cfg: TrainRunConfig, rng):
    """Shuffled index batches; optionally confined to one recording each so
    every batch touches few distinct windows."""
    n = len(rows)
    if not cfg.group_by_recording:
        perm = rng.permutation(n)
        return [perm[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
    out = []
    for rid in sorted(set(recordings)):
        idx = np.flatnonzero(recordings == rid)
        idx = idx[rng.permutation(idx.size)]
        out.extend(idx[i : i + cfg.batch_size] for i in range(0, idx.size, cfg.batch_size))
    return [out[i] for i in rng.permutation(len(out))]


def evaluate_pretext(net, head, data, rows, labels, eval_batch: int = 256) -> tuple[float, float]:
    """Eval-mode mean BCE loss and accuracy (logit > 0 predicts 1)."""
    uniq, inverse = np.unique(rows, return_inverse=True)
    inverse = inverse.reshape(rows.shape)
    emb = np.concatenate([net(data[uniq[i : i + eval_batch]]).values for i in range(0, uniq.size, eval_batch)])
    logits = head([ad.Tensor(emb[inverse[:, k]]) for k in range(rows.shape[1])]).values
    loss = float(ad.bce_with_logits(ad.Tensor(logits), labels).values)
    return loss, float(np.mean((logits > 0) == (labels == 1)))


def pretrain(task: str, train_examples: list[PretextExample], val_examples: list[PretextExample],
             bank: WindowBank, embedder_cfg: EmbedderConfig = EmbedderConfig(),
             run_cfg: TrainRunConfig = TrainRunConfig(), progress=None) -> PretrainResult:
    """Train a fresh embedder plus ``task`` head on pseudo-labels.

    Validation loss is measured in eval mode after every epoch; training stops
    at ``max_epochs`` or after ``patience`` epochs without improvement on the
    best loss so far. The returned checkpoint holds the best epoch's weights.
    """
    if task not in TASK_CODES:
        raise TrainingError(f"unknown pretext task {task!r}")
    if not train_examples or not val_examples:
        raise TrainingError(f"{task}: empty split ({len(train_examples)} train, {len(val_examples)} val examples)")
    errs = run_cfg.validate() + embedder_cfg.validate()
    if errs:
        raise TrainingError("; ".join(errs))
    if bank.data is None or bank.data.shape[1:] != (embedder_cfg.n_channels, embedder_cfg.n_times):
        shape = None if bank.data is None else bank.data.shape[1:]
        raise TrainingError(f"windows of shape {shape} do not fit embedder input "
                            f"({embedder_cfg.n_channels}, {embedder_cfg.n_times})")

    net = StagerNet(embedder_cfg, seed=run_cfg.seed)
    head = ContrastiveHead(task, embedder_cfg.embedding_dim, embedder_cfg.dropout_p, seed=run_cfg.seed)
    params = net.parameters() + head.parameters()
    opt = ad.OptimizerState(run_cfg.alpha, run_cfg.beta1, run_cfg.beta2, run_cfg.eps)
    rng = np.random.default_rng([run_cfg.seed, TASK_CODES[task]])

    tr_rows, va_rows = bank.rows(train_examples), bank.rows(val_examples)
    tr_y = np.array([ex.label for ex in train_examples], dtype=np.float64)
    va_y = np.array([ex.label for ex in val_examples], dtype=np.float64)
    tr_rec = np.array([ex.refs[0][0] for ex in train_examples])

    history: list[EpochRecord] = []
    best_loss, best_epoch, best_state, stale = math.inf, 0, None, 0
    for epoch in range(1, run_cfg.max_epochs + 1):
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(tr_rows, tr_rec, run_cfg, rng)):
            loss = ad.bce_with_logits(_logits(net, head, bank.data, tr_rows[idx], True, rng), tr_y[idx])
            value = float(loss.values)
            if not math.isfinite(value):
                raise TrainingError(f"{task}: non-finite training loss {value} at epoch {epoch}, batch {b}")
            for p in params:
                p.zero_grad()
            loss.backward()
            ad.adam_step([p.values for p in params], [p.grad for p in params], opt)
            total += value * idx.size
            count += idx.size
        val_loss, val_acc = evaluate_pretext(net, head, bank.data, va_rows, va_y, run_cfg.eval_batch)
        if not math.isfinite(val_loss):
            raise TrainingError(f"{task}: non-finite validation loss at epoch {epoch}")
        improved = val_loss < best_loss
        if improved:
            best_loss, best_epoch, stale = val_loss, epoch, 0
            best_state = net.state_arrays()
        else:
            stale += 1
        rec = EpochRecord(epoch, total / count, val_loss, val_acc, improved)
        history.append(rec)
        line = (f"{task} epoch {epoch:3d} train_loss {rec.train_loss:.4f} "
                f"val_loss {val_loss:.4f} val_acc {val_acc:.4f}{' *' if improved else ''}")
        log.info(line)
        if progress is not None:
            progress(line)
        if stale >= run_cfg.patience:
            break

    net.load_arrays(*best_state)
    best = history[best_epoch - 1]
    ckpt = EmbedderCheckpoint.from_model(
        net, task=task, seed=run_cfg.seed, epochs_run=len(history), best_epoch=best_epoch,
        val_loss=best.val_loss, val_accuracy=best.val_accuracy,
    )
    return PretrainResult(ckpt, history, best_epoch)
