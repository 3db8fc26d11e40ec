"""Frozen-feature extraction, multinomial logistic regression, sleep-staging
metrics, the label-budget sweep and a 2-D PCA projection."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .io.recording import N_STAGES
from .model import EmbedderCheckpoint

log = logging.getLogger(__name__)

LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_BUDGETS = (1, 10, 100, 1000, 10000, 50000, "all")


class DownstreamError(ValueError):
    pass


class BudgetWarning(UserWarning):
    pass


# --- features ----------------------------------------------------------------------

def extract_features(ckpt: EmbedderCheckpoint, windows, batch: int = 256) -> np.ndarray:
    """Eval-mode embeddings, one row per window."""
    cfg = ckpt.config
    data = _stack(windows, cfg)
    if data.shape[0] == 0:
        return np.zeros((0, cfg.embedding_dim))
    net = ckpt.to_model()
    return np.concatenate([net(data[i : i + batch]).values for i in range(0, data.shape[0], batch)])


def extract_dual_features(time_ckpt: EmbedderCheckpoint, fs_ckpt: EmbedderCheckpoint, windows,
                          batch: int = 256) -> np.ndarray:
    """Time-domain block first, frequency-similarity block second."""
    return np.hstack([extract_features(time_ckpt, windows, batch), extract_features(fs_ckpt, windows, batch)])


def _stack(windows, cfg) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        data = windows
    else:
        windows = list(windows)
        if not windows:
            return np.zeros((0, cfg.n_channels, cfg.n_times))
        data = np.stack([np.asarray(w.data, dtype=np.float64) for w in windows])
    if data.ndim != 3 or data.shape[1:] != (cfg.n_channels, cfg.n_times):
        raise DownstreamError(
            f"windows of shape {data.shape[1:]} do not match checkpoint input ({cfg.n_channels}, {cfg.n_times})"
        )
    return data


# --- logistic regression -----------------------------------------------------------

@dataclass(frozen=True)
class LogregConfig:
    max_iter: int = 5000
    tol: float = 1e-6
    alpha: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    standardize: bool = True


@dataclass(eq=False)
class LinearClassifier:
    weight: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    mean: np.ndarray
    scale: np.ndarray
    l2_lambda: float
    n_iter: int = 0
    converged: bool = False
    degenerate: bool = False

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return z @ self.weight.T + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_function(x), axis=1)


def logreg_objective(weight, bias, x, y, l2_lambda, n_classes=N_STAGES):
    """Mean softmax cross-entropy plus ``(lambda/2)||W||^2`` and its gradients.

    The bias is not penalised. Returns ``(loss, grad_weight, grad_bias)``.
    """
    n = x.shape[0]
    rows = np.arange(n)
    logits = x @ weight.T + bias
    # one shifted exponential serves both the log-partition and the softmax
    shifted = logits - logits.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    total = expo.sum(axis=1, keepdims=True)
    loss = np.mean(np.log(total[:, 0]) - shifted[rows, y]) + 0.5 * l2_lambda * np.sum(weight**2)
    resid = expo / total
    resid[rows, y] -= 1.0
    resid /= n
    return loss, resid.T @ x + l2_lambda * weight, resid.sum(axis=0)


def train_logreg(features, labels, l2_lambda: float = 1e-3, cfg: LogregConfig = LogregConfig(),
                 n_classes: int = N_STAGES) -> LinearClassifier:
    """Full-batch Adam on the regularised softmax objective.

    Stops when every gradient entry is below ``cfg.tol`` in magnitude or after
    ``cfg.max_iter`` iterations. Single-class inputs train but are flagged.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise DownstreamError(f"features {x.shape} and labels {y.shape} do not align (or are empty)")
    if y.min() < 0 or y.max() >= n_classes:
        raise DownstreamError(f"labels must lie in [0, {n_classes})")
    if cfg.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    z = (x - mean) / scale
    degenerate = np.unique(y).size < 2
    if degenerate:
        log.warning("logistic regression trained on a single class (%d)", int(y[0]))
    w = np.zeros((n_classes, x.shape[1]))
    b = np.zeros(n_classes)
    m = [np.zeros_like(w), np.zeros_like(b)]
    v = [np.zeros_like(w), np.zeros_like(b)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        _, gw, gb = logreg_objective(w, b, z, y, l2_lambda, n_classes)
        if max(np.abs(gw).max(initial=0.0), np.abs(gb).max()) < cfg.tol:
            converged = True
            break
        c1, c2 = 1 - cfg.beta1**it, 1 - cfg.beta2**it
        for p, g, mi, vi in ((w, gw, m[0], v[0]), (b, gb, m[1], v[1])):
            mi *= cfg.beta1
            mi += (1 - cfg.beta1) * g
            vi *= cfg.beta2
            vi += (1 - cfg.beta2) * g * g
            p -= cfg.alpha * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
    return LinearClassifier(w, b, mean, scale, l2_lambda, it, converged, degenerate)


# --- metrics -----------------------------------------------------------------------

@dataclass(eq=False)
class MetricsReport:
    confusion: np.ndarray  # rows true, columns predicted
    balanced_accuracy: float
    weighted_precision: float
    weighted_recall: float
    per_class_accuracy: np.ndarray
    n_examples: int
    support: np.ndarray = field(default=None)

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [("balanced_accuracy", self.balanced_accuracy),
                ("weighted_precision", self.weighted_precision),
                ("weighted_recall", self.weighted_recall),
                ("n_examples", float(self.n_examples))]
        rows += [(f"accuracy_class_{c}", float(a)) for c, a in enumerate(self.per_class_accuracy)]
        return rows


def confusion_matrix(y_true, y_pred, n_classes: int = N_STAGES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    """Support-weighted precision and recall; balanced accuracy is the mean
    recall over classes present in the evaluation labels."""
    cm = np.asarray(cm, dtype=np.int64)
    n = int(cm.sum())
    if n == 0:
        raise DownstreamError("no examples to evaluate")
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    present = support > 0
    return MetricsReport(
        confusion=cm,
        balanced_accuracy=float(recall[present].mean()),
        weighted_precision=float(np.sum(support * precision) / n),
        weighted_recall=float(np.sum(support * recall) / n),
        per_class_accuracy=recall,
        n_examples=n,
        support=support,
    )


def evaluate(classifier: LinearClassifier, features, labels, n_classes: int = N_STAGES) -> MetricsReport:
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise DownstreamError("no examples to evaluate")
    return metrics_from_confusion(confusion_matrix(y, classifier.predict(features), n_classes))


def select_lambda(train_x, train_y, val_x, val_y, grid=LAMBDA_GRID, cfg: LogregConfig = LogregConfig()):
    """Regularisation strength with the best validation balanced accuracy (first wins ties)."""
    scores = [(evaluate(train_logreg(train_x, train_y, lam, cfg), val_x, val_y).balanced_accuracy, lam)
              for lam in grid]
    best = max(scores, key=lambda s: s[0])
    return best[1], scores


# --- label-budget sweep ------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    budget: str
    iteration: int
    balanced_accuracy: float
    n_train: int


def _draw_budget(labels, budget: int, rng, n_classes: int = N_STAGES) -> np.ndarray:
    picks = []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        if budget > idx.size:
            warnings.warn(f"budget {budget} exceeds class {c} size {idx.size}; clipped", BudgetWarning, stacklevel=3)
        picks.append(rng.choice(idx, size=min(budget, idx.size), replace=False))
    return np.sort(np.concatenate(picks))


def label_budget_sweep(train_x, train_y, test_x, test_y, budgets=DEFAULT_BUDGETS, n_iterations: int = 5,
                       seed: int = 0, l2_lambda: float = 1e-3, cfg: LogregConfig = LogregConfig()):
    """Per budget, draw that many examples per class, train and score on the full test set.

    ``"all"`` uses the whole training set once (it has no sampling variance);
    the row is repeated so every budget carries ``n_iterations`` rows.
    """
    train_y = np.asarray(train_y, dtype=np.int64)
    rows: list[SweepRow] = []
    for b_i, budget in enumerate(budgets):
        if budget == "all":
            clf = train_logreg(train_x, train_y, l2_lambda, cfg)
            ba = evaluate(clf, test_x, test_y).balanced_accuracy
            rows += [SweepRow("all", it, ba, len(train_y)) for it in range(n_iterations)]
            continue
        budget = int(budget)
        if budget < 1:
            raise DownstreamError(f"budget must be >= 1, got {budget}")
        for it in range(n_iterations):
            rng = np.random.default_rng([seed, b_i, it])
            idx = _draw_budget(train_y, budget, rng)
            clf = train_logreg(train_x[idx], train_y[idx], l2_lambda, cfg)
            rows.append(SweepRow(str(budget), it, evaluate(clf, test_x, test_y).balanced_accuracy, idx.size))
    return rows


def summarize_sweep(rows) -> list[tuple[str, float, float]]:
    """``(budget, mean, population sd)`` in first-appearance order."""
    order, groups = [], {}
    for r in rows:
        if r.budget not in groups:
            order.append(r.budget)
            groups[r.budget] = []
        groups[r.budget].append(r.balanced_accuracy)
    # identical scores get an exact zero rather than mean-rounding residue
    return [(b, float(np.mean(groups[b])), float(np.std(groups[b])) if np.ptp(groups[b]) > 0 else 0.0)
            for b in order]


# --- 2-D projection ----------------------------------------------------------------

def pca_2d(features) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project centred features on the top two covariance eigenvectors.

    Returns ``(projected (n, 2), components (2, d), eigenvalues (2,))``; each
    component's largest-magnitude entry is made positive for a stable sign.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise DownstreamError(f"PCA needs at least 2 rows and 2 columns, got {x.shape}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    comps = vecs[:, order].T
    flip = np.sign(comps[np.arange(2), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return xc @ comps.T, comps, vals[order]
