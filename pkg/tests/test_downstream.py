import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualstream.downstream import (
    BudgetWarning, DownstreamError, LogregConfig, confusion_matrix, evaluate, extract_dual_features,
    extract_features, label_budget_sweep, logreg_objective, metrics_from_confusion, pca_2d, select_lambda,
    summarize_sweep, train_logreg,
)
from dualstream.model import EmbedderCheckpoint, EmbedderConfig, StagerNet, encode_checkpoint

from .helpers import make_windows, numeric_grad, rel_err

TINY = EmbedderConfig(n_channels=2, n_times=120, n_conv_maps=2, temporal_kernel=7, pool_size=2, embedding_dim=8)


def _fixture_cm():
    # class 0: 40 hits, 10 misses; class 1: 30 hits, 20 misses
    return np.array([[40, 10], [20, 30]])


def test_worked_fixture_metrics():
    rep = metrics_from_confusion(_fixture_cm())
    assert rep.balanced_accuracy == pytest.approx(0.7, abs=1e-12)
    assert rep.weighted_recall == pytest.approx(0.7, abs=1e-12)
    # precisions 40/60 and 30/40 weighted by support 50/50
    assert rep.weighted_precision == pytest.approx(0.5 * (40 / 60) + 0.5 * 0.75, abs=1e-12)
    assert rep.weighted_precision == pytest.approx(0.7083333333333333, abs=1e-12)
    np.testing.assert_allclose(rep.per_class_accuracy, [0.8, 0.6])


def test_perfect_predictions():
    y = np.array([0, 1, 2, 3, 4, 4, 2])
    cm = confusion_matrix(y, y)
    assert np.array_equal(cm, np.diag(np.bincount(y, minlength=5)))
    rep = metrics_from_confusion(cm)
    assert rep.balanced_accuracy == rep.weighted_precision == rep.weighted_recall == 1.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 200))
def test_metric_identities(seed, n):
    rng = np.random.default_rng(seed)
    y, p = rng.integers(0, 5, n), rng.integers(0, 5, n)
    rep = metrics_from_confusion(confusion_matrix(y, p))
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), np.bincount(y, minlength=5))
    present = np.unique(y)
    recalls = [np.mean(p[y == c] == c) for c in present]
    assert rep.balanced_accuracy == pytest.approx(np.mean(recalls), abs=1e-12)
    assert rep.weighted_recall == pytest.approx(np.mean(y == p), abs=1e-12)
    assert 0.0 <= rep.weighted_precision <= 1.0


def test_empty_evaluation_rejected():
    with pytest.raises(DownstreamError):
        metrics_from_confusion(np.zeros((5, 5), dtype=int))


def test_logreg_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((12, 4)), rng.integers(0, 5, 12)
    w, b = rng.standard_normal((5, 4)), rng.standard_normal(5)
    _, gw, gb = logreg_objective(w, b, x, y, 0.3)
    nw = numeric_grad(lambda: logreg_objective(w, b, x, y, 0.3)[0], w)
    nb = numeric_grad(lambda: logreg_objective(w, b, x, y, 0.3)[0], b)
    assert rel_err(gw, nw) < 1e-4 and rel_err(gb, nb) < 1e-4


def test_bias_is_not_penalised():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((6, 3)), rng.integers(0, 5, 6)
    w, b = np.zeros((5, 3)), rng.standard_normal(5)
    a = logreg_objective(w, b, x, y, 0.0)
    big = logreg_objective(w, b, x, y, 100.0)
    assert a[0] == big[0]
    np.testing.assert_array_equal(a[2], big[2])


def test_separable_problem_fits_perfectly():
    rng = np.random.default_rng(2)
    x = np.vstack([rng.normal(-3, 1, (40, 2)), rng.normal(3, 1, (40, 2))])
    y = np.repeat([0, 1], 40)
    clf = train_logreg(x, y, 0.0, LogregConfig(max_iter=2000))
    assert np.mean(clf.predict(x) == y) == 1.0


def test_strong_regularisation_shrinks_weights():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((50, 6)), rng.integers(0, 5, 50)
    clf = train_logreg(x, y, 1e6)
    assert np.linalg.norm(clf.weight) < 1e-2


def test_convergence_and_determinism():
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((60, 3)), rng.integers(0, 5, 60)
    a = train_logreg(x, y, 1e-1)
    b = train_logreg(x, y, 1e-1)
    assert a.converged and a.n_iter < 5000
    np.testing.assert_array_equal(a.weight, b.weight)
    _, gw, gb = logreg_objective(a.weight, a.bias, (x - a.mean) / a.scale, y, 1e-1)
    assert max(np.abs(gw).max(), np.abs(gb).max()) < 1e-6


def test_single_class_flagged():
    clf = train_logreg(np.random.default_rng(0).standard_normal((5, 2)), np.zeros(5, int))
    assert clf.degenerate
    assert np.all(clf.predict(np.zeros((3, 2))) == 0)


def test_logreg_input_errors():
    with pytest.raises(DownstreamError):
        train_logreg(np.zeros((3, 2)), np.zeros(2, int))
    with pytest.raises(DownstreamError):
        train_logreg(np.zeros((2, 2)), np.array([0, 7]))


def test_select_lambda_picks_best_score():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((80, 4))
    y = (x[:, 0] > 0).astype(int)
    best, scores = select_lambda(x[:60], y[:60], x[60:], y[60:], grid=(1e-4, 1e2), cfg=LogregConfig(max_iter=500))
    assert [lam for _, lam in scores] == [1e-4, 1e2]
    assert best == max(scores, key=lambda s: s[0])[1]


# --- features -----------------------------------------------------------------------------

def _ckpt(seed):
    return EmbedderCheckpoint.from_model(StagerNet(TINY, seed=seed))


def test_feature_shapes_and_dual_block_order():
    wins = make_windows(np.arange(5) * 12.0, n_times=120)
    t, f = _ckpt(0), _ckpt(1)
    ft = extract_features(t, wins)
    assert ft.shape == (5, 8)
    dual = extract_dual_features(t, f, wins)
    assert dual.shape == (5, 16)
    np.testing.assert_array_equal(dual[:, :8], ft)
    np.testing.assert_array_equal(dual[:, 8:], extract_features(f, wins))
    np.testing.assert_allclose(extract_features(t, wins, batch=2), ft, rtol=0, atol=1e-12)
    assert extract_features(t, []).shape == (0, 8)


def test_feature_extraction_leaves_checkpoint_unchanged():
    ckpt = _ckpt(0)
    before = encode_checkpoint(ckpt)
    extract_features(ckpt, make_windows(np.arange(4) * 12.0, n_times=120))
    assert encode_checkpoint(ckpt) == before


def test_feature_shape_mismatch():
    with pytest.raises(DownstreamError, match="do not match"):
        extract_features(_ckpt(0), make_windows([0.0], n_times=100))


# --- sweep --------------------------------------------------------------------------------

def _blobs(n_per, seed=0, sd=1.5):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, 2.0, (5, 6))
    x = np.vstack([rng.normal(c, sd, (n_per, 6)) for c in centres])
    return x, np.repeat(np.arange(5), n_per)


def test_sweep_rows_and_all_budget():
    x, y = _blobs(30)
    tx, ty = _blobs(20, seed=1)
    cfg = LogregConfig(max_iter=300)
    rows = label_budget_sweep(x, y, tx, ty, budgets=(1, 5, "all"), n_iterations=3, seed=0, cfg=cfg)
    assert [(r.budget, r.iteration) for r in rows] == [(b, i) for b in ("1", "5", "all") for i in range(3)]
    assert {r.n_train for r in rows if r.budget == "1"} == {5}
    summary = summarize_sweep(rows)
    assert summary[2][0] == "all" and summary[2][2] == 0.0
    assert rows == label_budget_sweep(x, y, tx, ty, budgets=(1, 5, "all"), n_iterations=3, seed=0, cfg=cfg)


def test_sweep_clips_large_budget_with_warning():
    x, y = _blobs(4)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = label_budget_sweep(x, y, x, y, budgets=(10,), n_iterations=1, cfg=LogregConfig(max_iter=50))
    assert any(issubclass(w.category, BudgetWarning) for w in caught)
    assert rows[0].n_train == 20


def test_summarize_sweep_population_sd():
    from dualstream.downstream import SweepRow
    rows = [SweepRow("1", i, v, 5) for i, v in enumerate([0.2, 0.4])]
    assert summarize_sweep(rows) == [("1", pytest.approx(0.3), pytest.approx(0.1))]


# --- projection ---------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 50), d=st.integers(2, 12))
def test_pca_components_and_variance(seed, n, d):
    x = np.random.default_rng(seed).standard_normal((n, d)) * np.arange(1, d + 1)
    proj, comps, vals = pca_2d(x)
    np.testing.assert_allclose(comps @ comps.T, np.eye(2), atol=1e-9)
    top = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1][:2]
    np.testing.assert_allclose(vals, top, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(proj.var(axis=0, ddof=1), top, rtol=1e-6, atol=1e-12)
    assert np.all(comps[np.arange(2), np.argmax(np.abs(comps), axis=1)] > 0)


def test_pca_rejects_tiny_input():
    with pytest.raises(DownstreamError):
        pca_2d(np.zeros((1, 3)))
