import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualstream.model import EmbedderConfig, encode_checkpoint
from dualstream.prep import Window
from dualstream.samplers import PretextExample
from dualstream.train import SplitSpec, TrainingError, TrainRunConfig, WindowBank, pretrain, split_recordings

from .helpers import make_windows

TINY = EmbedderConfig(n_channels=2, n_times=120, n_conv_maps=2, temporal_kernel=7, pool_size=2, embedding_dim=8)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 10_000))
def test_split_partitions_recordings(n, seed):
    ids = [f"r{i:03d}" for i in range(n)]
    sp = split_recordings(ids, SplitSpec(seed=seed))
    parts = [set(sp[k]) for k in ("train", "val", "test")]
    assert sum(map(len, parts)) == n
    assert set().union(*parts) == set(ids)
    assert all(a.isdisjoint(b) for i, a in enumerate(parts) for b in parts[i + 1 :])
    assert sp == split_recordings(list(reversed(ids)), SplitSpec(seed=seed))


def test_split_sizes_follow_fractions():
    sp = split_recordings([f"r{i}" for i in range(20)])
    assert [len(sp[k]) for k in ("train", "val", "test")] == [12, 4, 4]


def test_split_errors():
    with pytest.raises(ValueError, match="sum"):
        split_recordings(["a"], SplitSpec(0.5, 0.2, 0.2))
    with pytest.raises(ValueError, match="duplicate"):
        split_recordings(["a", "a"])


def _bank(n_recs=3, n_win=8, seed=0):
    wins = []
    for r in range(n_recs):
        wins += make_windows(np.arange(n_win) * 12.0, f"rec{r}", n_times=120, seed=seed + r)
    return WindowBank(wins), wins


def _examples(wins, rec, n=12, seed=0):
    rng = np.random.default_rng(seed)
    pool = [w for w in wins if w.recording_id == rec]
    out = []
    for _ in range(n):
        i, j = rng.choice(len(pool), 2, replace=False)
        out.append(PretextExample("rp", (pool[i].key, pool[j].key), int(rng.integers(0, 2))))
    return out


def test_window_bank_rows():
    bank, wins = _bank()
    ex = _examples(wins, "rec1", 3)
    rows = bank.rows(ex)
    assert rows.shape == (3, 2)
    for e, r in zip(ex, rows):
        assert [bank.keys[i] for i in r] == list(e.refs)
    with pytest.raises(TrainingError, match="unknown window"):
        bank.rows([PretextExample("rp", (("nope", 0), ("nope", 1)), 1)])


def _run(embedder=TINY, **kw):
    bank, wins = _bank()
    cfg = dict(max_epochs=6, patience=2, batch_size=8, seed=0)
    cfg.update(kw)
    train = _examples(wins, "rec0") + _examples(wins, "rec1", seed=1)
    val = _examples(wins, "rec2", seed=2)
    return pretrain("rp", train, val, bank, embedder, TrainRunConfig(**cfg))


def test_patience_stops_after_stale_epochs():
    # zero learning rate and no batch norm: validation loss never changes
    no_bn = EmbedderConfig(**{**TINY.__dict__, "use_batch_norm": False})
    res = _run(alpha=0.0, patience=3, max_epochs=20, embedder=no_bn)
    assert len(res.history) == 4
    assert res.best_epoch == 1
    assert [r.improved for r in res.history] == [True, False, False, False]
    assert res.checkpoint.metadata["epochs_run"] == 4


def test_max_epochs_cap_and_best_checkpoint():
    res = _run(max_epochs=3, patience=3)
    assert len(res.history) == 3
    best = min(res.history, key=lambda r: r.val_loss)
    assert res.best_epoch == best.epoch
    meta = res.checkpoint.metadata
    assert meta["val_loss"] == best.val_loss and meta["best_epoch"] == best.epoch and meta["task"] == "rp"


def test_seeded_runs_are_identical():
    a, b = _run(), _run()
    assert a.history == b.history
    assert encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint)
    c = _run(seed=1)
    assert encode_checkpoint(c.checkpoint) != encode_checkpoint(a.checkpoint)


def test_ungrouped_batches_also_train():
    res = _run(group_by_recording=False, max_epochs=2)
    assert len(res.history) == 2 and np.isfinite(res.best.val_loss)


def test_empty_split_rejected():
    bank, wins = _bank()
    with pytest.raises(TrainingError, match="empty split"):
        pretrain("rp", _examples(wins, "rec0"), [], bank, TINY)


def test_unknown_task_and_shape_mismatch():
    bank, wins = _bank()
    ex = _examples(wins, "rec0")
    with pytest.raises(TrainingError, match="unknown pretext"):
        pretrain("xx", ex, ex, bank, TINY)
    with pytest.raises(TrainingError, match="do not fit"):
        pretrain("rp", ex, ex, bank, EmbedderConfig())


def test_non_finite_loss_raises():
    wins = make_windows(np.arange(6) * 12.0, "rec0", n_times=120)
    wins[0] = Window(np.full((2, 120), np.nan), wins[0].start_sample, "rec0", 10.0, None)
    bank = WindowBank(wins)
    ex = [PretextExample("rp", (wins[i].key, wins[(i + 1) % 6].key), i % 2) for i in range(6)]
    with pytest.raises(TrainingError, match="non-finite"):
        pretrain("rp", ex, ex, bank, TINY, TrainRunConfig(max_epochs=2, patience=1, batch_size=6))


def test_run_config_validation():
    assert TrainRunConfig(patience=0).validate()
    assert TrainRunConfig(batch_size=1).validate()
    assert TrainRunConfig(max_epochs=5, patience=6).validate()
    assert not TrainRunConfig().validate()
