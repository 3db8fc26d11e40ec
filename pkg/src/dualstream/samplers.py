"""Pretext-example samplers with pseudo-labels: relative positioning (pairs),
temporal shuffling and frequency similarity (triplets).

Labels are ``0``/``1``; the label functions return ``None`` where no label
is defined (RP gap between the two contexts, FS ties), and the samplers
never emit such examples.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import PsdEstimate, WelchConfig, mean_channel_hd, welch_psd

KINDS = ("rp", "ts", "fs")


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    tau_pos_s: float = 60.0
    tau_neg_s: float = 900.0
    examples_per_recording: int = 2000
    seed: int = 0
    fs_tie_epsilon: float = 1e-9
    positive_ratio: float = 0.5
    fs_distance: str = "hellinger"

    @classmethod
    def for_task(cls, kind: str, **overrides) -> "SamplerConfig":
        defaults = {"rp": dict(tau_pos_s=60.0, tau_neg_s=900.0),
                    "ts": dict(tau_pos_s=1800.0, tau_neg_s=7200.0),
                    "fs": dict(tau_pos_s=0.0, tau_neg_s=0.0)}[kind]
        defaults.update(overrides)
        return cls(**defaults)

    def validate(self) -> list[str]:
        errs = []
        if self.tau_pos_s > self.tau_neg_s:
            errs.append(f"tau_pos_s={self.tau_pos_s} exceeds tau_neg_s={self.tau_neg_s}")
        if self.examples_per_recording < 1:
            errs.append("examples_per_recording must be >= 1")
        if not 0.0 < self.positive_ratio < 1.0:
            errs.append("positive_ratio must lie in (0, 1)")
        if self.fs_distance not in ("hellinger", "l2"):
            errs.append(f"fs_distance must be 'hellinger' or 'l2', got {self.fs_distance!r}")
        return errs


@dataclass(frozen=True)
class PretextExample:
    kind: str
    refs: tuple[tuple[str, int], ...]  # (recording_id, start_sample) per window
    label: int

    def __post_init__(self):
        want = 2 if self.kind == "rp" else 3
        if len(self.refs) != want:
            raise SamplerError(f"{self.kind} example needs {want} refs, got {len(self.refs)}")
        if len(set(self.refs)) != len(self.refs):
            raise SamplerError(f"window refs must be distinct: {self.refs}")


def recording_rng(seed: int, recording_id: str) -> np.random.Generator:
    """Per-recording stream: independent of processing order."""
    return np.random.default_rng([seed, zlib.crc32(recording_id.encode("utf-8"))])


def _sorted_windows(windows):
    if not windows:
        raise SamplerError("no windows")
    ids = {w.recording_id for w in windows}
    if len(ids) != 1:
        raise SamplerError(f"samplers work on one recording at a time, got {sorted(ids)}")
    return sorted(windows, key=lambda w: w.start_sample)


# --- relative positioning -------------------------------------------------

def label_rp(t: float, t_prime: float, cfg: SamplerConfig) -> int | None:
    gap = abs(t - t_prime)
    if gap <= cfg.tau_pos_s:
        return 1
    if gap > cfg.tau_neg_s:
        return 0
    return None


def _contexts(times: np.ndarray, cfg: SamplerConfig):
    gap = np.abs(times[:, None] - times[None, :])
    pos = (gap <= cfg.tau_pos_s) & ~np.eye(times.size, dtype=bool)
    neg = gap > cfg.tau_neg_s
    return pos, neg


def sample_rp(windows, cfg: SamplerConfig) -> list[PretextExample]:
    ws = _sorted_windows(windows)
    times = np.array([w.start_s for w in ws])
    pos, neg = _contexts(times, cfg)
    pos_anchors = np.flatnonzero(pos.any(axis=1))
    neg_anchors = np.flatnonzero(neg.any(axis=1))
    if pos_anchors.size == 0 or neg_anchors.size == 0:
        raise SamplerError(
            f"{ws[0].recording_id}: no anchor has a {'positive' if pos_anchors.size == 0 else 'negative'} "
            f"context (tau_pos={cfg.tau_pos_s}s, tau_neg={cfg.tau_neg_s}s, {len(ws)} windows)"
        )
    rng = recording_rng(cfg.seed, ws[0].recording_id)
    out = []
    for _ in range(cfg.examples_per_recording):
        positive = rng.random() < cfg.positive_ratio
        ctx, anchors = (pos, pos_anchors) if positive else (neg, neg_anchors)
        i = int(anchors[rng.integers(anchors.size)])
        cands = np.flatnonzero(ctx[i])
        j = int(cands[rng.integers(cands.size)])
        y = label_rp(times[i], times[j], cfg)
        out.append(PretextExample("rp", (ws[i].key, ws[j].key), y))
    return out


# --- temporal shuffling ---------------------------------------------------

def label_ts(t: float, t_prime: float, t_double_prime: float) -> int:
    return 1 if t < t_prime < t_double_prime else 0


def sample_ts(windows, cfg: SamplerConfig) -> list[PretextExample]:
    """Anchor ``t``; ``t''`` after the anchor within tau_pos; ``t'`` between the two
    (label 1) or further than tau_neg from the anchor on either side (label 0)."""
    ws = _sorted_windows(windows)
    times = np.array([w.start_s for w in ws])
    n = len(ws)
    after = (times[None, :] > times[:, None]) & (times[None, :] - times[:, None] <= cfg.tau_pos_s)
    # t'' must leave at least one window strictly between anchor and t''
    idx = np.arange(n)
    spaced = after & (idx[None, :] - idx[:, None] >= 2)
    neg = np.abs(times[:, None] - times[None, :]) > cfg.tau_neg_s
    pos_anchors = np.flatnonzero(spaced.any(axis=1))
    neg_anchors = np.flatnonzero(after.any(axis=1) & neg.any(axis=1))
    if pos_anchors.size == 0:
        raise SamplerError(f"{ws[0].recording_id}: no t'' within tau_pos leaves an in-between window")
    if neg_anchors.size == 0:
        raise SamplerError(f"{ws[0].recording_id}: no anchor has a negative context (tau_neg={cfg.tau_neg_s}s)")
    rng = recording_rng(cfg.seed, ws[0].recording_id)
    out = []
    for _ in range(cfg.examples_per_recording):
        positive = rng.random() < cfg.positive_ratio
        if positive:
            i = int(pos_anchors[rng.integers(pos_anchors.size)])
            c2 = np.flatnonzero(spaced[i])
            k = int(c2[rng.integers(c2.size)])
            j = int(rng.integers(i + 1, k))
        else:
            i = int(neg_anchors[rng.integers(neg_anchors.size)])
            c2 = np.flatnonzero(after[i])
            k = int(c2[rng.integers(c2.size)])
            c1 = np.flatnonzero(neg[i])
            j = int(c1[rng.integers(c1.size)])
        y = label_ts(times[i], times[j], times[k])
        out.append(PretextExample("ts", (ws[i].key, ws[j].key, ws[k].key), y))
    return out


# --- frequency similarity -------------------------------------------------

def label_fs(anchor_psd: PsdEstimate, psd_prime: PsdEstimate, psd_double_prime: PsdEstimate,
             cfg: SamplerConfig) -> int | None:
    d1 = mean_channel_hd(anchor_psd, psd_prime, cfg.fs_distance)
    d2 = mean_channel_hd(anchor_psd, psd_double_prime, cfg.fs_distance)
    if d1 < d2 - cfg.fs_tie_epsilon:
        return 0
    if d1 > d2 + cfg.fs_tie_epsilon:
        return 1
    return None


def sample_fs(windows, cfg: SamplerConfig, welch_cfg: WelchConfig = WelchConfig(),
              max_redraws: int = 100) -> list[PretextExample]:
    """Three distinct windows drawn uniformly without replacement; ties redrawn."""
    ws = _sorted_windows(windows)
    if len(ws) < 3:
        raise SamplerError(f"{ws[0].recording_id}: frequency similarity needs >= 3 windows, got {len(ws)}")
    psds = [welch_psd(w, welch_cfg) for w in ws]
    rng = recording_rng(cfg.seed, ws[0].recording_id)
    out = []
    budget = max_redraws * cfg.examples_per_recording
    draws = 0
    while len(out) < cfg.examples_per_recording:
        draws += 1
        if draws > budget:
            raise SamplerError(f"{ws[0].recording_id}: too many tied triplets ({draws} draws)")
        i, j, k = (int(v) for v in rng.choice(len(ws), size=3, replace=False))
        y = label_fs(psds[i], psds[j], psds[k], cfg)
        if y is not None:
            out.append(PretextExample("fs", (ws[i].key, ws[j].key, ws[k].key), y))
    return out


SAMPLERS = {"rp": sample_rp, "ts": sample_ts, "fs": sample_fs}


def sample_task(kind: str, windows, cfg: SamplerConfig, welch_cfg: WelchConfig = WelchConfig()):
    if kind == "fs":
        return sample_fs(windows, cfg, welch_cfg)
    return SAMPLERS[kind](windows, cfg)


# --- index file -----------------------------------------------------------

INDEX_FIELDS = ("kind", "split", "recording_id", "start0", "start1", "start2", "label")


def write_examples(path, examples_by_split: dict[str, list[PretextExample]]) -> None:
    """CSV index: one row per example; ``start2`` is empty for pairs."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(INDEX_FIELDS)
        for split, examples in examples_by_split.items():
            for ex in examples:
                starts = [str(s) for _, s in ex.refs] + [""] * (3 - len(ex.refs))
                wr.writerow([ex.kind, split, ex.refs[0][0], *starts, ex.label])


def read_examples(path) -> dict[str, list[PretextExample]]:
    out: dict[str, list[PretextExample]] = {}
    with open(Path(path), newline="") as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            rid = row["recording_id"]
            starts = [row["start0"], row["start1"], row["start2"]]
            refs = tuple((rid, int(s)) for s in starts if s != "")
            out.setdefault(row["split"], []).append(PretextExample(row["kind"], refs, int(row["label"])))
    return out
