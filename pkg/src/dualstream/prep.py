"""Preprocessing chain: FIR lowpass, channel subset, decimation, windowing,
per-window z-normalisation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .io.recording import Recording, SleepStage

log = logging.getLogger(__name__)


class PrepError(ValueError):
    pass


class MissingChannelError(PrepError):
    pass


@dataclass(frozen=True)
class PrepConfig:
    cutoff_hz: float = 30.0
    fir_order: int = 101
    keep_channels: tuple[str, ...] = ("F3-M2", "F4-M1")
    target_rate: float = 100.0
    window_s: float = 30.0

    def validate(self) -> list[str]:
        errs = []
        if not 0 < self.cutoff_hz < self.target_rate / 2:
            errs.append(f"cutoff_hz={self.cutoff_hz} must lie in (0, target_rate/2={self.target_rate / 2})")
        if self.fir_order < 3 or self.fir_order % 2 == 0:
            errs.append(f"fir_order={self.fir_order} must be odd and >= 3")
        n = self.window_s * self.target_rate
        if not self.window_s > 0 or abs(n - round(n)) > 1e-9:
            errs.append(f"window_s * target_rate = {n} must be a positive integer")
        if not self.keep_channels:
            errs.append("keep_channels is empty")
        return errs

    @property
    def window_len(self) -> int:
        return int(round(self.window_s * self.target_rate))


@dataclass(eq=False)
class Window:
    data: np.ndarray  # (n_channels, n_times)
    start_sample: int
    recording_id: str
    sample_rate: float
    stage: SleepStage | None = None
    flagged: bool = False

    @property
    def start_s(self) -> float:
        return self.start_sample / self.sample_rate

    @property
    def key(self) -> tuple[str, int]:
        return (self.recording_id, self.start_sample)


def design_lowpass(cutoff_hz: float, fir_order: int, sample_rate: float) -> np.ndarray:
    """Hamming-windowed sinc lowpass with unit DC gain (``fir_order`` taps)."""
    if not 0 < cutoff_hz < sample_rate / 2:
        raise PrepError(f"cutoff {cutoff_hz} Hz must lie in (0, {sample_rate / 2}) for rate {sample_rate}")
    if fir_order < 3 or fir_order % 2 == 0:
        raise PrepError(f"fir_order must be odd and >= 3, got {fir_order}")
    fc = cutoff_hz / sample_rate
    n = np.arange(fir_order) - (fir_order - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(fir_order)
    return h / h.sum()


def filter_signal(rec: Recording, coeffs: np.ndarray) -> Recording:
    """Zero-phase FIR filtering; edges reflect-padded, length preserved."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    half = (coeffs.size - 1) // 2
    x = np.asarray(rec.data, dtype=np.float64)
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        padded = np.pad(x[c], half, mode="reflect") if x.shape[1] > 1 else np.pad(x[c], half, mode="edge")
        out[c] = np.convolve(padded, coeffs[::-1], mode="valid")
    return rec.replace(data=out)


def select_channels(rec: Recording, keep_channels) -> Recording:
    missing = [c for c in keep_channels if c not in rec.channels]
    if missing:
        raise MissingChannelError(f"recording {rec.id!r} lacks channel(s) {missing}; has {rec.channels}")
    idx = [rec.channels.index(c) for c in keep_channels]
    return rec.replace(channels=list(keep_channels), data=rec.data[idx])


def downsample(rec: Recording, target_rate: float) -> Recording:
    """Plain decimation; the caller is responsible for prior lowpass filtering."""
    ratio = rec.sample_rate / target_rate
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9:
        raise PrepError(f"source rate {rec.sample_rate} Hz is not an integer multiple of {target_rate} Hz")
    anns = None
    if rec.stage_annotations is not None:
        anns = []
        for start, stage in rec.stage_annotations:
            s = start // k
            if anns and anns[-1][0] == s:
                anns[-1] = (s, stage)
            else:
                anns.append((s, stage))
    return rec.replace(sample_rate=float(target_rate), data=rec.data[:, ::k], stage_annotations=anns)


def extract_windows(rec: Recording, window_s: float) -> list[Window]:
    n = int(round(window_s * rec.sample_rate))
    count = rec.n_samples // n
    if count < 1:
        raise PrepError(
            f"recording {rec.id!r} lasts {rec.duration_s:g} s, shorter than one {window_s:g} s window"
        )
    starts = None
    if rec.stage_annotations:
        starts = np.array([s for s, _ in rec.stage_annotations])
    out = []
    for k in range(count):
        s0 = k * n
        stage = None
        if starts is not None:
            stage = rec.stage_annotations[int(np.searchsorted(starts, s0, side="right")) - 1][1]
        out.append(Window(rec.data[:, s0 : s0 + n], s0, rec.id, rec.sample_rate, stage))
    return out


def normalize_window(w: Window) -> Window:
    """Per-channel zero mean / unit population SD; constant channels become zeros and flag the window."""
    x = np.asarray(w.data, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    centred = x - mean
    dead = np.ptp(x, axis=1) == 0
    # rescale before squaring so tiny or huge amplitudes neither underflow nor overflow
    peak = np.where(dead, 1.0, np.max(np.abs(centred), axis=1))[:, None]
    unit = centred / peak
    unit_sd = np.sqrt((unit**2).mean(axis=1, keepdims=True))
    out = unit / np.where(dead[:, None], 1.0, unit_sd)
    out[dead] = 0.0
    return replace(w, data=out, flagged=w.flagged or bool(dead.any()))


def preprocess(rec: Recording, cfg: PrepConfig) -> list[Window]:
    """Full chain for one recording. Filtering runs at the source rate."""
    coeffs = design_lowpass(cfg.cutoff_hz, cfg.fir_order, rec.sample_rate)
    rec = select_channels(rec, cfg.keep_channels)
    rec = filter_signal(rec, coeffs)
    rec = downsample(rec, cfg.target_rate)
    windows = [normalize_window(w) for w in extract_windows(rec, cfg.window_s)]
    n_flagged = sum(w.flagged for w in windows)
    if n_flagged:
        log.warning("%s: %d window(s) with zero-variance channels", rec.id, n_flagged)
    return windows
