"""Welch PSD estimation and Hellinger distance between normalised spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

SQRT2 = np.sqrt(2.0)


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class WelchConfig:
    segment_len: int = 256
    overlap: float = 0.5
    detrend: bool = True

    def validate(self) -> list[str]:
        errs = []
        if self.segment_len < 1:
            errs.append(f"segment_len must be >= 1, got {self.segment_len}")
        if not 0.0 <= self.overlap < 1.0:
            errs.append(f"overlap must lie in [0, 1), got {self.overlap}")
        return errs


@dataclass(frozen=True, eq=False)
class PsdEstimate:
    freqs: np.ndarray  # (n_freqs,)
    power: np.ndarray  # (n_channels, n_freqs)
    segment_len: int
    overlap: float

    @property
    def n_channels(self) -> int:
        return self.power.shape[0]


def welch(x: np.ndarray, sample_rate: float, cfg: WelchConfig = WelchConfig()) -> PsdEstimate:
    """One-sided Welch density of ``x`` with shape ``(n_channels, n_samples)``.

    Periodic Hamming taper, ``hop = segment_len * (1 - overlap)``, density
    scaling ``1 / (fs * sum(win**2))`` and doubled non-DC / non-Nyquist bins.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    L = cfg.segment_len
    if L < 1 or L > x.shape[1]:
        raise SpectralError(f"segment_len={L} must lie in [1, window length {x.shape[1]}]")
    hop = max(1, int(L * (1.0 - cfg.overlap)))
    segs = np.lib.stride_tricks.sliding_window_view(x, L, axis=1)[:, ::hop]  # (C, S, L)
    if cfg.detrend:
        segs = segs - segs.mean(axis=2, keepdims=True)
    win = get_window("hamming", L)
    spec = np.fft.rfft(segs * win, axis=2)
    power = (spec.real**2 + spec.imag**2) / (sample_rate * np.sum(win**2))
    if L % 2 == 0:
        power[..., 1:-1] *= 2.0
    else:
        power[..., 1:] *= 2.0
    return PsdEstimate(
        freqs=np.fft.rfftfreq(L, 1.0 / sample_rate),
        power=power.mean(axis=1),
        segment_len=L,
        overlap=cfg.overlap,
    )


def welch_psd(w, cfg: WelchConfig = WelchConfig()) -> PsdEstimate:
    """Welch PSD of a :class:`~dualstream.prep.Window`."""
    return welch(w.data, w.sample_rate, cfg)


def normalize_psd(p) -> np.ndarray:
    """Rows of ``p.power`` (or of an array) rescaled to sum to 1."""
    power = np.atleast_2d(np.asarray(p.power if isinstance(p, PsdEstimate) else p, dtype=np.float64))
    totals = power.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        bad = np.flatnonzero(totals[:, 0] <= 0).tolist()
        raise SpectralError(f"channel(s) {bad} have no positive power; distance is undefined")
    return power / totals


def _check_distribution(p: np.ndarray, name: str, tol: float = 1e-9) -> None:
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise SpectralError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > tol:
        raise SpectralError(f"{name} sums to {p.sum():.12g}, not 1")


def hellinger_distance(p, q, form: str = "hellinger") -> float:
    """``(1/sqrt 2) * ||sqrt p - sqrt q||_2`` for probability vectors.

    ``form="l2"`` drops the square roots (``(1/sqrt 2) * ||p - q||_2``).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise SpectralError(f"length mismatch: {p.shape} vs {q.shape}")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    if form == "hellinger":
        d = np.linalg.norm(np.sqrt(p) - np.sqrt(q)) / SQRT2
    elif form == "l2":
        d = np.linalg.norm(p - q) / SQRT2
    else:
        raise SpectralError(f"unknown distance form {form!r}")
    return float(min(d, 1.0))


def mean_channel_hd(a: PsdEstimate, b: PsdEstimate, form: str = "hellinger") -> float:
    """Channel-averaged Hellinger distance between two PSD estimates."""
    if a.power.shape != b.power.shape or not np.array_equal(a.freqs, b.freqs):
        raise SpectralError(f"frequency grid mismatch: {a.power.shape} vs {b.power.shape}")
    pa, pb = normalize_psd(a), normalize_psd(b)
    return float(np.mean([hellinger_distance(x, y, form) for x, y in zip(pa, pb)]))
