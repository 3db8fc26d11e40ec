"""Labelled synthetic EEG with stage-dependent spectra.

Stages follow a first-order Markov chain over fixed-length epochs; each
epoch is a sum of band-limited sinusoid bundles (random frequencies within
each band, random phases per channel) plus white noise. Not physiological.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recording import N_STAGES, Recording, SleepStage

PC18_CHANNELS = ("F3-M2", "F4-M1", "C3-M2", "C4-M1", "O1-M2", "O2-M1")


@dataclass(frozen=True)
class Band:
    center_hz: float
    bandwidth_hz: float
    amplitude: float  # microvolts, summed over the band's tones


@dataclass(frozen=True)
class StageRecipe:
    bands: tuple[Band, ...]
    noise_sd: float = 5.0


def default_stage_profile() -> dict[SleepStage, StageRecipe]:
    """Canonical EEG band caricatures, one recipe per stage."""
    return {
        SleepStage.W: StageRecipe((Band(10.0, 3.0, 30.0), Band(20.0, 6.0, 8.0))),
        SleepStage.N1: StageRecipe((Band(5.5, 3.0, 30.0),)),
        SleepStage.N2: StageRecipe((Band(13.5, 4.0, 25.0), Band(3.0, 2.0, 10.0))),
        SleepStage.N3: StageRecipe((Band(2.0, 2.8, 80.0),), noise_sd=5.0),
        SleepStage.R: StageRecipe((Band(7.0, 6.0, 20.0), Band(18.0, 8.0, 6.0))),
    }


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_recordings: int = 20
    duration_s: float = 1800.0
    sample_rate: float = 200.0
    n_channels: int = 6
    stage_profile: dict = field(default_factory=default_stage_profile)
    epoch_s: float = 30.0
    seed: int = 0
    self_transition: float = 0.85
    tones_per_band: int = 4

    def validate(self) -> None:
        errs = []
        if self.n_recordings < 0:
            errs.append("n_recordings must be >= 0")
        if not self.sample_rate > 0:
            errs.append("sample_rate must be positive")
        if not self.epoch_s > 0 or not self.duration_s > 0:
            errs.append("duration_s and epoch_s must be positive")
        else:
            ratio = self.duration_s / self.epoch_s
            if abs(ratio - round(ratio)) > 1e-9:
                errs.append(f"duration_s={self.duration_s} is not a multiple of epoch_s={self.epoch_s}")
            spe = self.epoch_s * self.sample_rate
            if abs(spe - round(spe)) > 1e-9:
                errs.append("epoch_s * sample_rate must be an integer")
        if self.n_channels < 1:
            errs.append("n_channels must be >= 1")
        if not 0.0 <= self.self_transition <= 1.0:
            errs.append("self_transition must lie in [0, 1]")
        if self.tones_per_band < 1:
            errs.append("tones_per_band must be >= 1")
        nyq = self.sample_rate / 2
        missing = [s.name for s in SleepStage if s not in self.stage_profile]
        if missing:
            errs.append(f"stage_profile lacks recipes for {missing}")
        for stage, recipe in self.stage_profile.items():
            for b in recipe.bands:
                lo, hi = b.center_hz - b.bandwidth_hz / 2, b.center_hz + b.bandwidth_hz / 2
                if lo <= 0 or hi >= nyq:
                    errs.append(f"{SleepStage(stage).name}: band {lo:g}-{hi:g} Hz outside (0, {nyq:g})")
        if errs:
            raise SynthSpecError("; ".join(errs))

    def transition_matrix(self) -> np.ndarray:
        off = (1.0 - self.self_transition) / (N_STAGES - 1)
        P = np.full((N_STAGES, N_STAGES), off)
        np.fill_diagonal(P, self.self_transition)
        return P

    def channel_labels(self) -> list[str]:
        if self.n_channels <= len(PC18_CHANNELS):
            return list(PC18_CHANNELS[: self.n_channels])
        return list(PC18_CHANNELS) + [f"EEG{i}" for i in range(len(PC18_CHANNELS), self.n_channels)]


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return pi / pi.sum()


def _stage_sequence(rng: np.random.Generator, P: np.ndarray, n_epochs: int) -> np.ndarray:
    pi = stationary_distribution(P)
    cum = np.cumsum(P, axis=1)
    u = rng.random(n_epochs)
    seq = np.empty(n_epochs, dtype=np.int64)
    seq[0] = min(int(np.searchsorted(np.cumsum(pi), u[0], side="right")), N_STAGES - 1)
    for i in range(1, n_epochs):
        seq[i] = min(int(np.searchsorted(cum[seq[i - 1]], u[i], side="right")), N_STAGES - 1)
    return seq


def generate_synthetic(spec: SynthSpec) -> list[Recording]:
    """Generate ``spec.n_recordings`` recordings; a pure function of ``spec``."""
    spec.validate()
    P = spec.transition_matrix()
    epoch_len = int(round(spec.epoch_s * spec.sample_rate))
    n_epochs = int(round(spec.duration_s / spec.epoch_s))
    t = np.arange(epoch_len) / spec.sample_rate
    labels = spec.channel_labels()
    recs = []
    for r in range(spec.n_recordings):
        rng = np.random.default_rng([spec.seed, r])
        stages = _stage_sequence(rng, P, n_epochs)
        data = np.empty((spec.n_channels, n_epochs * epoch_len))
        for e, st in enumerate(stages):
            recipe = spec.stage_profile[SleepStage(st)]
            data[:, e * epoch_len : (e + 1) * epoch_len] = _tones(rng, recipe, spec.n_channels, t, spec.tones_per_band)
        anns = []
        for e, st in enumerate(stages):
            if not anns or anns[-1][1] != st:
                anns.append((e * epoch_len, SleepStage(st)))
        recs.append(
            Recording(
                channels=labels,
                sample_rate=spec.sample_rate,
                data=data.astype(np.float32),
                stage_annotations=anns,
                id=f"synth{r:03d}",
            )
        )
    return recs


def _tones(rng, recipe: StageRecipe, n_channels: int, t: np.ndarray, n_tones: int) -> np.ndarray:
    out = rng.normal(0.0, recipe.noise_sd, size=(n_channels, t.size))
    for band in recipe.bands:
        lo = band.center_hz - band.bandwidth_hz / 2
        freqs = rng.uniform(lo, lo + band.bandwidth_hz, size=(1, n_tones, 1))
        phases = rng.uniform(0.0, 2 * np.pi, size=(n_channels, n_tones, 1))
        amp = band.amplitude / np.sqrt(n_tones)
        out += amp * np.cos(2 * np.pi * freqs * t + phases).sum(axis=1)
    return out
