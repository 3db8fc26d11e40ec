"""Core data types shared by the readers, the synthetic generator and prep."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class SleepStage(enum.IntEnum):
    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    R = 4


N_STAGES = len(SleepStage)


class RecordingError(ValueError):
    """A Recording violates one of its structural invariants."""


@dataclass(eq=False)
class Recording:
    """A multichannel recording.

    ``data`` has shape ``(n_channels, n_samples)``; values are physical units
    (microvolts by convention). ``stage_annotations`` is a sorted list of
    ``(start_sample, SleepStage)`` spans, the first one starting at sample 0.
    """

    channels: list[str]
    sample_rate: float
    data: np.ndarray
    stage_annotations: list[tuple[int, SleepStage]] | None = None
    id: str = "rec"

    def __post_init__(self):
        self.channels = list(self.channels)
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise RecordingError(f"data must be 2-D (channels, samples), got shape {self.data.shape}")
        if self.data.shape[0] != len(self.channels):
            raise RecordingError(
                f"{len(self.channels)} channel labels but data has {self.data.shape[0]} rows"
            )
        if self.data.shape[1] < 1:
            raise RecordingError("recording has no samples")
        if not self.sample_rate > 0:
            raise RecordingError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.stage_annotations is not None:
            anns = [(int(s), SleepStage(st)) for s, st in self.stage_annotations]
            if anns:
                if anns[0][0] != 0:
                    raise RecordingError("stage annotations must start at sample 0")
                starts = [s for s, _ in anns]
                if any(b <= a for a, b in zip(starts, starts[1:])):
                    raise RecordingError("stage annotation starts must be strictly increasing")
            self.stage_annotations = anns

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def stage_at(self, sample: int) -> SleepStage | None:
        """Stage of the annotation span covering ``sample`` (None if unannotated)."""
        if not self.stage_annotations:
            return None
        starts = np.fromiter((s for s, _ in self.stage_annotations), dtype=np.int64)
        idx = int(np.searchsorted(starts, sample, side="right")) - 1
        return self.stage_annotations[idx][1] if idx >= 0 else None

    def replace(self, **changes) -> "Recording":
        fields = dict(
            channels=self.channels,
            sample_rate=self.sample_rate,
            data=self.data,
            stage_annotations=self.stage_annotations,
            id=self.id,
        )
        fields.update(changes)
        return Recording(**fields)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.id == other.id
            and self.channels == other.channels
            and self.sample_rate == other.sample_rate
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
            and self.stage_annotations == other.stage_annotations
        )
