"""Recording ingestion: EDF reader, raw format, synthetic generator."""

from .edf import (
    EdfError,
    EdfHeaderError,
    EdfSampleRateError,
    EdfScalingError,
    EdfTruncatedError,
    read_edf,
)
from .raw import RawFormatError, read_raw, write_raw
from .recording import N_STAGES, Recording, RecordingError, SleepStage
from .synth import (
    PC18_CHANNELS,
    Band,
    StageRecipe,
    SynthSpec,
    SynthSpecError,
    default_stage_profile,
    generate_synthetic,
    stationary_distribution,
)
