"""Pipeline configuration: one JSON document with a section per stage.

Unknown keys are rejected; every violation is collected before reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .io.recording import SleepStage
from .io.synth import Band, StageRecipe, SynthSpec, SynthSpecError, default_stage_profile
from .model import EmbedderConfig
from .prep import PrepConfig
from .samplers import KINDS, SamplerConfig
from .spectral import WelchConfig
from .train import SplitSpec, TrainRunConfig

COMBOS = ("rp", "ts", "fs", "rp+fs", "ts+fs")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class DataConfig:
    source: str = "synth"  # "synth" or "files"
    paths: tuple[str, ...] = ()


@dataclass(frozen=True)
class DownstreamConfig:
    lambda_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    l2_lambda: float | None = None  # None: pick from lambda_grid on the validation split
    budgets: tuple = (1, 10, 100, 1000, 10000, 50000, "all")
    n_iterations: int = 5
    max_iter: int = 5000
    tol: float = 1e-6
    project_combo: str = "rp+fs"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    data: DataConfig = DataConfig()
    synth: SynthSpec = field(default_factory=SynthSpec)
    prep: PrepConfig = PrepConfig()
    welch: WelchConfig = WelchConfig()
    samplers: dict = field(default_factory=lambda: {k: SamplerConfig.for_task(k) for k in KINDS})
    embedder: EmbedderConfig = EmbedderConfig()
    train: TrainRunConfig = TrainRunConfig()
    split: SplitSpec = SplitSpec()
    downstream: DownstreamConfig = DownstreamConfig()

    def sampler(self, kind: str) -> SamplerConfig:
        return replace(self.samplers[kind], seed=self.seed)

    def train_run(self) -> TrainRunConfig:
        return replace(self.train, seed=self.seed)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=int(seed))


def _build(cls, raw, where: str, problems: list, convert=None):
    """Instantiate dataclass ``cls`` from a mapping, noting unknown keys."""
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected an object, got {type(raw).__name__}")
        return cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        problems.append(f"{where}: unknown key(s) {unknown}")
    kwargs = {k: v for k, v in raw.items() if k in names}
    for k, v in list(kwargs.items()):
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    if convert:
        kwargs = convert(kwargs, problems)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return cls()


def _stage_profile(raw, problems):
    profile = default_stage_profile()
    if raw is None:
        return profile
    for name, recipe in raw.items():
        try:
            stage = SleepStage[name]
        except KeyError:
            problems.append(f"synth.stage_profile: unknown stage {name!r}")
            continue
        try:
            bands = tuple(Band(float(c), float(bw), float(a)) for c, bw, a in recipe["bands"])
            profile[stage] = StageRecipe(bands, float(recipe.get("noise_sd", 5.0)))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"synth.stage_profile.{name}: bands must be [[center, bandwidth, amplitude], ...] ({exc})")
    return profile


def _convert_synth(kwargs, problems):
    if "stage_profile" in kwargs:
        kwargs["stage_profile"] = _stage_profile(kwargs["stage_profile"], problems)
    return kwargs


def parse_config(raw: dict, base_dir: Path | None = None) -> PipelineConfig:
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError([f"config root must be an object, got {type(raw).__name__}"])
    top = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        problems.append(f"unknown top-level key(s) {unknown}")

    samplers = {}
    raw_samplers = raw.get("samplers") or {}
    for k in sorted(set(raw_samplers) - set(KINDS)):
        problems.append(f"samplers: unknown task {k!r}")
    for kind in KINDS:
        sub = raw_samplers.get(kind) or {}
        base = SamplerConfig.for_task(kind)
        merged = {f.name: getattr(base, f.name) for f in fields(SamplerConfig)}
        if isinstance(sub, dict):
            merged.update(sub)
        samplers[kind] = _build(SamplerConfig, merged, f"samplers.{kind}", problems)

    data = _build(DataConfig, raw.get("data"), "data", problems)
    if base_dir is not None and data.paths:
        data = replace(data, paths=tuple(str((base_dir / p).resolve()) if not Path(p).is_absolute() else p
                                         for p in data.paths))
    cfg = PipelineConfig(
        seed=raw.get("seed", 0),
        out_dir=raw.get("out_dir", "out"),
        data=data,
        synth=_build(SynthSpec, raw.get("synth"), "synth", problems, _convert_synth),
        prep=_build(PrepConfig, raw.get("prep"), "prep", problems),
        welch=_build(WelchConfig, raw.get("welch"), "welch", problems),
        samplers=samplers,
        embedder=_build(EmbedderConfig, raw.get("embedder"), "embedder", problems),
        train=_build(TrainRunConfig, raw.get("train"), "train", problems),
        split=_build(SplitSpec, raw.get("split"), "split", problems),
        downstream=_build(DownstreamConfig, raw.get("downstream"), "downstream", problems),
    )
    problems += validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate_config(cfg: PipelineConfig) -> list[str]:
    """Field-level and cross-field checks; returns every violation found."""
    errs = []
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        errs.append(f"seed must be a nonnegative integer, got {cfg.seed!r}")
    if cfg.data.source not in ("synth", "files"):
        errs.append(f"data.source must be 'synth' or 'files', got {cfg.data.source!r}")
    if cfg.data.source == "files":
        if not cfg.data.paths:
            errs.append("data.paths is empty for source 'files'")
        for p in cfg.data.paths:
            if not Path(p).is_file():
                errs.append(f"data.paths: {p} does not exist")
            elif Path(p).suffix.lower() not in (".edf", ".raw"):
                errs.append(f"data.paths: {p} is neither .edf nor .raw")
    if cfg.data.source == "synth":
        try:
            cfg.synth.validate()
        except SynthSpecError as exc:
            errs.append(f"synth: {exc}")
        labels = cfg.synth.channel_labels()
        missing = [c for c in cfg.prep.keep_channels if c not in labels]
        if missing:
            errs.append(f"prep.keep_channels {missing} not produced by synth (channels {labels})")
        ratio = cfg.synth.sample_rate / cfg.prep.target_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            errs.append(f"synth.sample_rate {cfg.synth.sample_rate} is not an integer multiple of "
                        f"prep.target_rate {cfg.prep.target_rate}")
        elif cfg.prep.cutoff_hz >= cfg.synth.sample_rate / 2:
            errs.append("prep.cutoff_hz must lie below the source Nyquist frequency")
        if cfg.synth.duration_s < cfg.prep.window_s:
            errs.append("synth.duration_s is shorter than one window")
    errs += [f"prep: {e}" for e in cfg.prep.validate()]
    errs += [f"welch: {e}" for e in cfg.welch.validate()]
    if cfg.welch.segment_len > cfg.prep.window_len:
        errs.append(f"welch.segment_len {cfg.welch.segment_len} exceeds window length {cfg.prep.window_len}")
    for kind, sc in cfg.samplers.items():
        errs += [f"samplers.{kind}: {e}" for e in sc.validate()]
    errs += [f"embedder: {e}" for e in cfg.embedder.validate()]
    if cfg.embedder.n_channels != len(cfg.prep.keep_channels):
        errs.append(f"embedder.n_channels {cfg.embedder.n_channels} != {len(cfg.prep.keep_channels)} kept channels")
    if cfg.embedder.n_times != cfg.prep.window_len:
        errs.append(f"embedder.n_times {cfg.embedder.n_times} != window length {cfg.prep.window_len}")
    errs += [f"train: {e}" for e in cfg.train.validate()]
    errs += [f"split: {e}" for e in cfg.split.validate()]
    ds = cfg.downstream
    if not ds.lambda_grid or any(l < 0 for l in ds.lambda_grid):
        errs.append("downstream.lambda_grid must be a nonempty list of nonnegative values")
    if ds.l2_lambda is not None and ds.l2_lambda < 0:
        errs.append("downstream.l2_lambda must be nonnegative")
    for b in ds.budgets:
        if b != "all" and not (isinstance(b, int) and b >= 1):
            errs.append(f"downstream.budgets: {b!r} is neither 'all' nor a positive integer")
    if ds.n_iterations < 1:
        errs.append("downstream.n_iterations must be >= 1")
    if ds.project_combo not in COMBOS:
        errs.append(f"downstream.project_combo must be one of {COMBOS}")
    return errs


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file {path} not found"])
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
    return parse_config(raw, base_dir=path.parent)
