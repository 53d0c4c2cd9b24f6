"""Run configuration, stored as JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoder import EncoderSpec
from .errors import ConfigError
from .geometry import BEVGridSpec, DepthBinSpec
from .model import ModelConfig
from .predictor import PredictorConfig
from .synth.scene import SequenceSpec

GRID_PRESETS = {
    "long": BEVGridSpec.long,
    "short": BEVGridSpec.short,
    "micro": lambda: BEVGridSpec((-10.0, 10.0), (-10.0, 10.0), 1.0),
}
MODEL_VARIANTS = ("full", "tiny", "micro", "custom")


@dataclass
class ModelSection:
    variant: str = "tiny"
    stage_channels: list = None  # custom only
    decoder_dim: int = None
    n_stages: int = 2  # micro only

    def validate(self):
        if self.variant not in MODEL_VARIANTS:
            raise ConfigError(f"model.variant must be one of {MODEL_VARIANTS}, got {self.variant!r}")
        if self.variant == "custom" and not self.stage_channels:
            raise ConfigError("model.stage_channels is required for a custom model")


@dataclass
class OptimizerSection:
    lr: float = 6e-5
    weight_decay: float = 0.01
    betas: list = field(default_factory=lambda: [0.9, 0.999])

    def validate(self):
        if not self.lr > 0:
            raise ConfigError(f"optimizer.lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("optimizer.weight_decay must be >= 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"optimizer.betas must be two values in [0, 1), got {self.betas}")


@dataclass
class ScheduleSection:
    power: float = 1.0
    epochs: int = 20
    max_steps: int = None  # overrides epochs when set
    batch_size: int = 4
    k_frac: float = 0.25
    eval_every: int = None  # steps; default once per epoch

    def validate(self):
        if self.power < 0:
            raise ConfigError("schedule.power must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("schedule.epochs and schedule.batch_size must be >= 1")
        if not 0 < self.k_frac <= 1:
            raise ConfigError("schedule.k_frac must be in (0, 1]")


@dataclass
class DataSection:
    n_clips: int = 100
    n_cameras: int = 6
    image_size: list = field(default_factory=lambda: [48, 96])
    agents: list = field(default_factory=lambda: [2, 6])

    def validate(self):
        if self.n_clips < 1 or self.n_cameras < 1:
            raise ConfigError("data.n_clips and data.n_cameras must be >= 1")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"data.image_size must be [H, W], got {self.image_size}")
        if len(self.agents) != 2 or not 0 <= self.agents[0] <= self.agents[1]:
            raise ConfigError(f"data.agents must be [min, max], got {self.agents}")


@dataclass
class PathsSection:
    dataset: str = "data"
    out: str = "runs"


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: object = "long"  # preset name or {"x_range_m", "y_range_m", "resolution_m"}
    sequence: dict = field(default_factory=lambda: {"t_p": 2, "t_f": 4, "hz": 2.0})
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    data: DataSection = field(default_factory=DataSection)
    seed: int = 0
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self):
        self.model.validate()
        self.optimizer.validate()
        self.schedule.validate()
        self.data.validate()
        self.grid_spec()
        self.sequence_spec()
        return self

    def grid_spec(self) -> BEVGridSpec:
        if isinstance(self.grid, str):
            if self.grid not in GRID_PRESETS:
                raise ConfigError(f"grid must be one of {sorted(GRID_PRESETS)} or a mapping, got {self.grid!r}")
            return GRID_PRESETS[self.grid]()
        try:
            return BEVGridSpec(tuple(self.grid["x_range_m"]), tuple(self.grid["y_range_m"]),
                               float(self.grid["resolution_m"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"grid is missing field {exc}") from exc

    def grid_name(self) -> str:
        if isinstance(self.grid, str):
            return self.grid
        g = self.grid_spec()
        return f"{g.x_range[0]:g}:{g.x_range[1]:g}x{g.y_range[0]:g}:{g.y_range[1]:g}@{g.resolution:g}"

    def sequence_spec(self) -> SequenceSpec:
        try:
            return SequenceSpec(int(self.sequence["t_p"]), int(self.sequence["t_f"]), float(self.sequence["hz"]))
        except KeyError as exc:
            raise ConfigError(f"sequence is missing field {exc}") from exc

    def model_config(self) -> ModelConfig:
        seq, grid, m = self.sequence_spec(), self.grid_spec(), self.model
        if m.variant == "micro":
            base = ModelConfig.micro(t_f=seq.t_f, n_stages=m.n_stages)
            return ModelConfig(base.encoder, base.bins, base.predictor, grid, seq.t_p)
        if m.variant == "custom":
            n = len(m.stage_channels)
            pred = PredictorConfig(
                stage_channels=tuple(m.stage_channels), sr_ratios=(8, 4, 2, 1, 1, 1, 1)[:n],
                heads_per_stage=(1, 2, 4, 8, 8, 8, 8)[:n], patch_sizes=(7,) + (3,) * (n - 1),
                decoder_dim=m.decoder_dim or 32, t_f=seq.t_f)
        else:
            pred = {"full": PredictorConfig.full, "tiny": PredictorConfig.tiny}[m.variant](t_f=seq.t_f)
            if m.decoder_dim:
                pred = PredictorConfig(**{**asdict(pred), "decoder_dim": m.decoder_dim})
        return ModelConfig(EncoderSpec(), DepthBinSpec(), pred, grid, seq.t_p)

    # -- serialization --------------------------------------------------------

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        sections = {"model": ModelSection, "optimizer": OptimizerSection, "schedule": ScheduleSection,
                    "data": DataSection, "paths": PathsSection}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                allowed = {f.name for f in fields(sections[key])}
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(f"unknown field(s) in {key}: {sorted(bad)}")
                kwargs[key] = sections[key](**value)
            else:
                kwargs[key] = value
        return cls(**kwargs).validate()

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON at line {exc.lineno}: {exc.msg}") from exc

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")
