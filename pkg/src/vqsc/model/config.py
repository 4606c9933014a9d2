"""Codec hyperparameters and the JSON config schema."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

PITCH_RATE_HZ = 200


class ConfigError(ValueError):
    """A config file or config dict violates the schema."""


@dataclass
class ModelConfig:
    """Architecture knobs; determines the downsampling factor and bit rate.

    The default stride schedule (five stride-2 layers plus one stride-5)
    downsamples 16 kHz audio by 160x to a 100 Hz latent frame rate; two
    256-entry codebooks over a 64-dim latent then give 1600 bps.  Appending
    another stride-2 layer halves the rate.
    """

    sample_rate: int = 16000
    strides: tuple = (2, 2, 2, 2, 2, 5)
    encoder_channels: int = 32
    num_maps: int = 2
    codebook_size: int = 256
    latent_dim: int = 64
    speaker_codebook_size: int = 256
    speaker_dim: int = 32
    decoder_layers: int = 10
    decoder_dilations: tuple = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)
    decoder_channels: int = 32
    f0_rate: int = PITCH_RATE_HZ

    def __post_init__(self):
        self.strides = tuple(int(s) for s in self.strides)
        self.decoder_dilations = tuple(int(d) for d in self.decoder_dilations)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if any(s < 1 for s in self.strides) or not self.strides:
            raise ConfigError("strides must be positive integers")
        if len(self.strides) < 2:
            raise ConfigError("need at least two encoder layers (speaker branch taps the penultimate)")
        if self.num_maps < 1 or self.latent_dim % self.num_maps != 0:
            raise ConfigError("latent_dim must be divisible by num_maps")
        if self.codebook_size < 1 or self.speaker_codebook_size < 1:
            raise ConfigError("codebook sizes must be >= 1")
        factor = self.downsampling_factor
        if self.sample_rate % factor != 0:
            raise ConfigError("sample_rate must be divisible by the downsampling factor")
        if self.sample_rate % self.f0_rate != 0:
            raise ConfigError(f"sample_rate must be divisible by {self.f0_rate}")
        if self.f0_rate % self.frame_rate != 0:
            raise ConfigError("pitch rate must be an integer multiple of the frame rate")
        if self.decoder_layers != len(self.decoder_dilations):
            raise ConfigError("decoder_layers must equal len(decoder_dilations)")
        for name in ("encoder_channels", "decoder_channels", "speaker_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def downsampling_factor(self) -> int:
        return math.prod(self.strides)

    @property
    def frame_rate(self) -> int:
        return self.sample_rate // self.downsampling_factor

    @property
    def per_map_dim(self) -> int:
        return self.latent_dim // self.num_maps

    @property
    def f0_upsample(self) -> int:
        return self.f0_rate // self.frame_rate

    @property
    def bits_per_index(self) -> int:
        return (self.codebook_size - 1).bit_length()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        d["decoder_dilations"] = list(self.decoder_dilations)
        return d


_MODEL_REQUIRED = (
    "sample_rate", "strides", "encoder_channels", "num_maps", "codebook_size",
    "latent_dim", "speaker_codebook_size", "speaker_dim", "decoder_layers",
    "decoder_dilations", "decoder_channels",
)
_MODEL_OPTIONAL = ("f0_rate",)


def model_config_from_dict(data: dict) -> ModelConfig:
    """Build a ModelConfig from a JSON-style dict; absent required fields are errors."""
    if not isinstance(data, dict):
        raise ConfigError("model config must be a JSON object")
    missing = [k for k in _MODEL_REQUIRED if k not in data]
    if missing:
        raise ConfigError(f"model config missing fields: {', '.join(missing)}")
    unknown = [k for k in data if k not in _MODEL_REQUIRED + _MODEL_OPTIONAL]
    if unknown:
        raise ConfigError(f"model config has unknown fields: {', '.join(unknown)}")
    try:
        return ModelConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class TrainConfig:
    """Optimization knobs for a desk-scale training run."""

    steps: int = 500
    batch_size: int = 2
    learning_rate: float = 3e-4
    commitment_beta: float = 0.25
    f0_weight: float = 1.0
    seed: int = 2024
    ema_enabled: bool = True
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    revive_threshold: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    crop_samples: int = 5120

    def __post_init__(self):
        for name in ("learning_rate", "commitment_beta", "f0_weight",
                     "ema_decay", "ema_epsilon", "adam_eps", "revive_threshold"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative")
        if self.steps < 1 or self.batch_size < 1 or self.crop_samples < 1:
            raise ConfigError("steps, batch_size and crop_samples must be >= 1")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return asdict(self)


_TRAIN_REQUIRED = ("steps", "batch_size", "learning_rate", "seed")
_TRAIN_OPTIONAL = ("commitment_beta", "f0_weight", "ema_enabled", "ema_decay",
                   "ema_epsilon", "adam_beta1", "adam_beta2", "adam_eps",
                   "crop_samples", "revive_threshold")


def train_config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from a JSON-style dict; absent required fields are errors."""
    if not isinstance(data, dict):
        raise ConfigError("train config must be a JSON object")
    missing = [k for k in _TRAIN_REQUIRED if k not in data]
    if missing:
        raise ConfigError(f"train config missing fields: {', '.join(missing)}")
    unknown = [k for k in data if k not in _TRAIN_REQUIRED + _TRAIN_OPTIONAL]
    if unknown:
        raise ConfigError(f"train config has unknown fields: {', '.join(unknown)}")
    try:
        return TrainConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config_file(path) -> tuple[ModelConfig, TrainConfig | None]:
    """Load a JSON config file holding a "model" section and optional "train" section."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    return parse_config_dict(raw)


def parse_config_dict(raw: dict) -> tuple[ModelConfig, TrainConfig | None]:
    if not isinstance(raw, dict) or "model" not in raw:
        raise ConfigError('config must be a JSON object with a "model" section')
    unknown = [k for k in raw if k not in ("model", "train")]
    if unknown:
        raise ConfigError(f"config has unknown sections: {', '.join(unknown)}")
    model = model_config_from_dict(raw["model"])
    train = train_config_from_dict(raw["train"]) if "train" in raw else None
    return model, train
