"""Pydantic request/response models for the codec service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ModelConfigModel(BaseModel):
    """Mirrors the JSON config schema's "model" section."""

    sample_rate: int
    strides: list[int]
    encoder_channels: int
    num_maps: int
    codebook_size: int
    latent_dim: int
    speaker_codebook_size: int
    speaker_dim: int
    decoder_layers: int
    decoder_dilations: list[int]
    decoder_channels: int
    f0_rate: int = 200


class TrainConfigModel(BaseModel):
    """Mirrors the JSON config schema's "train" section."""

    steps: int
    batch_size: int
    learning_rate: float
    seed: int
    commitment_beta: float = 0.25
    f0_weight: float = 1.0
    ema_enabled: bool = True
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    revive_threshold: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    crop_samples: int = 5120


class InfoRequest(BaseModel):
    config: ModelConfigModel


class InfoResponse(BaseModel):
    downsampling_factor: int
    frame_rate_hz: int
    bits_per_frame: int
    payload_bitrate_bps: int
    header_bytes: int
    parameter_counts: dict[str, int]


class CheckpointUploadRequest(BaseModel):
    checkpoint_b64: str


class CheckpointUploadResponse(BaseModel):
    checkpoint_id: str
    sample_rate: int
    payload_bitrate_bps: int
    parameter_count: int


class EncodeRequest(BaseModel):
    checkpoint_id: str
    wav_b64: str


class EncodeResponse(BaseModel):
    vqsc_b64: str
    num_frames: int
    num_samples: int
    header_bytes: int
    payload_bytes: int
    payload_bitrate_bps: float


class DecodeRequest(BaseModel):
    checkpoint_id: str
    vqsc_b64: str
    seed: int = 0
    temperature: float = Field(default=1.0, ge=0.0)


class DecodeResponse(BaseModel):
    wav_b64: str
    num_samples: int
    sample_rate: int


class TrainRequest(BaseModel):
    codec: ModelConfigModel = Field(alias="model")
    train: TrainConfigModel
    synthetic: bool = True
    wavs_b64: list[str] = Field(default_factory=list)
    steps_override: Optional[int] = None
    synthetic_utterances: int = 24
    synthetic_duration_s: float = 1.0


class TrainSummary(BaseModel):
    steps: int
    initial_total_loss: float
    final_total_loss: float
    early_mean_total: float
    final_mean_total: float
    early_mean_f0: float
    final_mean_f0: float
    eval_reconstruction_nll: float
    eval_perplexity_per_map: list[float]
    eval_teacher_forced_snr_db: float


class TrainResponse(BaseModel):
    checkpoint_b64: str
    checkpoint_id: str
    metrics_csv: str
    summary: TrainSummary


class VerifyRequest(BaseModel):
    suites: list[str] = Field(default_factory=lambda: ["all"])
    corrupt_vq_tie_break: bool = False
    bitstream_cases: int = 10000


class CheckModel(BaseModel):
    suite: str
    name: str
    passed: bool
    detail: str


class VerifyResponse(BaseModel):
    checks: list[CheckModel]
    all_passed: bool
