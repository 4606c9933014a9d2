"""FastAPI service wrapping the codec: load a checkpoint once, then serve
encode/decode/info/train/verify to any number of clients."""

from __future__ import annotations

import base64
import binascii
import hashlib

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__, bitstream, dsp, verify
from ..model import (CheckpointError, CodecModel, ConfigError, ModelConfig,
                     TrainConfig, load_checkpoint_bytes, model_config_from_dict,
                     save_checkpoint_bytes)
from ..trainer import (Trainer, TrainingDivergedError, evaluate,
                       generate_synthetic, metrics_to_csv, UtteranceExample)
from . import schemas


def _bad_request(message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=message)


def _b64_decode(data: str, what: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _bad_request(f"invalid base64 in {what}: {exc}") from exc


def _model_config(model_schema: schemas.ModelConfigModel) -> ModelConfig:
    try:
        return model_config_from_dict(model_schema.model_dump())
    except ConfigError as exc:
        raise _bad_request(str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="vqsc codec service", version=__version__)
    checkpoints: dict[str, CodecModel] = {}

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/codec/info", response_model=schemas.InfoResponse)
    def codec_info(request: schemas.InfoRequest):
        config = _model_config(request.config)
        model = CodecModel(config, seed=0)
        bits_per_frame = config.num_maps * bitstream.bits_per_index(config.codebook_size)
        header = bitstream.BitstreamHeader(
            sample_rate=config.sample_rate, strides=config.strides,
            num_maps=config.num_maps, codebook_size=config.codebook_size,
            speaker_codebook_size=config.speaker_codebook_size,
            speaker_index=0, num_frames=0, num_samples=0)
        return schemas.InfoResponse(
            downsampling_factor=config.downsampling_factor,
            frame_rate_hz=config.frame_rate,
            bits_per_frame=bits_per_frame,
            payload_bitrate_bps=bitstream.bitrate(config),
            header_bytes=header.size_bytes(),
            parameter_counts=model.num_parameters(),
        )

    @app.post("/checkpoints", response_model=schemas.CheckpointUploadResponse)
    def upload_checkpoint(request: schemas.CheckpointUploadRequest):
        blob = _b64_decode(request.checkpoint_b64, "checkpoint")
        try:
            model = load_checkpoint_bytes(blob)
        except (CheckpointError, ConfigError) as exc:
            raise _bad_request(str(exc)) from exc
        checkpoint_id = hashlib.sha256(blob).hexdigest()[:16]
        checkpoints[checkpoint_id] = model
        return schemas.CheckpointUploadResponse(
            checkpoint_id=checkpoint_id,
            sample_rate=model.config.sample_rate,
            payload_bitrate_bps=bitstream.bitrate(model.config),
            parameter_count=model.num_parameters()["total"],
        )

    def _checkpoint(checkpoint_id: str) -> CodecModel:
        model = checkpoints.get(checkpoint_id)
        if model is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown checkpoint id {checkpoint_id}")
        return model

    @app.post("/codec/encode", response_model=schemas.EncodeResponse)
    def encode(request: schemas.EncodeRequest):
        model = _checkpoint(request.checkpoint_id)
        wav = _b64_decode(request.wav_b64, "wav")
        try:
            buffer = dsp.read_wav_bytes(wav)
            codes = model.encode_to_codes(buffer)
            packed = bitstream.pack(codes, model.config)
        except (dsp.WavError, ValueError) as exc:
            raise _bad_request(str(exc)) from exc
        header_bytes = 25 + len(model.config.strides)
        payload_bytes = len(packed) - header_bytes
        duration = len(buffer) / buffer.sample_rate
        return schemas.EncodeResponse(
            vqsc_b64=base64.b64encode(packed).decode("ascii"),
            num_frames=codes.num_frames,
            num_samples=codes.num_samples,
            header_bytes=header_bytes,
            payload_bytes=payload_bytes,
            payload_bitrate_bps=payload_bytes * 8 / duration if duration else 0.0,
        )

    @app.post("/codec/decode", response_model=schemas.DecodeResponse)
    def decode(request: schemas.DecodeRequest):
        model = _checkpoint(request.checkpoint_id)
        blob = _b64_decode(request.vqsc_b64, "vqsc stream")
        try:
            codes, header = bitstream.unpack(blob)
        except bitstream.BitstreamError as exc:
            raise _bad_request(str(exc)) from exc
        if not header.matches_config(model.config):
            raise _bad_request("bitstream header does not match the checkpoint config")
        try:
            audio = model.sample_waveform(codes, seed=request.seed,
                                          temperature=request.temperature)
        except ValueError as exc:
            raise _bad_request(str(exc)) from exc
        trimmed = dsp.AudioBuffer(audio.samples[:header.num_samples],
                                  audio.sample_rate)
        return schemas.DecodeResponse(
            wav_b64=base64.b64encode(dsp.write_wav_bytes(trimmed)).decode("ascii"),
            num_samples=len(trimmed),
            sample_rate=trimmed.sample_rate,
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(request: schemas.TrainRequest):
        config = _model_config(request.codec)
        try:
            train_config = TrainConfig(**request.train.model_dump())
        except ConfigError as exc:
            raise _bad_request(str(exc)) from exc
        if request.steps_override is not None:
            if request.steps_override < 1:
                raise _bad_request("steps_override must be >= 1")
            train_config.steps = request.steps_override

        if request.synthetic:
            examples = generate_synthetic(
                request.synthetic_utterances, request.synthetic_duration_s,
                seed=train_config.seed, sample_rate=config.sample_rate,
                downsampling_factor=config.downsampling_factor)
        else:
            if not request.wavs_b64:
                raise _bad_request("either synthetic=true or wavs_b64 is required")
            examples = []
            for i, wav_b64 in enumerate(request.wavs_b64):
                wav = _b64_decode(wav_b64, f"wav {i}")
                try:
                    buffer = dsp.read_wav_bytes(wav)
                except dsp.WavError as exc:
                    raise _bad_request(f"wav {i}: {exc}") from exc
                if buffer.sample_rate != config.sample_rate:
                    raise _bad_request(f"wav {i}: expected {config.sample_rate} Hz")
                padded = dsp.pad_to_multiple(buffer, config.downsampling_factor)
                examples.append(UtteranceExample(padded, dsp.extract_f0(padded),
                                                 id=f"wav-{i}"))

        model = CodecModel(config, seed=train_config.seed)
        runner = Trainer(model, train_config)
        try:
            rows = runner.run(examples)
        except TrainingDivergedError as exc:
            raise _bad_request(str(exc)) from exc

        result = evaluate(model, examples, train_config.commitment_beta,
                          train_config.f0_weight)
        blob = save_checkpoint_bytes(model)
        checkpoint_id = hashlib.sha256(blob).hexdigest()[:16]
        checkpoints[checkpoint_id] = model
        early = rows[:10]
        final = rows[-20:]
        summary = schemas.TrainSummary(
            steps=len(rows),
            initial_total_loss=rows[0].total,
            final_total_loss=rows[-1].total,
            early_mean_total=float(np.mean([r.total for r in early])),
            final_mean_total=float(np.mean([r.total for r in final])),
            early_mean_f0=float(np.mean([r.f0_loss for r in early])),
            final_mean_f0=float(np.mean([r.f0_loss for r in final])),
            eval_reconstruction_nll=result.reconstruction_nll,
            eval_perplexity_per_map=list(result.perplexity_per_map),
            eval_teacher_forced_snr_db=result.teacher_forced_snr_db,
        )
        return schemas.TrainResponse(
            checkpoint_b64=base64.b64encode(blob).decode("ascii"),
            checkpoint_id=checkpoint_id,
            metrics_csv=metrics_to_csv(rows, config.num_maps),
            summary=summary,
        )

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def run_verify(request: schemas.VerifyRequest):
        try:
            results = verify.run_suites(
                request.suites,
                corrupt_vq_tie_break=request.corrupt_vq_tie_break,
                bitstream_cases=request.bitstream_cases)
        except ValueError as exc:
            raise _bad_request(str(exc)) from exc
        checks = [schemas.CheckModel(**r.to_dict()) for r in results]
        return schemas.VerifyResponse(
            checks=checks, all_passed=all(c.passed for c in checks))

    return app
