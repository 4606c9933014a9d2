"""Self-describing checkpoint container: config, parameters, codebooks, seed.

Arrays are stored as base64 of raw little-endian float64 bytes, so save/load
round trips are bit-exact and the serialized form is deterministic.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .config import model_config_from_dict
from .net import CodecModel

FORMAT_NAME = "vqsc-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The checkpoint bytes are malformed or from an unsupported version."""


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return a.reshape(entry["shape"])


def save_checkpoint_bytes(model: CodecModel) -> bytes:
    """Serialize a model to deterministic JSON bytes."""
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "seed": model.seed,
        "model_config": model.config.to_dict(),
        "parameters": {name: _encode_array(p.data) for name, p in model.params.items()},
        "codebooks": {
            "maps": [
                {
                    "weight": _encode_array(cb.weight.data),
                    "ema_count": _encode_array(cb.ema_count),
                    "ema_sum": _encode_array(cb.ema_sum),
                }
                for cb in model.codebooks.maps
            ],
            "speaker": {
                "weight": _encode_array(model.codebooks.speaker.weight.data),
                "ema_count": _encode_array(model.codebooks.speaker.ema_count),
                "ema_sum": _encode_array(model.codebooks.speaker.ema_sum),
            },
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("ascii")


def load_checkpoint_bytes(data: bytes) -> CodecModel:
    """Rebuild a model from checkpoint bytes; raises CheckpointError when malformed."""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"not a checkpoint file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_NAME:
        raise CheckpointError("not a checkpoint file: missing format tag")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    try:
        config = model_config_from_dict(payload["model_config"])
        model = CodecModel(config, seed=int(payload["seed"]))
        for name, p in model.params.items():
            stored = _decode_array(payload["parameters"][name])
            if stored.shape != p.data.shape:
                raise CheckpointError(f"shape mismatch for parameter {name}")
            p.data = stored
        for cb, entry in zip(model.codebooks.maps, payload["codebooks"]["maps"]):
            cb.weight.data = _decode_array(entry["weight"])
            cb.ema_count = _decode_array(entry["ema_count"])
            cb.ema_sum = _decode_array(entry["ema_sum"])
        spk = payload["codebooks"]["speaker"]
        model.codebooks.speaker.weight.data = _decode_array(spk["weight"])
        model.codebooks.speaker.ema_count = _decode_array(spk["ema_count"])
        model.codebooks.speaker.ema_sum = _decode_array(spk["ema_sum"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing entry: {exc}") from exc
    return model


def save_checkpoint(path, model: CodecModel) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint_bytes(model))


def load_checkpoint(path) -> CodecModel:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
