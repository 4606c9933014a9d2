"""Codec model: config, vector quantization, network, checkpointing."""

from .config import (ConfigError, ModelConfig, TrainConfig, load_config_file,
                     model_config_from_dict, parse_config_dict,
                     train_config_from_dict)
from .vq import Codebook, CodebookSet, nearest_indices, perplexity, quantize, speaker_code
from .net import (CodecModel, CodeSequence, ForwardOutputs, LossBreakdown,
                  MisalignedPitchError, NUM_SYMBOLS, START_SYMBOL)
from .checkpoint import (CheckpointError, load_checkpoint, load_checkpoint_bytes,
                         save_checkpoint, save_checkpoint_bytes)

__all__ = [
    "ConfigError", "ModelConfig", "TrainConfig", "load_config_file",
    "model_config_from_dict", "parse_config_dict", "train_config_from_dict",
    "Codebook", "CodebookSet", "nearest_indices", "perplexity", "quantize",
    "speaker_code", "CodecModel", "CodeSequence", "ForwardOutputs",
    "LossBreakdown", "MisalignedPitchError", "NUM_SYMBOLS", "START_SYMBOL",
    "CheckpointError", "load_checkpoint", "load_checkpoint_bytes",
    "save_checkpoint", "save_checkpoint_bytes",
]
