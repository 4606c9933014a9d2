import numpy as np
import pytest

from vqsc.model import CodecModel, ModelConfig


@pytest.fixture
def tiny_config():
    """A fast 1.6 kHz config: factor 16, 100 Hz frames, toy widths."""
    return ModelConfig(
        sample_rate=1600,
        strides=(2, 2, 4),
        encoder_channels=6,
        num_maps=2,
        codebook_size=5,
        latent_dim=4,
        speaker_codebook_size=4,
        speaker_dim=3,
        decoder_layers=2,
        decoder_dilations=(1, 2),
        decoder_channels=5,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return CodecModel(tiny_config, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
