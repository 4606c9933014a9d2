"""vqsc: a very low bit-rate neural speech codec.

A strided convolutional encoder maps 16 kHz PCM to 100 Hz latent frames, a
multi-map vector quantizer (plus one utterance-level speaker code) discretizes
them into a 1600 bps bitstream, and a gated autoregressive decoder over 8-bit
mu-law symbols reconstructs the waveform.
"""

__version__ = "0.1.0"
