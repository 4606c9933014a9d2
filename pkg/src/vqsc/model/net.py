"""The codec network: strided-conv encoder, quantized bottleneck, gated
autoregressive decoder over mu-law symbols, and the training-only f0 head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dsp
from ..grad import (Parameter, Tape, Tensor, add, broadcast_over_time, conv1d,
                    concat_channels, embedding, mse, mul, relu, repeat_time,
                    scale, sigmoid, softmax, softmax_cross_entropy,
                    stable_sigmoid, tanh)
from .config import ModelConfig
from .vq import CodebookSet, quantize, speaker_code

NUM_SYMBOLS = 256
START_SYMBOL = 128  # mu-law code for silence, fed at position 0


class MisalignedPitchError(ValueError):
    """Pitch annotation length does not match the utterance's frame grid."""


class CodeSequence:
    """Compressed utterance: per-frame map indices plus one speaker index."""

    def __init__(self, frames: np.ndarray, speaker_index: int, num_samples: int):
        self.frames = np.asarray(frames, dtype=np.int64)  # [T_f, M]
        if self.frames.ndim != 2:
            raise ValueError("frames must be a [num_frames, num_maps] array")
        self.speaker_index = int(speaker_index)
        self.num_samples = int(num_samples)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_maps(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other) -> bool:
        return (isinstance(other, CodeSequence)
                and np.array_equal(self.frames, other.frames)
                and self.speaker_index == other.speaker_index
                and self.num_samples == other.num_samples)

    def __repr__(self):
        return (f"CodeSequence(frames={self.num_frames}x{self.num_maps}, "
                f"speaker={self.speaker_index}, samples={self.num_samples})")


@dataclass
class LossBreakdown:
    """Loss components; total is their weighted sum, exactly."""

    reconstruction_nll: float
    codebook_loss: float
    commitment_loss: float
    f0_loss: float
    commitment_beta: float
    f0_weight: float
    total: float

    @classmethod
    def combine(cls, nll: float, codebook: float, commitment: float,
                f0: float, beta: float, f0_weight: float) -> "LossBreakdown":
        total = nll + codebook + beta * commitment + f0_weight * f0
        return cls(nll, codebook, commitment, f0, beta, f0_weight, total)


@dataclass
class ForwardOutputs:
    """Everything a training step needs from one utterance's forward pass."""

    breakdown: LossBreakdown
    total_tensor: Tensor
    latents: Tensor
    map_indices: np.ndarray
    speaker_features: Tensor
    speaker_index: int
    logits: Tensor
    targets: np.ndarray


class CodecModel:
    """Holds all parameters and implements the codec's forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        self._build_encoder(rng)
        self._build_decoder(rng)
        self._build_f0_head(rng)
        self.codebooks = CodebookSet(config, rng)

    # -- construction -----------------------------------------------------

    def _param(self, name: str, shape, rng, fan_in: int | None = None) -> Parameter:
        if fan_in is None:
            data = np.zeros(shape)
        else:
            data = rng.standard_normal(shape) / np.sqrt(fan_in)
        p = Parameter(data, name=name)
        self.params[name] = p
        return p

    def _build_encoder(self, rng):
        cfg = self.config
        c_in = 1
        self.encoder_layers = []
        for i, stride in enumerate(cfg.strides):
            k = 2 * stride
            last = i == len(cfg.strides) - 1
            c_out = cfg.latent_dim if last else cfg.encoder_channels
            w = self._param(f"encoder.{i}.weight", (c_out, c_in, k), rng, fan_in=c_in * k)
            if last:
                # Start the latents at the codebook's init scale (+-1/K) so
                # the quantizer tiles them from the first step; both grow
                # together during training.
                w.data *= 2.0 / cfg.codebook_size
            b = self._param(f"encoder.{i}.bias", (c_out,), rng)
            self.encoder_layers.append((w, b, stride, k))
            c_in = c_out
        self.speaker_proj_w = self._param(
            "speaker_proj.weight", (cfg.speaker_dim, cfg.encoder_channels, 1), rng,
            fan_in=cfg.encoder_channels)
        self.speaker_proj_b = self._param("speaker_proj.bias", (cfg.speaker_dim,), rng)

    def _build_decoder(self, rng):
        cfg = self.config
        dc = cfg.decoder_channels
        cond_ch = cfg.latent_dim + cfg.speaker_dim
        self.symbol_embed = self._param("decoder.embed", (NUM_SYMBOLS, dc), rng, fan_in=dc)
        self.decoder_blocks = []
        for i, dilation in enumerate(cfg.decoder_dilations):
            block = {
                "dilation": dilation,
                "w_filter": self._param(f"decoder.{i}.filter.weight", (dc, dc, 2), rng, fan_in=2 * dc),
                "b_filter": self._param(f"decoder.{i}.filter.bias", (dc,), rng),
                "w_gate": self._param(f"decoder.{i}.gate.weight", (dc, dc, 2), rng, fan_in=2 * dc),
                "b_gate": self._param(f"decoder.{i}.gate.bias", (dc,), rng),
                "w_cond_filter": self._param(f"decoder.{i}.cond_filter.weight", (dc, cond_ch, 1), rng, fan_in=cond_ch),
                "b_cond_filter": self._param(f"decoder.{i}.cond_filter.bias", (dc,), rng),
                "w_cond_gate": self._param(f"decoder.{i}.cond_gate.weight", (dc, cond_ch, 1), rng, fan_in=cond_ch),
                "b_cond_gate": self._param(f"decoder.{i}.cond_gate.bias", (dc,), rng),
                "w_res": self._param(f"decoder.{i}.res.weight", (dc, dc, 1), rng, fan_in=dc),
                "b_res": self._param(f"decoder.{i}.res.bias", (dc,), rng),
                "w_skip": self._param(f"decoder.{i}.skip.weight", (dc, dc, 1), rng, fan_in=dc),
                "b_skip": self._param(f"decoder.{i}.skip.bias", (dc,), rng),
            }
            self.decoder_blocks.append(block)
        self.head_w1 = self._param("decoder.head1.weight", (dc, dc, 1), rng, fan_in=dc)
        self.head_b1 = self._param("decoder.head1.bias", (dc,), rng)
        self.head_w2 = self._param("decoder.head2.weight", (NUM_SYMBOLS, dc, 1), rng, fan_in=dc)
        self.head_b2 = self._param("decoder.head2.bias", (NUM_SYMBOLS,), rng)

    def _build_f0_head(self, rng):
        cfg = self.config
        dc = cfg.decoder_channels
        self.f0_w1 = self._param("f0_head.0.weight", (dc, cfg.latent_dim, 3), rng,
                                 fan_in=3 * cfg.latent_dim)
        self.f0_b1 = self._param("f0_head.0.bias", (dc,), rng)
        self.f0_w2 = self._param("f0_head.1.weight", (1, dc, 3), rng, fan_in=3 * dc)
        self.f0_b2 = self._param("f0_head.1.bias", (1,), rng)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def num_parameters(self) -> dict[str, int]:
        """Element counts per component, plus codebook entries."""
        groups = {"encoder": 0, "decoder": 0, "f0_head": 0, "speaker_proj": 0}
        for name, p in self.params.items():
            groups[name.split(".")[0]] += p.data.size
        groups["codebooks"] = sum(cb.weight.data.size
                                  for cb in self.codebooks.maps + [self.codebooks.speaker])
        groups["total"] = sum(groups.values())
        return groups

    # -- encoder ----------------------------------------------------------

    def encode_features(self, tape: Tape, buffer: dsp.AudioBuffer):
        """Run the strided encoder; returns (latents [D, T_f], speaker feats [D_s, T']).

        relu between layers; the final layer output passes through tanh so the
        latent space stays bounded and the EMA codebook can track it.
        """
        factor = self.config.downsampling_factor
        if len(buffer) % factor != 0 or len(buffer) == 0:
            raise ValueError(f"input length must be a nonzero multiple of {factor}")
        h = Tensor(buffer.normalized()[None, :])
        penultimate = None
        for i, (w, b, stride, _) in enumerate(self.encoder_layers):
            h = conv1d(tape, h, w, b, stride=stride, causal=True)
            if i < len(self.encoder_layers) - 1:
                h = relu(tape, h)
                if i == len(self.encoder_layers) - 2:
                    penultimate = h
        latents = tanh(tape, h)
        speaker_feats = conv1d(tape, penultimate, self.speaker_proj_w,
                               self.speaker_proj_b)
        return latents, speaker_feats

    def encode_to_codes(self, buffer: dsp.AudioBuffer) -> CodeSequence:
        """Full analysis path: pad, encode, quantize; returns the discrete codes."""
        if buffer.sample_rate != self.config.sample_rate:
            raise ValueError(
                f"model expects {self.config.sample_rate} Hz, got {buffer.sample_rate}")
        padded = dsp.pad_to_multiple(buffer, self.config.downsampling_factor)
        tape = Tape()
        latents, speaker_feats = self.encode_features(tape, padded)
        indices, _, _, _ = quantize(tape, latents, self.codebooks)
        speaker_idx, _, _, _ = speaker_code(tape, speaker_feats, self.codebooks)
        return CodeSequence(indices.T, speaker_idx, len(buffer))

    # -- conditioning and decoder ------------------------------------------

    def condition_upsample(self, tape: Tape, quantized: Tensor,
                           speaker_emb: Tensor, target_len: int) -> Tensor:
        """Repeat latent frames to sample rate and append the broadcast speaker code."""
        factor = self.config.downsampling_factor
        t_f = quantized.data.shape[1]
        if target_len != t_f * factor:
            raise ValueError(f"target_len must be {t_f * factor}, got {target_len}")
        upsampled = repeat_time(tape, quantized, factor)
        spk = broadcast_over_time(tape, speaker_emb, target_len)
        return concat_channels(tape, upsampled, spk)

    def decoder_logits(self, tape: Tape, input_symbols: np.ndarray,
                       conditioning: Tensor) -> Tensor:
        """Teacher-forced decoder: [256, T] logits, strictly causal in the symbols."""
        t = len(input_symbols)
        if conditioning.data.shape[1] != t:
            raise ValueError("conditioning length must match the symbol stream")
        x = embedding(tape, self.symbol_embed, input_symbols)
        skip_sum = None
        for blk in self.decoder_blocks:
            f = conv1d(tape, x, blk["w_filter"], blk["b_filter"],
                       dilation=blk["dilation"], causal=True)
            f = add(tape, f, conv1d(tape, conditioning, blk["w_cond_filter"],
                                    blk["b_cond_filter"]))
            g = conv1d(tape, x, blk["w_gate"], blk["b_gate"],
                       dilation=blk["dilation"], causal=True)
            g = add(tape, g, conv1d(tape, conditioning, blk["w_cond_gate"],
                                    blk["b_cond_gate"]))
            gated = mul(tape, tanh(tape, f), sigmoid(tape, g))
            x = add(tape, x, conv1d(tape, gated, blk["w_res"], blk["b_res"]))
            s = conv1d(tape, gated, blk["w_skip"], blk["b_skip"])
            skip_sum = s if skip_sum is None else add(tape, skip_sum, s)
        h = relu(tape, skip_sum)
        h = relu(tape, conv1d(tape, h, self.head_w1, self.head_b1))
        return conv1d(tape, h, self.head_w2, self.head_b2)

    # -- f0 head ------------------------------------------------------------

    def predict_f0(self, tape: Tape, quantized: Tensor) -> Tensor:
        """Upsample quantized latents to the pitch rate and predict log-f0, [1, T_f*r]."""
        up = repeat_time(tape, quantized, self.config.f0_upsample)
        h = relu(tape, conv1d(tape, up, self.f0_w1, self.f0_b1, causal=True))
        return conv1d(tape, h, self.f0_w2, self.f0_b2, causal=True)

    # -- training loss -------------------------------------------------------

    def compute_loss(self, tape: Tape, buffer: dsp.AudioBuffer,
                     pitch: dsp.PitchTrack, commitment_beta: float,
                     f0_weight: float) -> ForwardOutputs:
        """Teacher-forced loss over one utterance (padded internally)."""
        cfg = self.config
        padded = dsp.pad_to_multiple(buffer, cfg.downsampling_factor)
        t = len(padded)
        t_f = t // cfg.downsampling_factor
        expected_pitch = t_f * cfg.f0_upsample
        if len(pitch) != expected_pitch:
            raise MisalignedPitchError(
                f"pitch has {len(pitch)} frames, expected {expected_pitch}")

        symbols = dsp.mu_law_compress(padded).symbols
        inputs = np.concatenate([[START_SYMBOL], symbols[:-1]]).astype(np.int64)
        targets = symbols.astype(np.int64)

        latents, speaker_feats = self.encode_features(tape, padded)
        indices, quantized, cb_maps, commit_maps = quantize(tape, latents, self.codebooks)
        speaker_idx, speaker_emb, cb_spk, commit_spk = speaker_code(
            tape, speaker_feats, self.codebooks)

        conditioning = self.condition_upsample(tape, quantized, speaker_emb, t)
        logits = self.decoder_logits(tape, inputs, conditioning)
        nll = softmax_cross_entropy(tape, logits, targets)

        f0_pred = self.predict_f0(tape, quantized)
        f0_target = Tensor(pitch.log_f0[None, :])
        f0_loss = mse(tape, f0_pred, f0_target, mask=pitch.voiced)

        codebook_loss = add(tape, cb_maps, cb_spk)
        commitment_loss = add(tape, commit_maps, commit_spk)
        total = add(tape, add(tape, add(tape, nll, codebook_loss),
                              scale(tape, commitment_loss, commitment_beta)),
                    scale(tape, f0_loss, f0_weight))

        breakdown = LossBreakdown(
            reconstruction_nll=nll.item(),
            codebook_loss=codebook_loss.item(),
            commitment_loss=commitment_loss.item(),
            f0_loss=f0_loss.item(),
            commitment_beta=commitment_beta,
            f0_weight=f0_weight,
            total=total.item(),
        )
        return ForwardOutputs(
            breakdown=breakdown,
            total_tensor=total,
            latents=latents,
            map_indices=indices,
            speaker_features=speaker_feats,
            speaker_index=speaker_idx,
            logits=logits,
            targets=targets,
        )

    # -- synthesis -------------------------------------------------------------

    def codes_to_conditioning(self, codes: CodeSequence) -> np.ndarray:
        """Dequantize a CodeSequence into the decoder's [D+D_s, T] conditioning."""
        cfg = self.config
        if codes.num_maps != cfg.num_maps:
            raise ValueError("map count mismatch between codes and model")
        if np.any(codes.frames < 0) or np.any(codes.frames >= cfg.codebook_size):
            raise ValueError("map index out of codebook range")
        if not 0 <= codes.speaker_index < cfg.speaker_codebook_size:
            raise ValueError("speaker index out of codebook range")
        cols = [self.codebooks.maps[m].weight.data[codes.frames[:, m]].T
                for m in range(cfg.num_maps)]
        latents = np.concatenate(cols, axis=0)
        upsampled = np.repeat(latents, cfg.downsampling_factor, axis=1)
        spk = self.codebooks.speaker.weight.data[codes.speaker_index]
        spk_rows = np.repeat(spk[:, None], upsampled.shape[1], axis=1)
        return np.concatenate([upsampled, spk_rows], axis=0)

    def sample_waveform(self, codes: CodeSequence, seed: int = 0,
                        temperature: float = 1.0) -> dsp.AudioBuffer:
        """Autoregressively sample mu-law symbols conditioned on the codes.

        Deterministic for fixed (seed, codes, parameters); temperature 0 takes
        the argmax at every step.  Output covers the padded frame grid,
        num_frames * downsampling_factor samples.
        """
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        cfg = self.config
        cond = self.codes_to_conditioning(codes)
        t = cond.shape[1]
        rng = np.random.default_rng(seed)

        blocks = self.decoder_blocks
        # Per-block conditioning contributions for every position, precomputed.
        cond_f = [blk["w_cond_filter"].data[:, :, 0] @ cond + blk["b_cond_filter"].data[:, None]
                  for blk in blocks]
        cond_g = [blk["w_cond_gate"].data[:, :, 0] @ cond + blk["b_cond_gate"].data[:, None]
                  for blk in blocks]
        # Ring buffers of each block's input history, one slot per dilation step.
        history = [np.zeros((cfg.decoder_channels, blk["dilation"])) for blk in blocks]

        symbols = np.zeros(t, dtype=np.uint8)
        current = START_SYMBOL
        for pos in range(t):
            x = self.symbol_embed.data[current].copy()
            skip_sum = np.zeros(cfg.decoder_channels)
            for i, blk in enumerate(blocks):
                past = history[i][:, pos % blk["dilation"]].copy()
                history[i][:, pos % blk["dilation"]] = x
                f = (blk["w_filter"].data[:, :, 0] @ past
                     + blk["w_filter"].data[:, :, 1] @ x
                     + blk["b_filter"].data + cond_f[i][:, pos])
                g = (blk["w_gate"].data[:, :, 0] @ past
                     + blk["w_gate"].data[:, :, 1] @ x
                     + blk["b_gate"].data + cond_g[i][:, pos])
                gated = np.tanh(f) * stable_sigmoid(g)
                skip_sum += blk["w_skip"].data[:, :, 0] @ gated + blk["b_skip"].data
                x = x + blk["w_res"].data[:, :, 0] @ gated + blk["b_res"].data
            h = np.maximum(skip_sum, 0.0)
            h = np.maximum(self.head_w1.data[:, :, 0] @ h + self.head_b1.data, 0.0)
            logits = self.head_w2.data[:, :, 0] @ h + self.head_b2.data
            if temperature == 0.0:
                current = int(np.argmax(logits))
            else:
                probs = softmax((logits / temperature)[:, None])[:, 0]
                cdf = np.cumsum(probs)
                current = min(int(np.searchsorted(cdf, rng.random(), side="right")),
                              NUM_SYMBOLS - 1)
            symbols[pos] = current
        return dsp.mu_law_expand(dsp.MuLawStream(symbols), cfg.sample_rate)
