"""Desk-scale training: Adam, synthetic harmonic corpus, metrics, evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .grad import Tape, exact_time_mean, scale
from .model.config import ModelConfig, TrainConfig
from .model.net import CodecModel, ForwardOutputs, LossBreakdown
from .model.vq import map_assignment_stats, perplexity


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite; carries the offending step."""

    def __init__(self, step: int, breakdown: LossBreakdown):
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


@dataclass
class UtteranceExample:
    """One training item: audio plus its aligned 200 Hz pitch annotation."""

    audio: dsp.AudioBuffer
    pitch: dsp.PitchTrack
    id: str


@dataclass
class MetricsRow:
    """One training step's losses, codebook usage and teacher-forced SNR."""

    step: int
    reconstruction_nll: float
    codebook_loss: float
    commitment_loss: float
    f0_loss: float
    total: float
    perplexity_per_map: list
    teacher_forced_snr_db: float

    def csv_values(self) -> list:
        return ([self.step, self.reconstruction_nll, self.codebook_loss,
                 self.commitment_loss, self.f0_loss, self.total]
                + list(self.perplexity_per_map) + [self.teacher_forced_snr_db])


def metrics_csv_header(num_maps: int) -> str:
    cols = ["step", "reconstruction_nll", "codebook_loss", "commitment_loss",
            "f0_loss", "total_loss"]
    cols += [f"perplexity_map_{m}" for m in range(num_maps)]
    cols += ["teacher_forced_snr_db"]
    return ",".join(cols)


def metrics_to_csv(rows: list, num_maps: int) -> str:
    lines = [metrics_csv_header(num_maps)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row.csv_values()))
    return "\n".join(lines) + "\n"


# -- synthetic corpus ---------------------------------------------------------


def generate_synthetic(num_utterances: int, duration_s: float, seed: int,
                       sample_rate: int = 16000, downsampling_factor: int = 160,
                       fundamental_hz: float | None = None,
                       pitch_drift: float = 0.03,
                       silence_probability: float = 0.3) -> list:
    """Deterministic harmonic-tone corpus with analytic pitch annotations.

    Each utterance is a 3-harmonic tone whose fundamental is drawn from
    [80, 300] Hz (or fixed via ``fundamental_hz``) with a slow random drift of
    up to ``pitch_drift`` relative, peak-normalized to half full scale, with an
    optional hard silence gap.  Pitch labels come from the generator's own
    fundamental, not from a tracker.
    """
    if sample_rate % dsp.PITCH_RATE_HZ != 0:
        raise ValueError(f"sample_rate must be divisible by {dsp.PITCH_RATE_HZ}")
    num_samples = round(duration_s * sample_rate)
    if num_samples % downsampling_factor != 0:
        raise ValueError("duration must be a whole number of downsampling periods")
    hop = sample_rate // dsp.PITCH_RATE_HZ
    num_frames = num_samples // hop
    rng = np.random.default_rng(seed)

    examples = []
    for u in range(num_utterances):
        base = fundamental_hz if fundamental_hz is not None else rng.uniform(80.0, 300.0)
        if pitch_drift > 0:
            walk = np.cumsum(rng.standard_normal(num_frames))
            walk -= walk[0]
            peak = np.abs(walk).max()
            if peak > 0:
                walk *= math.log1p(pitch_drift) / peak
        else:
            walk = np.zeros(num_frames)
        log_f0 = np.log(base) + walk

        f0_per_sample = np.repeat(np.exp(log_f0), hop)
        phase = 2.0 * np.pi * np.cumsum(f0_per_sample) / sample_rate
        amps = [1.0, rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6)]
        wave = np.zeros(num_samples)
        for h, a in enumerate(amps, start=1):
            wave += a * np.sin(h * phase)

        voiced = np.ones(num_frames, dtype=bool)
        if rng.random() < silence_probability and num_frames >= 8:
            gap_len = rng.integers(num_frames // 8, num_frames // 4 + 1)
            gap_start = rng.integers(0, num_frames - gap_len + 1)
            voiced[gap_start:gap_start + gap_len] = False
            wave[gap_start * hop:(gap_start + gap_len) * hop] = 0.0

        peak = np.abs(wave).max()
        if peak > 0:
            wave = wave / peak * 16384.0
        samples = (np.sign(wave) * np.floor(np.abs(wave) + 0.5)).astype(np.int16)
        audio = dsp.AudioBuffer(samples, sample_rate)
        pitch = dsp.PitchTrack(np.where(voiced, log_f0, 0.0), voiced)
        examples.append(UtteranceExample(audio, pitch, id=f"synthetic-{seed}-{u:03d}"))
    return examples


def load_wav_directory(path, config: ModelConfig) -> list:
    """Read every .wav under a directory and annotate it with the pitch tracker."""
    import os

    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".wav"))
    if not names:
        raise ValueError(f"no .wav files in {path}")
    examples = []
    for name in names:
        audio = dsp.read_wav(os.path.join(path, name))
        if audio.sample_rate != config.sample_rate:
            raise ValueError(f"{name}: expected {config.sample_rate} Hz")
        padded = dsp.pad_to_multiple(audio, config.downsampling_factor)
        pitch = dsp.extract_f0(padded)
        examples.append(UtteranceExample(padded, pitch, id=name))
    return examples


def crop_example(example: UtteranceExample, offset: int, length: int,
                 config: ModelConfig) -> UtteranceExample:
    """Slice a window of ``length`` samples starting at a frame-aligned offset."""
    factor = config.downsampling_factor
    if offset % factor != 0 or length % factor != 0:
        raise ValueError("crop offset and length must be frame-aligned")
    hop = config.sample_rate // config.f0_rate
    audio = dsp.AudioBuffer(example.audio.samples[offset:offset + length],
                            example.audio.sample_rate)
    lo, hi = offset // hop, (offset + length) // hop
    pitch = dsp.PitchTrack(example.pitch.log_f0[lo:hi], example.pitch.voiced[lo:hi])
    return UtteranceExample(audio, pitch, id=f"{example.id}@{offset}")


def sample_batch(examples: list, config: ModelConfig, train_config: TrainConfig,
                 rng: np.random.Generator) -> list:
    """Draw a batch of fixed-length, frame-aligned crops."""
    factor = config.downsampling_factor
    crop = train_config.crop_samples
    if crop % factor != 0:
        raise ValueError("crop_samples must be a multiple of the downsampling factor")
    batch = []
    for _ in range(train_config.batch_size):
        ex = examples[int(rng.integers(0, len(examples)))]
        max_offset = (len(ex.audio) - crop) // factor
        if max_offset < 0:
            raise ValueError(f"{ex.id} is shorter than crop_samples")
        offset = int(rng.integers(0, max_offset + 1)) * factor
        batch.append(crop_example(ex, offset, crop, config))
    return batch


# -- optimizer ----------------------------------------------------------------


class Adam:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- training loop ------------------------------------------------------------


def teacher_forced_snr_db(outputs: ForwardOutputs) -> float:
    """SNR of the argmax teacher-forced reconstruction against the targets, in dB."""
    predicted = np.argmax(outputs.logits.data, axis=0)
    x = dsp.mu_law_expand_floats(outputs.targets)
    y = dsp.mu_law_expand_floats(predicted)
    signal = float(np.sum(x * x))
    noise = float(np.sum((x - y) * (x - y)))
    if signal == 0.0:
        return 0.0
    if noise == 0.0:
        return float("inf")
    return 10.0 * math.log10(signal / noise)


class Trainer:
    """Owns one training run: model, optimizer state, EMA updates, metrics."""

    def __init__(self, model: CodecModel, train_config: TrainConfig):
        self.model = model
        self.config = train_config
        params = list(model.parameters())
        if not train_config.ema_enabled:
            params += model.codebooks.parameters()
        self.optimizer = Adam(params, lr=train_config.learning_rate,
                              beta1=train_config.adam_beta1,
                              beta2=train_config.adam_beta2,
                              eps=train_config.adam_eps)
        self.step_count = 0
        self._revive_rng = np.random.default_rng([train_config.seed, 0xC0DE])

    def train_step(self, batch: list) -> MetricsRow:
        """One optimization step over a batch of aligned utterance crops."""
        cfg = self.model.config
        tc = self.config
        self.optimizer.zero_grad()
        for cb in self.model.codebooks.parameters():
            cb.zero_grad()

        components = np.zeros(4)  # nll, codebook, commitment, f0
        map_counts = [np.zeros(cfg.codebook_size) for _ in range(cfg.num_maps)]
        map_sums = [np.zeros((cfg.codebook_size, cfg.per_map_dim))
                    for _ in range(cfg.num_maps)]
        map_pools = [[] for _ in range(cfg.num_maps)]
        spk_counts = np.zeros(cfg.speaker_codebook_size)
        spk_sums = np.zeros((cfg.speaker_codebook_size, cfg.speaker_dim))
        spk_pool = []
        snr_values = []

        for item in batch:
            tape = Tape()
            out = self.model.compute_loss(tape, item.audio, item.pitch,
                                          tc.commitment_beta, tc.f0_weight)
            b = out.breakdown
            components += [b.reconstruction_nll, b.codebook_loss,
                           b.commitment_loss, b.f0_loss]
            # Mean over the batch: scale each item's gradient contribution.
            tape.backward(scale(tape, out.total_tensor, 1.0 / len(batch)))
            for m in range(cfg.num_maps):
                counts, sums = map_assignment_stats(
                    out.latents.data, out.map_indices, m, cfg.per_map_dim,
                    cfg.codebook_size)
                map_counts[m] += counts
                map_sums[m] += sums
                map_pools[m].append(
                    out.latents.data[m * cfg.per_map_dim:(m + 1) * cfg.per_map_dim])
            pooled = exact_time_mean(out.speaker_features.data)
            spk_counts[out.speaker_index] += 1.0
            spk_sums[out.speaker_index] += pooled
            spk_pool.append(pooled[:, None])
            snr_values.append(teacher_forced_snr_db(out))

        components /= len(batch)
        nll, cb_loss, commit, f0 = (float(v) for v in components)
        breakdown = LossBreakdown.combine(nll, cb_loss, commit, f0,
                                          tc.commitment_beta, tc.f0_weight)
        self.step_count += 1
        if not math.isfinite(breakdown.total):
            raise TrainingDivergedError(self.step_count, breakdown)

        self.optimizer.step()
        if tc.ema_enabled:
            for m, cb in enumerate(self.model.codebooks.maps):
                cb.ema_update(map_counts[m], map_sums[m], tc.ema_decay, tc.ema_epsilon)
                self._revive_starved(cb, np.concatenate(map_pools[m], axis=1))
            speaker = self.model.codebooks.speaker
            speaker.ema_update(spk_counts, spk_sums, tc.ema_decay, tc.ema_epsilon)
            self._revive_starved(speaker, np.concatenate(spk_pool, axis=1))

        return MetricsRow(
            step=self.step_count,
            reconstruction_nll=breakdown.reconstruction_nll,
            codebook_loss=breakdown.codebook_loss,
            commitment_loss=breakdown.commitment_loss,
            f0_loss=breakdown.f0_loss,
            total=breakdown.total,
            perplexity_per_map=[perplexity(c) for c in map_counts],
            teacher_forced_snr_db=float(np.mean(snr_values)),
        )

    def _revive_starved(self, codebook, pool: np.ndarray) -> None:
        """Re-seed codes whose moving-average count fell below the threshold.

        Starved codes are parked on latent vectors sampled from the current
        batch, so the codebook keeps tiling the data it actually sees.
        """
        threshold = self.config.revive_threshold
        if threshold <= 0:
            return
        starved = np.flatnonzero(codebook.ema_count < threshold)
        if starved.size == 0:
            return
        picks = self._revive_rng.integers(0, pool.shape[1], size=starved.size)
        codebook.revive(starved, pool[:, picks].T, self.config.ema_epsilon)

    def run(self, examples: list, on_step=None) -> list:
        """Run the configured number of steps; returns all metrics rows."""
        rng = np.random.default_rng(self.config.seed)
        rows = []
        for _ in range(self.config.steps):
            batch = sample_batch(examples, self.model.config, self.config, rng)
            row = self.train_step(batch)
            rows.append(row)
            if on_step is not None:
                on_step(row)
        return rows


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalResult:
    """Aggregate objective metrics over an example set."""

    num_examples: int
    reconstruction_nll: float
    perplexity_per_map: list = field(default_factory=list)
    teacher_forced_snr_db: float = 0.0

    def to_dict(self) -> dict:
        return {
            "num_examples": self.num_examples,
            "reconstruction_nll": self.reconstruction_nll,
            "perplexity_per_map": list(self.perplexity_per_map),
            "teacher_forced_snr_db": self.teacher_forced_snr_db,
        }


def evaluate(model: CodecModel, examples: list, commitment_beta: float = 0.25,
             f0_weight: float = 1.0) -> EvalResult:
    """Teacher-forced metrics over whole utterances; read-only."""
    if not examples:
        raise ValueError("evaluate requires at least one example")
    cfg = model.config
    nlls = []
    snrs = []
    counts = [np.zeros(cfg.codebook_size) for _ in range(cfg.num_maps)]
    for ex in examples:
        tape = Tape()
        out = model.compute_loss(tape, ex.audio, ex.pitch, commitment_beta, f0_weight)
        nlls.append(out.breakdown.reconstruction_nll)
        snrs.append(teacher_forced_snr_db(out))
        for m in range(cfg.num_maps):
            counts[m] += np.bincount(out.map_indices[m], minlength=cfg.codebook_size)
    return EvalResult(
        num_examples=len(examples),
        reconstruction_nll=float(np.mean(nlls)),
        perplexity_per_map=[perplexity(c) for c in counts],
        teacher_forced_snr_db=float(np.mean(snrs)),
    )
