"""Deterministic signal plumbing: mu-law companding, WAV I/O, padding, pitch tracking."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass

import numpy as np

MU = 255.0
INT16_SCALE = 32768.0
PITCH_RATE_HZ = 200


class WavError(Exception):
    """Base class for WAV reading failures."""


class NotAWaveFileError(WavError):
    """The file is not a RIFF/WAVE container."""


class UnsupportedWavError(WavError):
    """The file is WAVE but not 16-bit mono PCM."""


@dataclass
class AudioBuffer:
    """Mono PCM waveform: int16 samples plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.dtype != np.int16:
            as_int = np.asarray(samples, dtype=np.int64)
            if as_int.size and (as_int.min() < -32768 or as_int.max() > 32767):
                raise ValueError("samples outside the int16 range")
            samples = as_int.astype(np.int16)
        self.samples = samples
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def normalized(self) -> np.ndarray:
        """Samples scaled to [-1, 1) as float64."""
        return self.samples.astype(np.float64) / INT16_SCALE


@dataclass
class MuLawStream:
    """8-bit mu-law symbol stream; one symbol per source sample."""

    symbols: np.ndarray
    mu: float = MU

    def __post_init__(self):
        symbols = np.asarray(self.symbols)
        if symbols.size and (symbols.min() < 0 or symbols.max() > 255):
            raise ValueError("mu-law symbols outside [0, 255]")
        self.symbols = symbols.astype(np.uint8)

    def __len__(self) -> int:
        return len(self.symbols)


@dataclass
class PitchTrack:
    """Per-frame voicing flags and natural-log f0, sampled at 200 Hz.

    Unvoiced frames store 0.0 in ``log_f0``; consumers must check ``voiced``.
    """

    log_f0: np.ndarray
    voiced: np.ndarray
    rate: int = PITCH_RATE_HZ

    def __post_init__(self):
        self.log_f0 = np.asarray(self.log_f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if len(self.log_f0) != len(self.voiced):
            raise ValueError("log_f0 and voiced must have equal length")
        if self.rate != PITCH_RATE_HZ:
            raise ValueError(f"pitch rate must be {PITCH_RATE_HZ} Hz")

    def __len__(self) -> int:
        return len(self.log_f0)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer with ties away from zero (np.round ties to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def mu_law_compress(buffer: AudioBuffer) -> MuLawStream:
    """Compand int16 samples to 8-bit mu-law symbols (mu = 255)."""
    x = buffer.normalized()
    f = np.sign(x) * np.log1p(MU * np.abs(x)) / np.log(1.0 + MU)
    symbols = _round_half_away((f + 1.0) / 2.0 * 255.0)
    return MuLawStream(symbols.astype(np.uint8))


def mu_law_expand(stream: MuLawStream, sample_rate: int = 16000) -> AudioBuffer:
    """Invert mu-law companding back to int16 samples."""
    y = stream.symbols.astype(np.float64) / 255.0 * 2.0 - 1.0
    x = np.sign(y) * (np.power(1.0 + MU, np.abs(y)) - 1.0) / MU
    samples = np.clip(_round_half_away(x * INT16_SCALE), -32768, 32767)
    return AudioBuffer(samples.astype(np.int16), sample_rate)


def mu_law_expand_floats(symbols: np.ndarray) -> np.ndarray:
    """Expand mu-law symbols to normalized floats in [-1, 1] without requantizing."""
    y = np.asarray(symbols, dtype=np.float64) / 255.0 * 2.0 - 1.0
    return np.sign(y) * (np.power(1.0 + MU, np.abs(y)) - 1.0) / MU


def pad_to_multiple(buffer: AudioBuffer, factor: int) -> AudioBuffer:
    """Append trailing zeros until the length is the next multiple of ``factor``."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    remainder = len(buffer) % factor
    if remainder == 0:
        return buffer
    padded = np.concatenate(
        [buffer.samples, np.zeros(factor - remainder, dtype=np.int16)]
    )
    return AudioBuffer(padded, buffer.sample_rate)


def extract_f0(buffer: AudioBuffer, voicing_threshold: float = 0.5,
               rms_gate: float = 1e-3) -> PitchTrack:
    """Track f0 at 200 Hz via normalized autocorrelation.

    One frame per hop of sample_rate/200 samples, analyzed over a centered
    window of sample_rate/40 samples.  Candidate lags span sample_rate/400 to
    sample_rate/40 samples (400 Hz down to 40 Hz).  A frame is voiced iff the
    best normalized autocorrelation peak reaches ``voicing_threshold`` and the
    window RMS reaches ``rms_gate`` of full scale.
    """
    sr = buffer.sample_rate
    if sr % PITCH_RATE_HZ != 0:
        raise ValueError(f"sample_rate must be divisible by {PITCH_RATE_HZ}")
    hop = sr // PITCH_RATE_HZ
    window = sr // 40
    lag_min = sr // 400
    lag_max = sr // 40

    num_frames = len(buffer) // hop
    x = buffer.normalized()
    # Margin so every frame's window and its lagged copies stay in bounds.
    pad_left = window // 2
    pad_right = window // 2 + lag_max
    xp = np.concatenate([np.zeros(pad_left), x, np.zeros(pad_right)])

    log_f0 = np.zeros(num_frames)
    voiced = np.zeros(num_frames, dtype=bool)
    energy = np.concatenate([[0.0], np.cumsum(xp * xp)])

    for i in range(num_frames):
        center = i * hop + hop // 2
        start = center - window // 2 + pad_left
        seg = xp[start:start + window]
        rms = np.sqrt(np.mean(seg * seg))
        if rms < rms_gate:
            continue
        # corr[tau] = sum_n seg[n] * xp[start+n+tau] for tau in [0, lag_max]
        corr = np.correlate(xp[start:start + window + lag_max], seg, mode="valid")
        e0 = energy[start + window] - energy[start]
        e_tau = energy[start + window:start + window + lag_max + 1] - \
            energy[start:start + lag_max + 1]
        denom = np.sqrt(e0 * e_tau)
        ncc = np.where(denom > 1e-12, corr / np.maximum(denom, 1e-12), 0.0)

        cand = ncc[lag_min:lag_max + 1]
        best = cand.max()
        if best < voicing_threshold:
            continue
        # Local maxima only; then the smallest lag whose peak is close to the
        # global best, avoiding octave-down errors from equally strong
        # multiples of the period.
        left = np.concatenate([[-np.inf], cand[:-1]])
        right = np.concatenate([cand[1:], [-np.inf]])
        is_peak = (cand > left) & (cand >= right)
        strong = np.flatnonzero(is_peak & (cand >= max(voicing_threshold, 0.95 * best)))
        if strong.size == 0:
            continue
        lag = int(strong[0]) + lag_min
        # Parabolic interpolation around the integer lag.
        if lag_min < lag < lag_max:
            y0, y1, y2 = ncc[lag - 1], ncc[lag], ncc[lag + 1]
            denom2 = y0 - 2.0 * y1 + y2
            if abs(denom2) > 1e-12:
                delta = 0.5 * (y0 - y2) / denom2
                if abs(delta) < 1.0:
                    lag = lag + delta
        voiced[i] = True
        log_f0[i] = np.log(sr / lag)

    return PitchTrack(log_f0, voiced)


def pitch_track_to_csv(track: PitchTrack) -> str:
    """Serialize a PitchTrack as CSV with columns frame_index,voiced,log_f0."""
    lines = ["frame_index,voiced,log_f0"]
    for i in range(len(track)):
        lines.append(f"{i},{int(track.voiced[i])},{float(track.log_f0[i])!r}")
    return "\n".join(lines) + "\n"


def pitch_track_from_csv(text: str) -> PitchTrack:
    """Parse the CSV produced by :func:`pitch_track_to_csv`."""
    rows = [line for line in text.strip().splitlines()[1:] if line]
    voiced = np.array([int(r.split(",")[1]) for r in rows], dtype=bool)
    log_f0 = np.array([float(r.split(",")[2]) for r in rows])
    return PitchTrack(log_f0, voiced)


def _read_wav_stream(stream) -> AudioBuffer:
    try:
        reader = wave.open(stream, "rb")
    except (wave.Error, EOFError) as exc:
        raise NotAWaveFileError(f"not a RIFF/WAVE file: {exc}") from exc
    with reader:
        channels = reader.getnchannels()
        width = reader.getsampwidth()
        if channels != 1:
            raise UnsupportedWavError(f"expected mono audio, got {channels} channels")
        if width != 2:
            raise UnsupportedWavError(f"expected 16-bit PCM, got {8 * width}-bit")
        rate = reader.getframerate()
        frames = reader.readframes(reader.getnframes())
    samples = np.frombuffer(frames, dtype="<i2").astype(np.int16)
    return AudioBuffer(samples, rate)


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit mono PCM WAV file.

    Raises FileNotFoundError for a missing file, NotAWaveFileError for a
    non-WAVE container, and UnsupportedWavError for other bit depths or
    channel counts.
    """
    with open(path, "rb") as fh:
        return _read_wav_stream(fh)


def read_wav_bytes(data: bytes) -> AudioBuffer:
    """Read a 16-bit mono PCM WAV from an in-memory byte string."""
    return _read_wav_stream(io.BytesIO(data))


def write_wav(path, buffer: AudioBuffer) -> None:
    """Write an AudioBuffer as a 16-bit mono PCM WAV file."""
    with open(path, "wb") as fh:
        fh.write(write_wav_bytes(buffer))


def write_wav_bytes(buffer: AudioBuffer) -> bytes:
    """Serialize an AudioBuffer as 16-bit mono PCM WAV bytes."""
    out = io.BytesIO()
    with wave.open(out, "wb") as writer:
        writer.setnchannels(1)
        writer.setsampwidth(2)
        writer.setframerate(buffer.sample_rate)
        writer.writeframes(buffer.samples.astype("<i2").tobytes())
    return out.getvalue()
