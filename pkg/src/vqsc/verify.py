"""Self-check suites runnable from the CLI and the service: mu-law, VQ,
gradients, bitstream.  Each check compares the production path against an
independent in-module oracle and reports pass/fail."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bitstream, dsp
from .grad import Tensor, conv1d, grad_check, mean_over_time, mse, mul, \
    relu, sigmoid, softmax_cross_entropy, tanh
from .model.config import ModelConfig
from .model.net import CodeSequence
from .model.vq import nearest_indices

SUITES = ("mulaw", "vq", "grad", "bitstream")


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"suite": self.suite, "name": self.name,
                "passed": self.passed, "detail": self.detail}


# -- mu-law -------------------------------------------------------------------


def mulaw_checks() -> list:
    """Exhaustive round-trip over all 65536 int16 values plus symbol idempotence."""
    results = []
    samples = np.arange(-32768, 32768, dtype=np.int64)
    buffer = dsp.AudioBuffer(samples.astype(np.int16), 16000)
    symbols = dsp.mu_law_compress(buffer).symbols

    monotone = bool(np.all(np.diff(symbols.astype(np.int64)) >= 0))
    results.append(CheckResult("mulaw", "compressor_monotone", monotone,
                               "compress is nondecreasing over the int16 domain"))

    recon = dsp.mu_law_expand(dsp.MuLawStream(symbols), 16000).samples.astype(np.int64)
    max_err = float(np.abs(samples - recon).max() / 32768.0)
    results.append(CheckResult("mulaw", "roundtrip_error", max_err <= 0.025,
                               f"max normalized round-trip error {max_err:.6f} (bound 0.025)"))

    all_syms = np.arange(256, dtype=np.uint8)
    again = dsp.mu_law_compress(dsp.mu_law_expand(dsp.MuLawStream(all_syms), 16000)).symbols
    idem = bool(np.array_equal(again, all_syms))
    results.append(CheckResult("mulaw", "symbol_idempotence", idem,
                               "compress(expand(s)) == s for all 256 symbols"))
    return results


# -- vector quantization --------------------------------------------------------


def _oracle_nearest(vectors: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Exhaustive nearest-neighbor scan with exact sums and lowest-index ties."""
    out = np.zeros(vectors.shape[1], dtype=np.int64)
    for t in range(vectors.shape[1]):
        best_k, best_d = 0, math.inf
        for k in range(codewords.shape[0]):
            d = math.fsum((codewords[k][i] - vectors[i][t]) ** 2
                          for i in range(vectors.shape[0]))
            if d < best_d:
                best_k, best_d = k, d
        out[t] = best_k
    return out


def vq_checks(trials: int = 1000, seed: int = 11, corrupt_tie_break: bool = False) -> list:
    """Randomized nearest-neighbor equivalence; every fourth case has forced ties.

    ``corrupt_tie_break`` flips the candidate's tie handling and exists as a
    negative control: the suite must then fail.
    """
    rng = np.random.default_rng(seed)
    tie_break = "highest" if corrupt_tie_break else "lowest"
    mismatches = 0
    for trial in range(trials):
        k = int(rng.integers(1, 65))
        dim = int(rng.integers(1, 9))
        t = int(rng.integers(1, 17))
        codewords = rng.standard_normal((k, dim))
        vectors = rng.standard_normal((dim, t))
        if trial % 4 == 0 and k >= 2:
            # Duplicate a row and probe it exactly, so the nearest match is a
            # genuine tie and the lowest-index rule is observable.
            lo = int(rng.integers(0, k - 1))
            hi = int(rng.integers(lo + 1, k))
            codewords[hi] = codewords[lo]
            vectors[:, 0] = codewords[lo]
        got = nearest_indices(vectors, codewords, tie_break=tie_break)
        if not np.array_equal(got, _oracle_nearest(vectors, codewords)):
            mismatches += 1
    return [CheckResult("vq", "nearest_neighbor_oracle", mismatches == 0,
                        f"{mismatches} mismatches in {trials} randomized instances")]


# -- gradients ----------------------------------------------------------------


def _gradient_cases(seed: int = 5):
    rng = np.random.default_rng(seed)

    def away_from_kinks(shape):
        x = rng.standard_normal(shape)
        return np.where(np.abs(x) < 0.05, x + 0.1 * np.sign(x) + 0.05, x)

    cases = []
    cases.append(("relu", lambda tape, x: mse(
        tape, relu(tape, x), Tensor(np.zeros(x.data.shape))),
        [Tensor(away_from_kinks((3, 8)))]))
    cases.append(("tanh_times_sigmoid", lambda tape, x: mse(
        tape, mul(tape, tanh(tape, x), sigmoid(tape, x)),
        Tensor(np.zeros(x.data.shape))),
        [Tensor(rng.standard_normal(8).reshape(1, 8))]))
    cases.append(("mean_over_time", lambda tape, x: mse(
        tape, mean_over_time(tape, x), Tensor(np.zeros(x.data.shape[0]))),
        [Tensor(rng.standard_normal((4, 6)))]))

    targets = rng.integers(0, 4, size=3)
    cases.append(("softmax_cross_entropy",
                  lambda tape, lg: softmax_cross_entropy(tape, lg, targets),
                  [Tensor(rng.standard_normal((4, 3)))]))

    mask = np.array([True, False, True, True, False])
    cases.append(("masked_mse",
                  lambda tape, p, t: mse(tape, p, t, mask=mask),
                  [Tensor(rng.standard_normal((2, 5))),
                   Tensor(rng.standard_normal((2, 5)))]))

    cases.append(("conv1d_causal",
                  lambda tape, x, w, b: mse(
                      tape, conv1d(tape, x, w, b, stride=2, causal=True),
                      Tensor(np.zeros((3, 4)))),
                  [Tensor(rng.standard_normal((2, 8))),
                   Tensor(rng.standard_normal((3, 2, 3))),
                   Tensor(rng.standard_normal(3))]))

    def composite(tape, x, w1, w2, w3):
        h = relu(tape, conv1d(tape, x, w1, None, causal=True))
        h = tanh(tape, conv1d(tape, h, w2, None, stride=2, causal=True))
        out = conv1d(tape, h, w3, None, causal=True)
        return mse(tape, out, Tensor(np.zeros(out.data.shape)))

    cases.append(("conv_stack_depth3", composite,
                  [Tensor(rng.standard_normal((2, 8))),
                   Tensor(rng.standard_normal((3, 2, 2))),
                   Tensor(rng.standard_normal((3, 3, 2))),
                   Tensor(rng.standard_normal((2, 3, 2)))]))
    return cases


def grad_checks(step: float = 1e-5, tolerance: float = 1e-4) -> list:
    """Finite-difference validation of every differentiable op plus a composite."""
    results = []
    for name, closure, inputs in _gradient_cases():
        report = grad_check(closure, inputs, step=step, tolerance=tolerance)
        results.append(CheckResult(
            "grad", name, report.passed,
            f"max relative error {report.max_relative_error:.3e} (tolerance {tolerance})"))
    return results


# -- bitstream ----------------------------------------------------------------


def _random_codes(rng: np.random.Generator) -> tuple[CodeSequence, ModelConfig]:
    num_maps = int(rng.integers(1, 4))
    codebook_size = int(rng.integers(1, 300))
    frames = int(rng.integers(0, 40))
    strides = (2, int(rng.integers(2, 6)))
    factor = strides[0] * strides[1]
    config = ModelConfig(
        sample_rate=200 * factor,
        strides=strides,
        encoder_channels=4,
        num_maps=num_maps,
        codebook_size=codebook_size,
        latent_dim=4 * num_maps,
        speaker_codebook_size=int(rng.integers(1, 300)),
        speaker_dim=4,
        decoder_layers=2,
        decoder_dilations=(1, 2),
        decoder_channels=4,
    )
    speaker = int(rng.integers(0, config.speaker_codebook_size))
    indices = rng.integers(0, codebook_size, size=(frames, num_maps))
    num_samples = int(rng.integers(max(0, (frames - 1) * factor + 1), frames * factor + 1)) \
        if frames else 0
    return CodeSequence(indices, speaker, num_samples), config


def bitstream_checks(cases: int = 10000, seed: int = 17) -> list:
    """Round-trip fuzzing plus the four distinct decode error paths."""
    rng = np.random.default_rng(seed)
    results = []
    bad = 0
    for _ in range(cases):
        codes, config = _random_codes(rng)
        packed = bitstream.pack(codes, config)
        decoded, header = bitstream.unpack(packed)
        if decoded != codes or not header.matches_config(config):
            bad += 1
    results.append(CheckResult("bitstream", "roundtrip_fuzz", bad == 0,
                               f"{bad} round-trip failures in {cases} cases"))

    codes, config = _random_codes(np.random.default_rng(seed + 1))
    packed = bitstream.pack(codes, config)
    error_probes = [
        ("bad_magic", b"XXXX" + packed[4:], bitstream.BadMagicError),
        ("bad_version", packed[:4] + b"\x09" + packed[5:],
         bitstream.UnsupportedVersionError),
        ("truncated", packed[:-1] if len(packed) > 25 else packed[:10],
         bitstream.TruncatedStreamError),
    ]
    for name, blob, exc_type in error_probes:
        try:
            bitstream.unpack(blob)
            results.append(CheckResult("bitstream", name, False, "no error raised"))
        except exc_type:
            results.append(CheckResult("bitstream", name, True,
                                       f"raised {exc_type.__name__}"))
        except bitstream.BitstreamError as exc:
            results.append(CheckResult("bitstream", name, False,
                                       f"wrong error {type(exc).__name__}"))

    # Nonzero padding needs a payload whose final byte has spare bits.
    cfg = ModelConfig(sample_rate=800, strides=(2, 2), encoder_channels=4,
                      num_maps=1, codebook_size=3, latent_dim=4,
                      speaker_codebook_size=4, speaker_dim=4, decoder_layers=2,
                      decoder_dilations=(1, 2), decoder_channels=4)
    padded = bitstream.pack(CodeSequence(np.array([[0], [1], [2]]), 0, 12), cfg)
    corrupted = padded[:-1] + bytes([padded[-1] | 0x01])
    try:
        bitstream.unpack(corrupted)
        results.append(CheckResult("bitstream", "nonzero_padding", False,
                                   "no error raised"))
    except bitstream.NonzeroPaddingError:
        results.append(CheckResult("bitstream", "nonzero_padding", True,
                                   "raised NonzeroPaddingError"))
    except bitstream.BitstreamError as exc:
        results.append(CheckResult("bitstream", "nonzero_padding", False,
                                   f"wrong error {type(exc).__name__}"))
    return results


# -- entry point ----------------------------------------------------------------


def run_suites(names, corrupt_vq_tie_break: bool = False,
               bitstream_cases: int = 10000) -> list:
    """Run the named suites ("all" expands to every suite) and collect results."""
    expanded = list(SUITES) if "all" in names else list(names)
    unknown = [n for n in expanded if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites: {', '.join(unknown)}")
    results = []
    for name in expanded:
        if name == "mulaw":
            results.extend(mulaw_checks())
        elif name == "vq":
            results.extend(vq_checks(corrupt_tie_break=corrupt_vq_tie_break))
        elif name == "grad":
            results.extend(grad_checks())
        elif name == "bitstream":
            results.extend(bitstream_checks(cases=bitstream_cases))
    return results
