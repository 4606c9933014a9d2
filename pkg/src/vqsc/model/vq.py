"""Vector quantization: codebooks, nearest-codeword search, straight-through, EMA."""

from __future__ import annotations

import numpy as np

from ..grad import (Parameter, Tape, Tensor, concat_channels, embedding,
                    mean_over_time, mse, stop_gradient, straight_through,
                    take_row)
from .config import ModelConfig


class Codebook:
    """One learnable K x dim table plus its moving-average statistics."""

    def __init__(self, name: str, size: int, dim: int, rng: np.random.Generator):
        # Entries start uniform in [-1/K, 1/K].  The moving averages start as
        # if each code had absorbed one observation at its own position
        # (pseudo-count 1), so codes that miss a batch hold their place
        # instead of being flushed toward zero by the first update.
        init = rng.uniform(-1.0 / size, 1.0 / size, size=(size, dim))
        self.weight = Parameter(init, name=name)
        self.ema_count = np.ones(size)
        self.ema_sum = init.copy()

    @property
    def size(self) -> int:
        return self.weight.data.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.data.shape[1]

    def ema_update(self, counts: np.ndarray, sums: np.ndarray,
                   decay: float, epsilon: float) -> None:
        """Blend batch assignment statistics and refresh the codewords.

        After every update each codeword equals ema_sum / (ema_count + epsilon).
        """
        self.ema_count = decay * self.ema_count + (1.0 - decay) * counts
        self.ema_sum = decay * self.ema_sum + (1.0 - decay) * sums
        self.weight.data = self.ema_sum / (self.ema_count + epsilon)[:, None]

    def revive(self, indices: np.ndarray, vectors: np.ndarray,
               epsilon: float) -> None:
        """Re-seed starved codes onto the given vectors (one row per index).

        Written through the same identity as ema_update, so codeword ==
        ema_sum / (ema_count + epsilon) keeps holding bit for bit.
        """
        self.ema_count[indices] = 1.0
        self.ema_sum[indices] = vectors
        self.weight.data[indices] = vectors / (1.0 + epsilon)


class CodebookSet:
    """The codec's M time-varying codebooks plus the utterance-level speaker codebook."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.maps = [
            Codebook(f"codebook.map{m}", config.codebook_size, config.per_map_dim, rng)
            for m in range(config.num_maps)
        ]
        self.speaker = Codebook("codebook.speaker", config.speaker_codebook_size,
                                config.speaker_dim, rng)

    def parameters(self) -> list:
        return [cb.weight for cb in self.maps] + [self.speaker.weight]


def nearest_indices(vectors: np.ndarray, codewords: np.ndarray,
                    tie_break: str = "lowest") -> np.ndarray:
    """Index of the nearest codeword (squared Euclidean) for each column of [dim, T].

    Ties resolve to the lowest index; ``tie_break="highest"`` exists only as a
    fault-injection hook for the verification suite's negative control.
    """
    if codewords.shape[0] == 0:
        raise ValueError("empty codebook")
    diffs = codewords[:, None, :] - vectors.T[None, :, :]
    dists = np.sum(diffs * diffs, axis=2)
    if tie_break == "lowest":
        return np.argmin(dists, axis=0)
    return dists.shape[0] - 1 - np.argmin(dists[::-1], axis=0)


def quantize(tape: Tape, latents: Tensor, codebooks: CodebookSet):
    """Snap [D, T] latents to nearest codewords, one map per contiguous sub-vector.

    Returns (indices [M, T], quantized Tensor [D, T], codebook_loss,
    commitment_loss).  The quantized output carries straight-through
    gradients: whatever arrives at it is copied to the latents unchanged.
    The two scalar losses are means over all D*T elements.
    """
    d, t = latents.data.shape
    m = len(codebooks.maps)
    sub = d // m
    if sub * m != d:
        raise ValueError(f"latent dim {d} not divisible by {m} maps")

    indices = np.zeros((m, t), dtype=np.int64)
    rows = []
    for i, cb in enumerate(codebooks.maps):
        z_i = latents.data[i * sub:(i + 1) * sub, :]
        indices[i] = nearest_indices(z_i, cb.weight.data)
        rows.append(embedding(tape, cb.weight, indices[i]))
    quantized_raw = rows[0]
    for r in rows[1:]:
        quantized_raw = concat_channels(tape, quantized_raw, r)

    codebook_loss = mse(tape, quantized_raw, stop_gradient(latents))
    commitment_loss = mse(tape, latents, stop_gradient(quantized_raw))
    quantized = straight_through(tape, latents, quantized_raw.data)
    return indices, quantized, codebook_loss, commitment_loss


def speaker_code(tape: Tape, features: Tensor, codebooks: CodebookSet):
    """Mean-pool [D_s, T] features over time and quantize against the speaker codebook.

    Returns (index, embedding Tensor [D_s], codebook_loss, commitment_loss).
    The pooled vector is exactly rounded, so the index is invariant under any
    permutation of the time frames.
    """
    if features.data.shape[1] == 0:
        raise ValueError("speaker_code requires at least one frame")
    pooled = mean_over_time(tape, features)
    idx = int(nearest_indices(pooled.data[:, None], codebooks.speaker.weight.data)[0])
    codeword = take_row(tape, codebooks.speaker.weight, idx)
    codebook_loss = mse(tape, codeword, stop_gradient(pooled))
    commitment_loss = mse(tape, pooled, stop_gradient(codeword))
    emb = straight_through(tape, pooled, codeword.data)
    return idx, emb, codebook_loss, commitment_loss


def map_assignment_stats(latents: np.ndarray, indices: np.ndarray,
                         map_index: int, per_map_dim: int,
                         codebook_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-codeword counts and vector sums for one map's batch assignments."""
    z = latents[map_index * per_map_dim:(map_index + 1) * per_map_dim, :]
    ids = indices[map_index]
    counts = np.bincount(ids, minlength=codebook_size).astype(np.float64)
    sums = np.zeros((codebook_size, per_map_dim))
    np.add.at(sums, ids, z.T)
    return counts, sums


def perplexity(counts: np.ndarray) -> float:
    """exp(entropy) of an empirical index distribution; 1 means collapsed."""
    total = counts.sum()
    if total == 0:
        return 1.0
    p = counts / total
    nz = p[p > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))
