"""Bit-exact serialization of code sequences to the .vqsc wire format.

Layout (all header integers little-endian):

    offset  size  field
    0       4     magic "VQSC"
    4       1     version (1)
    5       4     sample_rate
    9       1     num_strides
    10      n     strides, one byte each
    10+n    1     num_maps
    11+n    2     codebook_size
    13+n    2     speaker_codebook_size
    15+n    2     speaker_index
    17+n    4     num_frames
    21+n    4     num_samples

The payload packs each frame's map indices frame-major then map-major, each
index in exactly ceil(log2(codebook_size)) bits, most-significant bit first,
zero-padded to a byte boundary.  Rates are raw: no entropy coding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model.config import ModelConfig
from .model.net import CodeSequence

MAGIC = b"VQSC"
VERSION = 1


class BitstreamError(ValueError):
    """Base class for malformed .vqsc data."""


class BadMagicError(BitstreamError):
    """The stream does not start with the VQSC magic."""


class UnsupportedVersionError(BitstreamError):
    """The stream's version byte is not supported."""


class TruncatedStreamError(BitstreamError):
    """The stream ends before the header or payload is complete."""


class NonzeroPaddingError(BitstreamError):
    """Trailing pad bits after the packed indices are not zero."""


@dataclass
class BitstreamHeader:
    """Decoded .vqsc header fields."""

    sample_rate: int
    strides: tuple
    num_maps: int
    codebook_size: int
    speaker_codebook_size: int
    speaker_index: int
    num_frames: int
    num_samples: int
    version: int = VERSION

    @property
    def downsampling_factor(self) -> int:
        out = 1
        for s in self.strides:
            out *= s
        return out

    @property
    def bits_per_index(self) -> int:
        return (self.codebook_size - 1).bit_length()

    def size_bytes(self) -> int:
        return 25 + len(self.strides)

    def matches_config(self, config: ModelConfig) -> bool:
        return (self.sample_rate == config.sample_rate
                and self.strides == config.strides
                and self.num_maps == config.num_maps
                and self.codebook_size == config.codebook_size
                and self.speaker_codebook_size == config.speaker_codebook_size)


def bits_per_index(codebook_size: int) -> int:
    """Bits needed for one index: ceil(log2 K), and 0 when K == 1."""
    return (codebook_size - 1).bit_length()


def bitrate(config: ModelConfig) -> int:
    """Payload bits per second of audio: frame_rate * num_maps * bits_per_index."""
    frame_rate = config.sample_rate // config.downsampling_factor
    return frame_rate * config.num_maps * bits_per_index(config.codebook_size)


def _pack_header(h: BitstreamHeader) -> bytes:
    return b"".join([
        MAGIC,
        struct.pack("<B", h.version),
        struct.pack("<I", h.sample_rate),
        struct.pack("<B", len(h.strides)),
        bytes(h.strides),
        struct.pack("<B", h.num_maps),
        struct.pack("<H", h.codebook_size),
        struct.pack("<H", h.speaker_codebook_size),
        struct.pack("<H", h.speaker_index),
        struct.pack("<I", h.num_frames),
        struct.pack("<I", h.num_samples),
    ])


def _pack_payload(frames: np.ndarray, bpi: int) -> bytes:
    if bpi == 0:
        return b""
    flat = frames.reshape(-1).astype(np.uint64)
    shifts = np.arange(bpi - 1, -1, -1, dtype=np.uint64)
    bits = ((flat[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes()


def pack(codes: CodeSequence, config: ModelConfig) -> bytes:
    """Serialize codes under the given config to .vqsc bytes."""
    bpi = bits_per_index(config.codebook_size)
    if bpi > 16:
        raise ValueError("codebook sizes above 16 bits per index are not supported")
    if codes.num_maps != config.num_maps:
        raise ValueError("map count mismatch between codes and config")
    if codes.frames.size and (codes.frames.min() < 0
                              or codes.frames.max() >= config.codebook_size):
        raise ValueError("map index out of range")
    if not 0 <= codes.speaker_index < config.speaker_codebook_size:
        raise ValueError("speaker index out of range")
    header = BitstreamHeader(
        sample_rate=config.sample_rate,
        strides=config.strides,
        num_maps=config.num_maps,
        codebook_size=config.codebook_size,
        speaker_codebook_size=config.speaker_codebook_size,
        speaker_index=codes.speaker_index,
        num_frames=codes.num_frames,
        num_samples=codes.num_samples,
    )
    return _pack_header(header) + _pack_payload(codes.frames, bpi)


def _read_exact(data: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(data):
        raise TruncatedStreamError(f"stream ends inside {what}")
    return data[offset:offset + size]


def unpack_header(data: bytes) -> tuple[BitstreamHeader, int]:
    """Parse the header; returns (header, payload offset)."""
    magic = _read_exact(data, 0, 4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    version = _read_exact(data, 4, 1, "version")[0]
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    sample_rate = struct.unpack("<I", _read_exact(data, 5, 4, "sample_rate"))[0]
    num_strides = _read_exact(data, 9, 1, "num_strides")[0]
    strides = tuple(_read_exact(data, 10, num_strides, "strides"))
    off = 10 + num_strides
    num_maps = _read_exact(data, off, 1, "num_maps")[0]
    codebook_size = struct.unpack("<H", _read_exact(data, off + 1, 2, "codebook_size"))[0]
    speaker_size = struct.unpack("<H", _read_exact(data, off + 3, 2, "speaker_codebook_size"))[0]
    speaker_index = struct.unpack("<H", _read_exact(data, off + 5, 2, "speaker_index"))[0]
    num_frames = struct.unpack("<I", _read_exact(data, off + 7, 4, "num_frames"))[0]
    num_samples = struct.unpack("<I", _read_exact(data, off + 11, 4, "num_samples"))[0]
    header = BitstreamHeader(
        sample_rate=sample_rate,
        strides=strides,
        num_maps=num_maps,
        codebook_size=codebook_size,
        speaker_codebook_size=speaker_size,
        speaker_index=speaker_index,
        num_frames=num_frames,
        num_samples=num_samples,
        version=version,
    )
    factor = header.downsampling_factor
    if header.num_frames * factor < header.num_samples:
        raise BitstreamError("frame count too small for num_samples")
    return header, off + 15


def unpack(data: bytes) -> tuple[CodeSequence, BitstreamHeader]:
    """Parse .vqsc bytes; exact inverse of pack.

    Raises BadMagicError, UnsupportedVersionError, TruncatedStreamError or
    NonzeroPaddingError for the corresponding defects.
    """
    header, off = unpack_header(data)
    bpi = header.bits_per_index
    total_bits = header.num_frames * header.num_maps * bpi
    payload_bytes = (total_bits + 7) // 8
    payload = _read_exact(data, off, payload_bytes, "payload")
    if len(data) > off + payload_bytes:
        raise BitstreamError("trailing bytes after payload")

    if bpi == 0:
        frames = np.zeros((header.num_frames, header.num_maps), dtype=np.int64)
    else:
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
        if np.any(bits[total_bits:]):
            raise NonzeroPaddingError("nonzero pad bits after the last index")
        weights = 1 << np.arange(bpi - 1, -1, -1, dtype=np.int64)
        frames = (bits[:total_bits].reshape(-1, bpi) * weights).sum(axis=1)
        frames = frames.reshape(header.num_frames, header.num_maps)
        if frames.size and frames.max() >= header.codebook_size:
            raise BitstreamError("packed index exceeds the codebook size")
    codes = CodeSequence(frames, header.speaker_index, header.num_samples)
    return codes, header
