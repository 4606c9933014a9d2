import io
import wave

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vqsc import dsp

# Exact value recorded by the exhaustive brute-force oracle over all int16.
MULAW_MAX_ROUNDTRIP_ERROR = 0.021575927734375


def sine_buffer(freq, sr=16000, duration=1.0, amplitude=0.5):
    t = np.arange(int(sr * duration)) / sr
    samples = (amplitude * 32767 * np.sin(2 * np.pi * freq * t)).astype(np.int16)
    return dsp.AudioBuffer(samples, sr)


class TestMuLawCompress:
    def test_zero_maps_to_center(self):
        """F(0)=0 lands on 127.5, which rounds away from zero to 128."""
        out = dsp.mu_law_compress(dsp.AudioBuffer(np.array([0], dtype=np.int16)))
        assert out.symbols[0] == 128

    def test_extremes(self):
        out = dsp.mu_law_compress(
            dsp.AudioBuffer(np.array([32767, -32768], dtype=np.int16)))
        assert list(out.symbols) == [255, 0]

    def test_length_preserved(self, rng):
        samples = rng.integers(-32768, 32768, size=777).astype(np.int16)
        assert len(dsp.mu_law_compress(dsp.AudioBuffer(samples))) == 777

    def test_monotone_over_full_domain(self):
        samples = np.arange(-32768, 32768, dtype=np.int64).astype(np.int16)
        symbols = dsp.mu_law_compress(dsp.AudioBuffer(samples)).symbols
        assert np.all(np.diff(symbols.astype(np.int64)) >= 0)


class TestMuLawExpand:
    def test_extreme_symbols(self):
        out = dsp.mu_law_expand(dsp.MuLawStream(np.array([255, 0], dtype=np.uint8)))
        assert list(out.samples) == [32767, -32768]

    def test_exhaustive_roundtrip_error_bound(self):
        """Brute force over the whole int16 domain; the exact max is frozen."""
        samples = np.arange(-32768, 32768, dtype=np.int64)
        stream = dsp.mu_law_compress(dsp.AudioBuffer(samples.astype(np.int16)))
        recon = dsp.mu_law_expand(stream).samples.astype(np.int64)
        max_err = np.abs(samples - recon).max() / 32768.0
        assert max_err == pytest.approx(MULAW_MAX_ROUNDTRIP_ERROR, abs=1e-15)
        assert max_err <= 0.025

    def test_symbol_idempotence(self):
        """compress(expand(s)) == s: symbols are fixed points of the quantizer."""
        symbols = np.arange(256, dtype=np.uint8)
        expanded = dsp.mu_law_expand(dsp.MuLawStream(symbols))
        assert np.array_equal(dsp.mu_law_compress(expanded).symbols, symbols)

    def test_symbol_range_validated(self):
        with pytest.raises(ValueError):
            dsp.MuLawStream(np.array([300]))


class TestExtractF0:
    @pytest.mark.parametrize("freq", [200.0, 100.0])
    def test_pure_sine_tracked_within_2_percent(self, freq):
        track = dsp.extract_f0(sine_buffer(freq))
        interior = slice(3, len(track) - 3)
        assert track.voiced[interior].all()
        got = np.exp(track.log_f0[interior])
        assert np.abs(got - freq).max() / freq < 0.02

    def test_silence_is_unvoiced(self):
        track = dsp.extract_f0(dsp.AudioBuffer(np.zeros(16000, dtype=np.int16)))
        assert not track.voiced.any()
        assert np.all(track.log_f0 == 0.0)

    def test_frame_count_law(self):
        for n in [0, 79, 80, 16000, 16041]:
            track = dsp.extract_f0(dsp.AudioBuffer(np.zeros(n, dtype=np.int16)))
            assert len(track) == n // 80

    def test_rejects_incompatible_rate(self):
        with pytest.raises(ValueError):
            dsp.extract_f0(dsp.AudioBuffer(np.zeros(100, dtype=np.int16), 44100))


class TestPadToMultiple:
    @pytest.mark.parametrize("length,factor,expected", [
        (16000, 160, 16000),
        (16001, 160, 16160),
        (0, 160, 0),
    ])
    def test_examples(self, length, factor, expected):
        buf = dsp.AudioBuffer(np.ones(length, dtype=np.int16))
        assert len(dsp.pad_to_multiple(buf, factor)) == expected

    @given(length=st.integers(0, 2000), factor=st.integers(1, 300))
    def test_padding_law(self, length, factor):
        buf = dsp.AudioBuffer(np.arange(length, dtype=np.int16))
        out = dsp.pad_to_multiple(buf, factor)
        assert len(out) % factor == 0
        assert len(out) - len(buf) < factor
        assert np.array_equal(out.samples[:length], buf.samples)
        assert np.all(out.samples[length:] == 0)

    def test_rejects_bad_factor(self):
        with pytest.raises(ValueError):
            dsp.pad_to_multiple(dsp.AudioBuffer(np.zeros(4, dtype=np.int16)), 0)


def _raw_wav(channels, sampwidth, rate=16000, frames=32):
    out = io.BytesIO()
    with wave.open(out, "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(sampwidth)
        w.setframerate(rate)
        w.writeframes(b"\x01" * frames * channels * sampwidth)
    return out.getvalue()


class TestWavIO:
    def test_roundtrip(self, tmp_path, rng):
        buf = dsp.AudioBuffer(
            rng.integers(-32768, 32768, size=555).astype(np.int16), 16000)
        path = tmp_path / "x.wav"
        dsp.write_wav(path, buf)
        back = dsp.read_wav(path)
        assert back.sample_rate == 16000
        assert np.array_equal(back.samples, buf.samples)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            dsp.read_wav(tmp_path / "absent.wav")

    def test_not_a_wave_container(self, tmp_path):
        path = tmp_path / "junk.wav"
        path.write_bytes(b"this is not RIFF data at all")
        with pytest.raises(dsp.NotAWaveFileError):
            dsp.read_wav(path)

    def test_stereo_rejected(self):
        with pytest.raises(dsp.UnsupportedWavError):
            dsp.read_wav_bytes(_raw_wav(channels=2, sampwidth=2))

    def test_8bit_rejected(self):
        with pytest.raises(dsp.UnsupportedWavError):
            dsp.read_wav_bytes(_raw_wav(channels=1, sampwidth=1))

    def test_bytes_roundtrip(self, rng):
        buf = dsp.AudioBuffer(
            rng.integers(-32768, 32768, size=321).astype(np.int16), 16000)
        back = dsp.read_wav_bytes(dsp.write_wav_bytes(buf))
        assert np.array_equal(back.samples, buf.samples)


class TestPitchCsv:
    def test_roundtrip(self):
        track = dsp.PitchTrack(np.array([0.0, 5.3, 0.0]),
                               np.array([False, True, False]))
        text = dsp.pitch_track_to_csv(track)
        assert text.splitlines()[0] == "frame_index,voiced,log_f0"
        back = dsp.pitch_track_from_csv(text)
        assert np.array_equal(back.voiced, track.voiced)
        assert np.array_equal(back.log_f0, track.log_f0)


class TestAudioBuffer:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            dsp.AudioBuffer(np.array([40000]))

    def test_rate_validation(self):
        with pytest.raises(ValueError):
            dsp.AudioBuffer(np.zeros(1, dtype=np.int16), 0)
