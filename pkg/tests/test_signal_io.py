"""WAV parsing, resampling, filtering, and normalization."""
from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lungdenoise.errors import (
    EmptyAudio,
    FilterLengthError,
    ParseError,
    RangeError,
    UnsupportedFormat,
)
from lungdenoise.signal_io import (
    AudioClip,
    BandpassSpec,
    PreprocessConfig,
    bandpass,
    normalize_peak,
    preprocess,
    read_wav,
    resample,
    write_wav,
)


def pcm16_wav_bytes(samples: np.ndarray, rate: int, channels: int = 1,
                    truncate: int = 0, format_code: int = 1) -> bytes:
    """Hand-rolled RIFF/WAVE encoder, independent of the package writer."""
    ints = np.asarray(samples, dtype="<i2").tobytes()
    if truncate:
        ints = ints[:-truncate]
    block = 2 * channels
    fmt = struct.pack("<HHIIHH", format_code, channels, rate,
                      rate * block, block, 16)
    data_len = len(np.asarray(samples, dtype="<i2").tobytes())
    body = (b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", data_len) + ints)
    return b"RIFF" + struct.pack("<I", 4 + len(body) - 4) + body


def write_bytes(path, blob: bytes) -> str:
    path.write_bytes(blob)
    return str(path)


def sine(freq: float, rate: int, seconds: float = 1.0,
         amp: float = 1.0) -> np.ndarray:
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


class TestReadWav:
    def test_pcm16_scaling_identity(self, tmp_path):
        blob = pcm16_wav_bytes(np.full(8000, 16384), rate=8000)
        clip = read_wav(write_bytes(tmp_path / "c.wav", blob))
        assert clip.sample_rate == 8000
        assert clip.samples.shape == (8000,)
        assert np.all(clip.samples == 0.5)

    def test_stereo_averages_to_mono(self, tmp_path):
        left = np.full(100, 32767)
        right = np.zeros(100, dtype=np.int64)
        inter = np.empty(200, dtype=np.int64)
        inter[0::2], inter[1::2] = left, right
        blob = pcm16_wav_bytes(inter, rate=8000, channels=2)
        clip = read_wav(write_bytes(tmp_path / "s.wav", blob))
        assert clip.samples.shape == (100,)
        assert np.allclose(clip.samples, 32767 / 32768 / 2)

    def test_truncated_data_chunk(self, tmp_path):
        blob = pcm16_wav_bytes(np.zeros(64), rate=8000, truncate=10)
        with pytest.raises(ParseError):
            read_wav(write_bytes(tmp_path / "t.wav", blob))

    def test_not_riff(self, tmp_path):
        with pytest.raises(ParseError):
            read_wav(write_bytes(tmp_path / "x.wav", b"OGGSetc" * 10))

    def test_unsupported_encoding(self, tmp_path):
        blob = pcm16_wav_bytes(np.zeros(64), rate=8000, format_code=0x11)
        with pytest.raises(UnsupportedFormat):
            read_wav(write_bytes(tmp_path / "u.wav", blob))

    def test_zero_length_data(self, tmp_path):
        blob = pcm16_wav_bytes(np.zeros(0, dtype=np.int64), rate=8000)
        with pytest.raises(EmptyAudio):
            read_wav(write_bytes(tmp_path / "e.wav", blob))


class TestWriteWav:
    def test_zeros_roundtrip_to_zero_bytes(self, tmp_path):
        path = str(tmp_path / "z.wav")
        write_wav(AudioClip(np.zeros(256), 8000), path)
        raw = open(path, "rb").read()
        idx = raw.index(b"data") + 8
        assert raw[idx:] == b"\x00" * 512

    def test_out_of_range_rejected(self, tmp_path):
        clip = AudioClip(np.array([0.0, 1.5]), 8000)
        with pytest.raises(RangeError):
            write_wav(clip, str(tmp_path / "r.wav"))

    @given(st.integers(0, 2**32 - 1))
    def test_roundtrip_quantization_bound(self, tmp_path_factory, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0, size=300)
        path = str(tmp_path_factory.mktemp("rt") / "x.wav")
        write_wav(AudioClip(x, 8000), path)
        back = read_wav(path)
        assert back.sample_rate == 8000
        assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768

    def test_write_read_write_is_stable(self, tmp_path):
        rng = np.random.default_rng(0)
        p1, p2 = str(tmp_path / "a.wav"), str(tmp_path / "b.wav")
        write_wav(AudioClip(rng.uniform(-1, 1, 500), 8000), p1)
        write_wav(read_wav(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()


class TestResample:
    def test_upsample_doubles_length(self):
        clip = AudioClip(np.ones(4000), 4000)
        out = resample(clip, 8000)
        assert out.sample_rate == 8000
        assert out.samples.shape == (8000,)

    def test_same_rate_is_passthrough(self):
        x = np.random.default_rng(1).normal(size=1000)
        out = resample(AudioClip(x, 8000), 8000)
        assert np.array_equal(out.samples, x)

    def test_length_rounding(self):
        clip = AudioClip(np.zeros(44100), 44100)
        assert resample(clip, 8000).samples.shape == (8000,)
        clip = AudioClip(np.zeros(22051), 44100)
        assert resample(clip, 8000).samples.shape == (round(22051 * 8000 / 44100),)

    def test_sine_survives_band_limited_interpolation(self):
        out = resample(AudioClip(sine(100, 44100, 2.0), 44100), 8000)
        spectrum = np.abs(np.fft.rfft(out.samples))
        assert np.argmax(spectrum) == 200  # 100 Hz at 2 s of 8 kHz
        amp = 2 * spectrum[200] / out.samples.size
        assert abs(amp - 1.0) < 0.01


class TestBandpass:
    def spec_for(self, rate: int) -> BandpassSpec:
        return BandpassSpec().for_rate(rate)

    def rms_ratio(self, freq: float, rate: int = 8000) -> float:
        x = sine(freq, rate, 2.0)
        out = bandpass(AudioClip(x, rate), self.spec_for(rate))
        assert out.samples.shape == x.shape
        return float(np.sqrt(np.mean(out.samples**2) / np.mean(x**2)))

    def test_stopband_low(self):
        assert self.rms_ratio(10.0) < 0.05

    def test_passband(self):
        assert abs(self.rms_ratio(500.0) - 1.0) < 0.02

    def test_stopband_high(self):
        assert self.rms_ratio(3500.0) < 0.10

    def test_nyquist_clamp(self):
        spec = self.spec_for(4000)
        assert 50.0 < spec.applied_high_hz < 2000.0

    def test_too_short_clip(self):
        with pytest.raises(FilterLengthError):
            bandpass(AudioClip(np.ones(8), 8000), self.spec_for(8000))


class TestNormalize:
    def test_direct_scaling(self):
        out = normalize_peak(AudioClip(np.array([0.2, -0.4]), 8000))
        assert np.array_equal(out.samples, [0.5, -1.0])

    def test_peak_exactly_one(self):
        rng = np.random.default_rng(3)
        out = normalize_peak(AudioClip(rng.normal(size=999), 8000))
        assert np.max(np.abs(out.samples)) == 1.0

    def test_zero_clip_rejected(self):
        with pytest.raises(EmptyAudio):
            normalize_peak(AudioClip(np.zeros(100), 8000))


class TestPreprocess:
    def test_conditions_to_canonical_form(self):
        x = sine(500, 44100, 1.0, amp=0.25) + sine(10, 44100, 1.0, amp=0.25)
        out = preprocess(AudioClip(x, 44100), PreprocessConfig())
        assert out.sample_rate == 8000
        assert out.samples.shape == (8000,)
        assert np.max(np.abs(out.samples)) == 1.0
        # the 10 Hz component is gone: spectrum peaks at 500 Hz
        spectrum = np.abs(np.fft.rfft(out.samples))
        assert np.argmax(spectrum) == 500

    def test_normalize_can_be_disabled(self):
        x = sine(500, 8000, 1.0, amp=0.25)
        out = preprocess(AudioClip(x, 8000), PreprocessConfig(normalize=False))
        assert np.max(np.abs(out.samples)) < 0.5
