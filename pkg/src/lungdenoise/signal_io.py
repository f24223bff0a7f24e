"""Audio ingest and conditioning.

Reads PCM16 / float32 WAV files into float64 arrays, and provides the
conditioning chain applied to every clip before segmentation: band-pass
at the native rate, polyphase resample to the working rate, then peak
normalization.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sps

from .errors import (
    EmptyAudio,
    FilterLengthError,
    ParseError,
    RangeError,
    RateError,
    UnsupportedFormat,
)

TARGET_RATE = 8000
BAND_LOW_HZ = 50.0
BAND_HIGH_HZ = 2500.0
FILTER_ORDER = 6
NYQUIST_FRACTION = 0.45  # upper band edge is clamped to this fraction of fs

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass
class AudioClip:
    """Mono audio: float64 samples with nominal range [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class BandpassSpec:
    """Butterworth band-pass description, including the clamped upper edge.

    ``applied_high_hz`` is the effective upper corner after Nyquist
    clamping; it equals ``high_hz`` whenever the clip's rate allows it.
    """

    order: int = FILTER_ORDER
    low_hz: float = BAND_LOW_HZ
    high_hz: float = BAND_HIGH_HZ
    applied_high_hz: float = BAND_HIGH_HZ

    def for_rate(self, sample_rate: int) -> "BandpassSpec":
        """Resolve the band against a concrete sample rate."""
        if sample_rate <= 0:
            raise RateError(f"sample rate must be positive, got {sample_rate}")
        applied = min(self.high_hz, NYQUIST_FRACTION * sample_rate)
        if not 0.0 < self.low_hz < applied:
            raise RateError(
                f"band [{self.low_hz}, {applied}] Hz is degenerate at fs={sample_rate}"
            )
        return replace(self, applied_high_hz=applied)


@dataclass(frozen=True)
class PreprocessConfig:
    target_rate: int = TARGET_RATE
    bandpass: BandpassSpec = BandpassSpec()
    normalize: bool = True


# --- WAV container ----------------------------------------------------------

def read_wav(path: str) -> AudioClip:
    """Read a RIFF/WAVE file into an :class:`AudioClip`.

    Accepts PCM16 and IEEE float32 encodings, any channel count
    (channels are averaged down to mono). Integer samples are scaled by
    1/32768 so full-scale negative maps to exactly -1.0.

    Raises ParseError for structural damage, UnsupportedFormat for
    encodings outside the two accepted ones, EmptyAudio for a zero-length
    data chunk.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < 12:
        raise ParseError(f"{path}: too short for a RIFF header ({len(blob)} bytes)")
    if blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise ParseError(f"{path}: not a RIFF/WAVE container")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise ParseError(
                f"{path}: chunk {cid!r} declares {size} bytes, "
                f"only {len(body)} present"
            )
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise ParseError(f"{path}: missing {'fmt ' if fmt is None else 'data'} chunk")
    if len(fmt) < 16:
        raise ParseError(f"{path}: fmt chunk truncated ({len(fmt)} bytes)")

    audio_format, n_channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if audio_format == _EXTENSIBLE:
        if len(fmt) < 26:
            raise ParseError(f"{path}: extensible fmt chunk truncated")
        (audio_format,) = struct.unpack_from("<H", fmt, 24)
    if n_channels < 1:
        raise ParseError(f"{path}: zero channels")

    if audio_format == _PCM and bits == 16:
        raw = np.frombuffer(data[: len(data) - len(data) % 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(data[: len(data) - len(data) % 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{path}: format {audio_format} at {bits}-bit not supported "
            "(PCM16 or float32 only)"
        )

    if samples.size == 0:
        raise EmptyAudio(f"{path}: data chunk holds no samples")

    if n_channels > 1:
        usable = samples.size - samples.size % n_channels
        samples = samples[:usable].reshape(-1, n_channels).mean(axis=1)
        if samples.size == 0:
            raise EmptyAudio(f"{path}: fewer samples than channels")

    return AudioClip(samples=samples, sample_rate=int(rate), source=path)


def write_wav(clip: AudioClip, path: str) -> None:
    """Write a mono PCM16 WAV. Samples must lie in [-1, 1].

    Quantization is round-to-nearest at a scale of 32768, clamped to the
    int16 range, which bounds the read-back error by 1/32768 per sample.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyAudio("refusing to write a WAV with no samples")
    peak = float(np.max(np.abs(x)))
    if peak > 1.0:
        raise RangeError(f"samples reach {peak:.6f}, outside [-1, 1]")

    q = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = q.tobytes()
    rate = int(clip.sample_rate)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _PCM, 1, rate, rate * 2, 2, 16,
        b"data", len(payload),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


# --- conditioning -----------------------------------------------------------

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resample (windowed-sinc polyphase).

    Output length is round(n * target / source). Same-rate calls are a
    pass-through. The anti-aliasing filter is implicit in the polyphase
    kernel, so no separate low-pass is required before downsampling.
    """
    if target_rate <= 0:
        raise RateError(f"target rate must be positive, got {target_rate}")
    if clip.sample_rate <= 0:
        raise RateError(f"clip has invalid rate {clip.sample_rate}")
    if len(clip.samples) == 0:
        raise EmptyAudio("cannot resample an empty clip")
    if target_rate == clip.sample_rate:
        return clip

    g = np.gcd(int(target_rate), int(clip.sample_rate))
    up, down = target_rate // g, clip.sample_rate // g
    out = sps.resample_poly(np.asarray(clip.samples, dtype=np.float64), up, down)
    want = int(round(len(clip.samples) * target_rate / clip.sample_rate))
    return AudioClip(samples=out[:want], sample_rate=int(target_rate),
                     source=clip.source)


def _sos_for(spec: BandpassSpec, sample_rate: int) -> np.ndarray:
    resolved = spec.for_rate(sample_rate)
    wn = (resolved.low_hz, resolved.applied_high_hz)
    return sps.butter(resolved.order, wn, btype="bandpass", fs=sample_rate,
                      output="sos")


def bandpass(clip: AudioClip, spec: BandpassSpec | None = None) -> AudioClip:
    """Zero-phase Butterworth band-pass at the clip's native rate.

    Forward-backward filtering doubles the effective order and cancels
    phase. The upper corner is clamped below Nyquist (see BandpassSpec).
    Clips shorter than the filter's settling pad raise FilterLengthError.
    """
    spec = spec or BandpassSpec()
    sos = _sos_for(spec, clip.sample_rate)
    # sosfiltfilt's default edge padding: 3x the longest impulse tail proxy.
    padlen = 3 * (2 * sos.shape[0] + 1)
    if len(clip.samples) <= padlen:
        raise FilterLengthError(
            f"clip of {len(clip.samples)} samples is shorter than the "
            f"filter settling length ({padlen + 1} samples at "
            f"fs={clip.sample_rate})"
        )
    y = sps.sosfiltfilt(sos, np.asarray(clip.samples, dtype=np.float64))
    return AudioClip(samples=np.ascontiguousarray(y), sample_rate=clip.sample_rate,
                     source=clip.source)


def normalize_peak(clip: AudioClip) -> AudioClip:
    """Scale so the largest |sample| is exactly 1.0.

    Idempotent: a clip already peaking at 1.0 is returned unchanged in
    value (x / 1.0 is exact). All-zero input raises EmptyAudio since
    there is no peak to normalize.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyAudio("cannot normalize an empty clip")
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        raise EmptyAudio("clip is identically zero; peak undefined")
    return AudioClip(samples=x / peak, sample_rate=clip.sample_rate,
                     source=clip.source)


def preprocess(clip: AudioClip, cfg: PreprocessConfig | None = None) -> AudioClip:
    """Full conditioning chain: band-pass, resample, normalize.

    Filtering happens at the native rate *before* resampling so the
    band edges are defined where the energy actually lives; normalization
    comes last so quantization headroom is maximal.
    """
    cfg = cfg or PreprocessConfig()
    out = bandpass(clip, cfg.bandpass)
    out = resample(out, cfg.target_rate)
    if cfg.normalize:
        out = normalize_peak(out)
    return out
