"""Noise synthesis and SNR-exact mixing.

Four contamination kinds:

* ``WGN``  - white Gaussian noise whose standard deviation is set from the
  clean segment's power and the target SNR. The realized SNR is therefore
  statistical, not exact.
* ``Pink`` - 1/f noise built in the frequency domain (Gaussian spectrum
  shaped by f^-1/2, DC removed), then scaled exactly to the target SNR.
* ``Heart`` - a clip drawn from a recorded heart-sound pool.
* ``HeartPlusHospital`` - 0.7 * heart + 0.3 * hospital ambience.

Every random draw comes from a stream derived from (master seed, segment
id, kind, level), so corpus builds are reproducible pair by pair and
independent of generation order.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from .errors import (
    ConfigError,
    DegenerateNoise,
    EmptyAudio,
    LengthError,
    ManifestError,
    PoolError,
)
from .segmenter import SEGMENT_LEN, CorpusManifest, SegmentStore
from .signal_io import AudioClip, TARGET_RATE, resample

WGN = "WGN"
PINK = "Pink"
HEART = "Heart"
HEART_HOSPITAL = "HeartPlusHospital"
KINDS = (WGN, PINK, HEART, HEART_HOSPITAL)

HEART_WEIGHT = 0.7
HOSPITAL_WEIGHT = 0.3

TRAIN_LEVELS_DB = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
EXTRA_TEST_LEVELS_DB = (-12.0, -8.0, -2.0, 3.0, 8.0, 12.0)
TEST_LEVELS_DB = tuple(sorted(TRAIN_LEVELS_DB + EXTRA_TEST_LEVELS_DB))

_ALIASES = {
    "wgn": WGN, "white": WGN,
    "pink": PINK,
    "heart": HEART,
    "heartplushospital": HEART_HOSPITAL, "heart+hospital": HEART_HOSPITAL,
}


def canonical_kind(name: str) -> str:
    kind = _ALIASES.get(name.strip().lower())
    if kind is None:
        raise ConfigError(f"unknown noise kind {name!r}; choose from {KINDS}")
    return kind


@dataclass
class MixRecord:
    """Provenance of one noisy segment."""

    noisy_id: str
    clean_seg_id: str
    kind: str
    target_snr_db: float
    seed: int
    noise_sources: list[str]
    realized_snr_db: float


def power(x: np.ndarray) -> float:
    """Mean-square power."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0


def snr_db_from_powers(p_signal: float, p_noise: float) -> float:
    return 10.0 * math.log10(p_signal / p_noise)


def stream_for(master_seed: int, seg_id: str, kind: str, level_db: float) -> tuple[np.random.Generator, int]:
    """Deterministic per-pair RNG stream.

    The sub-seed is a stable digest of the identifying tuple, so the same
    pair always sees the same draws no matter how many other pairs were
    generated before it.
    """
    tag = f"{seg_id}|{kind}|{level_db:.6f}".encode()
    sub = int.from_bytes(hashlib.blake2s(tag, digest_size=8).digest(), "big")
    return np.random.default_rng([master_seed, sub]), sub


# --- synthesis --------------------------------------------------------------

def wgn(n: int, noise_power: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Gaussian noise, mean 0, std sqrt(noise_power)."""
    if noise_power <= 0.0:
        raise DegenerateNoise(f"noise power must be positive, got {noise_power}")
    return rng.standard_normal(n) * math.sqrt(noise_power)


def wgn_for(clean: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise at the nominal power for ``snr_db``.

    The std comes from the clean segment's power and the target, so the
    realized SNR fluctuates around the target with the sample variance
    of the draw.
    """
    p_signal = power(clean)
    if p_signal == 0.0:
        raise EmptyAudio("clean segment has zero power; SNR undefined")
    return wgn(len(clean), p_signal * 10.0 ** (-snr_db / 10.0), rng)


def pink(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f noise, unit mean-square power.

    A complex Gaussian half-spectrum is shaped by f^-1/2 so the power
    spectral density falls as 1/f; the DC bin is zeroed and the result
    transformed back to the time domain.
    """
    if n < 256:
        raise LengthError(f"pink noise needs at least 256 samples, got {n}")
    n_bins = n // 2 + 1
    spectrum = rng.standard_normal(n_bins) + 1j * rng.standard_normal(n_bins)
    k = np.arange(n_bins, dtype=np.float64)
    k[0] = 1.0  # avoid 0^-0.5; the DC bin is zeroed below anyway
    spectrum *= k ** -0.5
    spectrum[0] = 0.0
    x = np.fft.irfft(spectrum, n=n)
    rms = math.sqrt(power(x))
    if rms == 0.0:
        raise DegenerateNoise("pink spectrum collapsed to zero")
    return x / rms


def scale_noise_to_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """Scale ``noise`` so that 10*log10(P_clean / P_scaled) == snr_db.

    The scale factor is SF = (P_signal / P_noise) * 10^(-SNR/10) applied
    as sqrt(SF) in amplitude, which realizes the target exactly up to
    float rounding.
    """
    if len(clean) != len(noise):
        raise LengthError(
            f"clean ({len(clean)}) and noise ({len(noise)}) lengths differ"
        )
    p_signal = power(clean)
    if p_signal == 0.0:
        raise EmptyAudio("clean segment has zero power; SNR undefined")
    p_noise = power(noise)
    if p_noise == 0.0:
        raise DegenerateNoise("noise has zero power; cannot scale to an SNR")
    sf = (p_signal / p_noise) * 10.0 ** (-snr_db / 10.0)
    return noise * math.sqrt(sf)


# --- recorded pools ---------------------------------------------------------

class NoisePool:
    """A bag of recorded noise clips, resampled to the working rate."""

    def __init__(self, clips: list[AudioClip], name: str = "pool"):
        if not clips:
            raise PoolError(f"{name}: no clips")
        self.name = name
        self._clips = [resample(c, TARGET_RATE) for c in clips]
        self.ids = [c.source or f"{name}[{i}]" for i, c in enumerate(self._clips)]

    def __len__(self) -> int:
        return len(self._clips)

    def draw(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, str]:
        """Pick a clip, loop it if short, crop at a random offset."""
        idx = int(rng.integers(len(self._clips)))
        x = self._clips[idx].samples
        if x.size == 0:
            raise PoolError(f"{self.name}: clip {self.ids[idx]} is empty")
        if len(x) < n:
            reps = -(-n // len(x))  # ceil division
            x = np.tile(x, reps)
        start = int(rng.integers(len(x) - n + 1)) if len(x) > n else 0
        return x[start : start + n].copy(), self.ids[idx]


def get_noise(kind: str, n: int, rng: np.random.Generator,
              heart: NoisePool | None = None,
              hospital: NoisePool | None = None) -> tuple[np.ndarray, list[str]]:
    """Unscaled noise vector of length ``n`` for a recorded or pink kind."""
    if kind == PINK:
        return pink(n, rng), ["synthetic:pink"]
    if kind == HEART:
        if heart is None:
            raise PoolError("Heart mixing requires a heart pool")
        x, src = heart.draw(n, rng)
        return x, [src]
    if kind == HEART_HOSPITAL:
        if heart is None or hospital is None:
            raise PoolError("HeartPlusHospital mixing requires both pools")
        h, hsrc = heart.draw(n, rng)
        a, asrc = hospital.draw(n, rng)
        return HEART_WEIGHT * h + HOSPITAL_WEIGHT * a, [hsrc, asrc]
    raise ConfigError(f"get_noise cannot synthesize kind {kind!r}")


# --- mixing -----------------------------------------------------------------

def mix(clean: np.ndarray, seg_id: str, kind: str, snr_db: float,
        master_seed: int,
        heart: NoisePool | None = None,
        hospital: NoisePool | None = None) -> tuple[np.ndarray, MixRecord]:
    """Contaminate one clean segment at a target SNR.

    WGN adds noise at the nominal power (realized SNR is statistical);
    all other kinds are rescaled so the realized SNR matches the target
    to float precision. The noisy result is NOT re-normalized or clipped:
    feature files keep the true mixture.
    """
    if not math.isfinite(snr_db):
        raise ConfigError(f"target SNR must be finite, got {snr_db}")
    kind = canonical_kind(kind)
    clean = np.asarray(clean, dtype=np.float64)
    rng, sub_seed = stream_for(master_seed, seg_id, kind, snr_db)

    if kind == WGN:
        noise = wgn_for(clean, snr_db, rng)
        sources = ["synthetic:wgn"]
    else:
        raw, sources = get_noise(kind, len(clean), rng, heart, hospital)
        noise = scale_noise_to_snr(clean, raw, snr_db)

    realized = snr_db_from_powers(power(clean), power(noise))
    noisy = clean + noise
    record = MixRecord(
        noisy_id=noisy_id_for(seg_id, kind, snr_db),
        clean_seg_id=seg_id, kind=kind, target_snr_db=float(snr_db),
        seed=sub_seed, noise_sources=sources,
        realized_snr_db=realized,
    )
    return noisy, record


def noisy_id_for(seg_id: str, kind: str, snr_db: float) -> str:
    return f"{seg_id}.{kind}.snr{snr_db:+g}"


def build_noisy_corpus(manifest: CorpusManifest, clean_store: SegmentStore,
                       noisy_store: SegmentStore, master_seed: int,
                       kinds: list[str],
                       train_levels: tuple[float, ...] = TRAIN_LEVELS_DB,
                       test_levels: tuple[float, ...] = TEST_LEVELS_DB,
                       heart: NoisePool | None = None,
                       hospital: NoisePool | None = None) -> list[MixRecord]:
    """Mix every manifest segment at its split's level grid.

    Train and validation segments get the training grid; test segments
    get the (wider) test grid. One feature file per (segment, kind,
    level) lands in ``noisy_store``.
    """
    kinds = [canonical_kind(k) for k in kinds]
    records: list[MixRecord] = []
    for entry in manifest.entries:
        levels = test_levels if entry.split == "test" else train_levels
        clean = clean_store.read(entry.seg_id)
        for kind in kinds:
            for level in levels:
                noisy, rec = mix(clean, entry.seg_id, kind, level,
                                 master_seed, heart=heart, hospital=hospital)
                noisy_store.write(rec.noisy_id, noisy)
                records.append(rec)
    return records


def write_mix_records(path: str, records: list[MixRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def read_mix_records(path: str) -> list[MixRecord]:
    if not os.path.exists(path):
        raise ManifestError(f"no mix record file at {path}")
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                records.append(MixRecord(**row))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ManifestError(f"{path}: bad mix record: {exc}") from exc
    return records


def audit_mixes(records: list[MixRecord], clean_store: SegmentStore,
                noisy_store: SegmentStore,
                wgn_tol_db: float = 0.5, exact_tol_db: float = 1e-6) -> None:
    """Re-derive every realized SNR from the stored files and verify it.

    Raises ManifestError on the first pair whose stored and recomputed
    SNRs disagree beyond the kind's tolerance.
    """
    for rec in records:
        clean = clean_store.read(rec.clean_seg_id)
        noisy = noisy_store.read(rec.noisy_id)
        recomputed = snr_db_from_powers(power(clean), power(noisy - clean))
        tol = wgn_tol_db if rec.kind == WGN else exact_tol_db
        if abs(recomputed - rec.target_snr_db) > tol:
            raise ManifestError(
                f"{rec.noisy_id}: recomputed SNR {recomputed:.6f} dB is "
                f"outside {tol} dB of target {rec.target_snr_db:.6f} dB"
            )
        if abs(recomputed - rec.realized_snr_db) > 1e-9:
            raise ManifestError(
                f"{rec.noisy_id}: stored realized SNR {rec.realized_snr_db:.9f} "
                f"does not match files ({recomputed:.9f})"
            )
