"""Synthetic fixture corpus: lung-like clips plus heart and hospital
noise pools.

Nothing here is a recording. The lung surrogate has the gross structure
that matters for a denoiser: band-limited turbulence (most energy well
below 1 kHz) gated by a slow respiratory envelope, with occasional
crackle-like transients. Heart clips are periodic dual thumps with
low-frequency energy; hospital clips are broadband ambience with
intermittent tonal alarms.
"""
from __future__ import annotations

import os

import numpy as np
from scipy import signal as sps

from .signal_io import AudioClip, write_wav


def _band_noise(rng: np.random.Generator, n: int, rate: int,
                low: float, high: float) -> np.ndarray:
    """White noise shaped to a band via an FFT brick wall with soft skirts."""
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, d=1.0 / rate)
    gain = np.zeros_like(f)
    inside = (f >= low) & (f <= high)
    gain[inside] = 1.0
    # soften the edges over ~10% of the band so segments are not ringing
    width = 0.1 * (high - low)
    lo_skirt = (f >= low - width) & (f < low)
    hi_skirt = (f > high) & (f <= high + width)
    gain[lo_skirt] = np.cos(0.5 * np.pi * (low - f[lo_skirt]) / width) ** 2
    gain[hi_skirt] = np.cos(0.5 * np.pi * (f[hi_skirt] - high) / width) ** 2
    x = np.fft.irfft(spec * gain, n=n)
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def _breath_envelope(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    """Inhale/exhale bursts: raised-cosine lobes on a quiet floor."""
    env = np.full(n, 0.02)
    t = 0.0
    duration = n / rate
    while t < duration:
        cycle = rng.uniform(2.2, 3.6)
        for onset_frac, level in ((0.05, 1.0), (0.55, rng.uniform(0.5, 0.8))):
            burst_len = rng.uniform(0.30, 0.55)
            start = t + onset_frac * cycle + rng.uniform(-0.05, 0.05)
            i0 = int(start * rate)
            i1 = min(int((start + burst_len) * rate), n)
            if i0 >= n or i1 <= i0:
                continue
            w = np.hanning(i1 - i0)
            env[i0:i1] = np.maximum(env[i0:i1], level * w)
        t += cycle
    return env


def lung_clip(rng: np.random.Generator, seconds: float,
              rate: int = 8000) -> np.ndarray:
    """Breath-gated band noise with sparse crackles."""
    n = int(seconds * rate)
    center = rng.uniform(285.0, 315.0)
    half_bw = rng.uniform(25.0, 35.0)
    carrier = _band_noise(rng, n, rate, center - half_bw, center + half_bw)
    env = _breath_envelope(rng, n, rate)
    x = carrier * env

    # a few crackle transients per clip: short decaying wavelets
    for _ in range(rng.poisson(2.0 * seconds / 10.0)):
        pos = int(rng.uniform(0, n - rate // 20))
        length = int(rate * rng.uniform(0.004, 0.012))
        tt = np.arange(length) / rate
        wavelet = np.sin(2 * np.pi * rng.uniform(250, 500) * tt)
        wavelet *= np.exp(-tt / 0.003) * rng.uniform(0.08, 0.16)
        x[pos : pos + length] += wavelet[: max(0, n - pos)]

    # faint wideband floor so no segment is ever exactly silent
    x += 0.003 * rng.standard_normal(n)
    return 0.95 * x / np.max(np.abs(x))


def heart_clip(rng: np.random.Generator, seconds: float,
               rate: int = 8000) -> np.ndarray:
    """S1/S2 thump pairs around one beat per second, energy 20-150 Hz."""
    n = int(seconds * rate)
    x = np.zeros(n)
    beat = rng.uniform(0.75, 1.1)
    t = rng.uniform(0.0, 0.3)
    while t < seconds:
        for offset, freq, level in ((0.0, rng.uniform(28, 45), 1.0),
                                    (0.30, rng.uniform(50, 90), 0.6)):
            start = int((t + offset) * rate)
            length = int(0.09 * rate)
            if start + length > n:
                continue
            tt = np.arange(length) / rate
            thump = np.sin(2 * np.pi * freq * tt) * np.exp(-tt / 0.025)
            x[start : start + length] += level * thump
        t += beat * rng.uniform(0.95, 1.05)
    x += 0.002 * rng.standard_normal(n)
    return 0.9 * x / np.max(np.abs(x))


def hospital_clip(rng: np.random.Generator, seconds: float,
                  rate: int = 8000) -> np.ndarray:
    """Broadband ambience plus intermittent monitor tones."""
    n = int(seconds * rate)
    # gentle low-shelf colored noise: filtered white
    sos = sps.butter(2, 1200, btype="lowpass", fs=rate, output="sos")
    x = sps.sosfilt(sos, rng.standard_normal(n))
    x /= np.max(np.abs(x))
    for _ in range(rng.poisson(seconds / 4.0)):
        start = int(rng.uniform(0, max(n - rate // 4, 1)))
        length = int(0.18 * rate)
        tt = np.arange(length) / rate
        tone = np.sin(2 * np.pi * rng.uniform(750, 1400) * tt) * np.hanning(length)
        end = min(start + length, n)
        x[start:end] += 0.5 * tone[: end - start]
    return 0.9 * x / np.max(np.abs(x))


def make_fixture_corpus(out_dir: str, n_lung: int, seed: int,
                        n_heart: int = 0, n_hospital: int = 0,
                        seconds: float = 12.0,
                        rates: tuple = (8000, 44100)) -> dict:
    """Write a WAV corpus under out_dir: lung clips at the top level,
    pools under heart/ and hospital/. Returns the written paths."""
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = {"lung": [], "heart": [], "hospital": []}

    for i in range(n_lung):
        rate = rates[i % len(rates)]
        x = lung_clip(rng, seconds, rate=8000)
        if rate != 8000:
            # synthesize at the working rate, upsample for ingest realism
            up = sps.resample_poly(x, rate // np.gcd(rate, 8000),
                                   8000 // np.gcd(rate, 8000))
            peak = np.max(np.abs(up))
            x = up / peak * 0.95 if peak > 0 else up
        path = os.path.join(out_dir, f"lung{i:03d}.wav")
        write_wav(AudioClip(samples=x, sample_rate=rate), path)
        paths["lung"].append(path)

    for group, count, maker in (("heart", n_heart, heart_clip),
                                ("hospital", n_hospital, hospital_clip)):
        if count == 0:
            continue
        gdir = os.path.join(out_dir, group)
        os.makedirs(gdir, exist_ok=True)
        for i in range(count):
            x = maker(rng, seconds)
            path = os.path.join(gdir, f"{group}{i:03d}.wav")
            write_wav(AudioClip(samples=x, sample_rate=8000), path)
            paths[group].append(path)
    return paths
