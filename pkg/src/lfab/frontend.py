"""Acoustic front-end: WAV input, log-mel features, synthetic audio.

Fixed geometry throughout the package: 16 kHz mono, 25 ms Hann window
(400 samples), 10 ms hop (160 samples), 512-point FFT, 80 mel filters on the
HTK scale over 0..8000 Hz, natural log with floor 1e-10, then per-utterance
mean/variance normalization per feature.
"""

from __future__ import annotations

import functools
import wave
from dataclasses import dataclass

import numpy as np

from .errors import AudioFormatError, ShapeError
from .tensor import Tensor

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 400
HOP_SAMPLES = 160
N_FFT = 512
N_MELS = 80
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10


@dataclass
class AudioBuffer:
    """Mono float32 audio in [-1, 1] at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioFormatError("audio must be a non-empty 1-D sample array")
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(f"unsupported rate, expected {SAMPLE_RATE}")
        peak = float(np.abs(self.samples).max())
        if peak > 1.0:
            raise AudioFormatError(f"samples exceed [-1, 1] (peak {peak:.4g})")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureMatrix:
    """T x 80 log-mel features plus the frame geometry that produced them."""

    frames: Tensor
    hop_seconds: float = HOP_SAMPLES / SAMPLE_RATE
    window_seconds: float = WINDOW_SAMPLES / SAMPLE_RATE

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def num_frames_for(n_samples: int) -> int:
    """Frame count for n samples: 1 + floor((n - 400) / 160)."""
    if n_samples < WINDOW_SAMPLES:
        raise AudioFormatError(
            f"audio too short: {n_samples} samples < window {WINDOW_SAMPLES}"
        )
    return 1 + (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES


def read_wav(path) -> AudioBuffer:
    """Read a RIFF PCM16 mono 16 kHz file. Anything else is rejected."""
    try:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, OSError) as exc:
        raise AudioFormatError(f"not a readable RIFF wav file: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise AudioFormatError(f"unsupported rate, expected {SAMPLE_RATE}, got {rate}")
    if channels != 1:
        raise AudioFormatError(f"expected mono audio, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"expected 16-bit PCM, got sample width {width}")
    ints = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(ints.astype(np.float32) / 32768.0)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write PCM16 mono 16 kHz. Inverse of read_wav up to int16 rounding."""
    x = np.clip(np.rint(audio.samples.astype(np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(x.astype("<i2").tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=4)
def _mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT) -> np.ndarray:
    """Triangular filters (n_mels, n_fft//2 + 1) over FFT bin center freqs."""
    edges_mel = np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_hz = np.arange(n_fft // 2 + 1) * (SAMPLE_RATE / n_fft)
    fb = np.zeros((n_mels, bin_hz.size), dtype=np.float64)
    for m in range(n_mels):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_frequencies(n_mels: int = N_MELS) -> np.ndarray:
    """Center (peak) frequency in Hz of each triangular filter."""
    edges_mel = np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), n_mels + 2)
    return mel_to_hz(edges_mel[1:-1])


@functools.lru_cache(maxsize=1)
def _hann_window() -> np.ndarray:
    n = np.arange(WINDOW_SAMPLES, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WINDOW_SAMPLES)


def log_mel_energies(audio: AudioBuffer) -> np.ndarray:
    """Unnormalized (T, 80) natural-log mel energies, floored at 1e-10."""
    x = audio.samples.astype(np.float64)
    t_frames = num_frames_for(x.size)
    fb = _mel_filterbank()
    win = _hann_window()
    out = np.empty((t_frames, N_MELS), dtype=np.float64)
    # bounded-memory STFT: process frames in batches
    batch = 4096
    for start in range(0, t_frames, batch):
        stop = min(start + batch, t_frames)
        idx = start * HOP_SAMPLES + np.arange(stop - start)[:, None] * HOP_SAMPLES
        frames = x[idx + np.arange(WINDOW_SAMPLES)] * win
        spectrum = np.fft.rfft(frames, n=N_FFT, axis=1)
        power = spectrum.real**2 + spectrum.imag**2
        out[start:stop] = np.log(np.maximum(power @ fb.T, LOG_FLOOR))
    return out


def log_mel(audio: AudioBuffer) -> FeatureMatrix:
    """Normalized log-mel features: per-feature zero mean / unit variance."""
    y = log_mel_energies(audio)
    mu = y.mean(axis=0)
    sigma = np.sqrt(y.var(axis=0))
    z = (y - mu) / (sigma + 1e-10)
    return FeatureMatrix(frames=Tensor(z.astype(np.float32)))


def synth_audio(duration_s: float, seed: int) -> AudioBuffer:
    """Deterministic test signal: band-limited noise plus three drifting tones.

    Exactly round(duration_s * 16000) samples; bounded well inside [-1, 1]
    by construction.
    """
    if duration_s <= 0:
        raise ShapeError(f"duration must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n, dtype=np.float64) / SAMPLE_RATE
    x = 0.3 * rng.uniform(-1.0, 1.0, size=n)
    for f0 in (220.0, 880.0, 2400.0):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        lfo = rng.uniform(0.1, 0.5)
        env = 0.5 + 0.5 * np.sin(2.0 * np.pi * lfo * t + rng.uniform(0.0, 2.0 * np.pi))
        x += 0.2 * env * np.sin(2.0 * np.pi * f0 * t + phase)
    return AudioBuffer(x.astype(np.float32))
