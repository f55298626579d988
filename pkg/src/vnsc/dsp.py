"""MDCT analysis/synthesis, mel spectrogram, and waveform utilities.

The lapped transform uses a sine window (which satisfies the
Princen-Bradley condition, so overlap-add synthesis cancels time-domain
aliasing exactly) with window length 2M and hop M. Analysis zero-pads the
signal to a whole number of hops and then reflect-pads M samples per side;
synthesis drops those M-sample tails again, which makes the round trip
exact on the full original extent rather than only on an interior.

Differentiable variants (`imdct_t`, `mel_spectrogram_t`) are compositions
of Tensor primitives sharing the same cached matrices as the plain numpy
paths, so both routes produce identical values on identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.io import wavfile

from . import ops
from . import tensor as T
from .errors import ConfigurationError, IngestionError
from .tensor import Tensor

SAMPLE_RATE = 48000
FRAME_SHIFT = 40
PCM_SCALE = 32768.0


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ConfigurationError(f"waveform must be 1-D, got shape {self.samples.shape}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


# -- lapped transform ----------------------------------------------------------------


@lru_cache(maxsize=8)
def _window(m: int) -> np.ndarray:
    j = np.arange(2 * m)
    return np.sin(np.pi / (2 * m) * (j + 0.5))


@lru_cache(maxsize=8)
def _analysis_matrix(m: int) -> np.ndarray:
    """A[k, j] = w[j] * cos(pi/M * (j + 1/2 + M/2) * (k + 1/2)), shape [M, 2M]."""
    k = np.arange(m)[:, None]
    j = np.arange(2 * m)[None, :]
    phases = np.pi / m * (j + 0.5 + m / 2.0) * (k + 0.5)
    return _window(m)[None, :] * np.cos(phases)


@lru_cache(maxsize=8)
def _synthesis_matrix(m: int) -> np.ndarray:
    return (2.0 / m) * _analysis_matrix(m)


def mdct(samples: np.ndarray, frame_shift: int = FRAME_SHIFT) -> np.ndarray:
    """Forward transform of a 1-D signal to [frame_shift, n_frames].

    n_frames = ceil(len/frame_shift) + 1; requires at least one full window
    of input (2*frame_shift samples).
    """
    m = int(frame_shift)
    if m <= 0:
        raise ConfigurationError(f"frame_shift must be positive, got {frame_shift}")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or len(samples) < 2 * m:
        raise ConfigurationError(
            f"need a 1-D signal of at least {2 * m} samples, got shape {samples.shape}")
    padded_len = -(-len(samples) // m) * m
    x = np.zeros(padded_len)
    x[: len(samples)] = samples
    x = np.pad(x, m, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, 2 * m)[::m]
    return (frames @ _analysis_matrix(m).T).T


def imdct(spec: np.ndarray) -> np.ndarray:
    """Overlap-add synthesis of [M, N] back to (N-1)*M samples."""
    spec = np.asarray(spec, dtype=np.float64)
    m, n_frames = spec.shape
    frames = spec.T @ _synthesis_matrix(m)
    buf = np.zeros((n_frames + 1) * m)
    for t in range(n_frames):
        buf[t * m : t * m + 2 * m] += frames[t]
    return buf[m : n_frames * m]


def imdct_t(spec: Tensor) -> Tensor:
    """Differentiable imdct; same values as `imdct` up to storage dtype."""
    m = spec.shape[0]
    smat = Tensor(_synthesis_matrix(m).astype(spec.dtype))
    frames = T.matmul(T.transpose(spec), smat)
    return ops.overlap_add(frames, m, trim=m)


# -- mel spectrogram ------------------------------------------------------------------


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_fft: int, n_mels: int, sample_rate: int) -> np.ndarray:
    """Triangular filters [n_mels, n_fft//2+1] on the HTK mel scale, 0..sr/2."""
    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / n_fft
    points = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = points[i], points[i + 1], points[i + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


@lru_cache(maxsize=8)
def _dft_matrices(n_fft: int) -> tuple[np.ndarray, np.ndarray]:
    n_bins = n_fft // 2 + 1
    j = np.arange(n_fft)[:, None]
    k = np.arange(n_bins)[None, :]
    angles = 2.0 * np.pi * j * k / n_fft
    return np.cos(angles), np.sin(angles)


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_spectrogram_t(wave: Tensor, n_fft: int = 1024, hop: int = 240, n_mels: int = 80,
                      sample_rate: int = SAMPLE_RATE, floor: float = 1e-5) -> Tensor:
    """Log mel energies [n_mels, frames] of a 1-D waveform tensor.

    Hann-windowed power spectrum through the mel filterbank, log-compressed
    with the given floor. Signals shorter than one window are zero-padded to
    exactly one frame; trailing samples that do not fill a hop are ignored.
    """
    dt = wave.dtype
    if wave.shape[0] < n_fft:
        wave = ops.pad1d(wave, 0, n_fft - wave.shape[0])
    frames = ops.frame_signal(wave, n_fft, hop)
    windowed = T.mul(frames, Tensor(_hann(n_fft).astype(dt)))
    cos_m, sin_m = _dft_matrices(n_fft)
    re = T.matmul(windowed, Tensor(cos_m.astype(dt)))
    im = T.matmul(windowed, Tensor(sin_m.astype(dt)))
    power = T.add(T.mul(re, re), T.mul(im, im))
    energies = T.matmul(power, Tensor(mel_filterbank(n_fft, n_mels, sample_rate).T.astype(dt)))
    return T.transpose(T.log(T.clamp_min(energies, floor)))


def mel_spectrogram(samples: np.ndarray, n_fft: int = 1024, hop: int = 240, n_mels: int = 80,
                    sample_rate: int = SAMPLE_RATE, floor: float = 1e-5) -> np.ndarray:
    return mel_spectrogram_t(Tensor(np.asarray(samples, dtype=np.float64)),
                             n_fft, hop, n_mels, sample_rate, floor).data


# -- metrics / noise -------------------------------------------------------------------


def ssnr(clean: np.ndarray, decoded: np.ndarray, seg_len: int = 320,
         floor_db: float = -10.0, ceil_db: float = 35.0) -> float:
    """Mean segmental SNR in dB over non-overlapping segments, clamped per
    segment to [floor_db, ceil_db]; signals are truncated to the shorter one."""
    n = min(len(clean), len(decoded))
    if n < seg_len:
        raise ConfigurationError(f"need at least {seg_len} overlapping samples, got {n}")
    c = np.asarray(clean[:n], dtype=np.float64)
    d = np.asarray(decoded[:n], dtype=np.float64)
    n_seg = n // seg_len
    c = c[: n_seg * seg_len].reshape(n_seg, seg_len)
    d = d[: n_seg * seg_len].reshape(n_seg, seg_len)
    sig = (c**2).sum(axis=1)
    err = ((c - d) ** 2).sum(axis=1)
    out = np.full(n_seg, floor_db)
    live = sig > 0.0
    exact = live & (err == 0.0)
    out[exact] = ceil_db
    rest = live & (err > 0.0)
    out[rest] = np.clip(10.0 * np.log10(sig[rest] / err[rest]), floor_db, ceil_db)
    return float(out.mean())


def add_noise(samples: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add seeded Gaussian noise scaled for an exact global SNR in dB."""
    samples = np.asarray(samples, dtype=np.float64)
    if np.isinf(snr_db):
        return samples.copy()
    noise = np.random.default_rng(seed).standard_normal(len(samples))
    sig_power = float((samples**2).sum())
    noise_power = float((noise**2).sum())
    if sig_power == 0.0 or noise_power == 0.0:
        return samples.copy()
    scale = math.sqrt(sig_power / noise_power * 10.0 ** (-snr_db / 10.0))
    return samples + scale * noise


# -- WAV ingestion ---------------------------------------------------------------------


def read_wav(path) -> Waveform:
    """Load PCM16 mono at the codec rate; anything else is rejected."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as e:
        raise IngestionError(f"{path}: unreadable WAV ({e})") from e
    if data.dtype != np.int16:
        raise IngestionError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    if data.ndim != 1:
        raise IngestionError(f"{path}: expected mono, got {data.shape[1]} channels")
    if rate != SAMPLE_RATE:
        raise IngestionError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} (no resampler)")
    return Waveform((data / PCM_SCALE).astype(np.float32), rate)


def write_wav(path, wave: Waveform) -> None:
    clipped = np.clip(np.asarray(wave.samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(clipped * PCM_SCALE), -32768, 32767).astype(np.int16)
    wavfile.write(path, wave.sample_rate, pcm)
