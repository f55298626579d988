"""Synthetic audio-visual utterances for tests and demos.

Each toy item is a harmonic tone whose loudness follows a slow random
envelope, paired with a rendered mouth whose opening tracks the same
envelope. The shared envelope is what makes the video informative
about the audio, so models with a working visual path can exploit it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE, Waveform, write_wav
from .vision import write_lips


@dataclass
class ToyItem:
    wave: Waveform
    frames: np.ndarray  # [n_frames, size, size] uint8
    fps: int


def toy_envelope(n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Slow positive loudness curve in [floor, 1]."""
    t = np.arange(n_samples, dtype=np.float64) / SAMPLE_RATE
    f_env = rng.uniform(0.8, 2.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    swing = 0.5 + 0.5 * np.sin(2.0 * np.pi * f_env * t + phase)
    return 0.1 + 0.9 * swing


def make_toy_item(rng: np.random.Generator, n_samples: int = SAMPLE_RATE,
                  image_size: int = 64, fps: int = 60) -> ToyItem:
    t = np.arange(n_samples, dtype=np.float64) / SAMPLE_RATE
    env = toy_envelope(n_samples, rng)

    f0 = rng.uniform(90.0, 200.0)
    tone = np.zeros(n_samples)
    for harmonic in range(1, 4):
        amp = rng.uniform(0.3, 1.0) / harmonic
        tone += amp * np.sin(2.0 * np.pi * f0 * harmonic * t + rng.uniform(0, 2 * np.pi))
    tone *= env
    tone += 0.01 * rng.standard_normal(n_samples)
    tone *= 0.5 / np.max(np.abs(tone))
    wave = Waveform(tone.astype(np.float32))

    n_frames = int(np.ceil(n_samples * fps / SAMPLE_RATE))
    frames = np.empty((n_frames, image_size, image_size), dtype=np.uint8)
    hop = SAMPLE_RATE / fps
    for i in range(n_frames):
        lo = int(round(i * hop))
        hi = min(n_samples, int(round((i + 1) * hop)))
        aperture = float(np.mean(env[lo:max(hi, lo + 1)]))
        frames[i] = render_lips(aperture, image_size)
    return ToyItem(wave=wave, frames=frames, fps=fps)


def render_lips(aperture: float, size: int = 64) -> np.ndarray:
    """Elliptical mouth ring; vertical opening scales with aperture in [0, 1]."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    a = 0.38 * size
    b = (0.06 + 0.30 * float(np.clip(aperture, 0.0, 1.0))) * size
    r = ((xx - c) / a) ** 2 + ((yy - c) / b) ** 2
    img = np.full((size, size), 15, dtype=np.uint8)
    img[r <= 1.0] = 45
    img[(r <= 1.0) & (r >= 0.55)] = 220
    return img


def make_toy_dataset(n_items: int = 8, n_samples: int = SAMPLE_RATE,
                     image_size: int = 64, fps: int = 60, seed: int = 0) -> list:
    return [make_toy_item(np.random.default_rng([seed, i]), n_samples, image_size, fps)
            for i in range(n_items)]


def write_toy_dataset(dirpath, n_items: int = 8, n_samples: int = SAMPLE_RATE,
                      image_size: int = 64, fps: int = 60, seed: int = 0) -> list:
    """Write item_###.wav plus matching item_###.lips; returns the wav paths."""
    os.makedirs(dirpath, exist_ok=True)
    paths = []
    for i, item in enumerate(make_toy_dataset(n_items, n_samples, image_size, fps, seed)):
        wav_path = os.path.join(dirpath, f"item_{i:03d}.wav")
        write_wav(wav_path, item.wave)
        write_lips(os.path.join(dirpath, f"item_{i:03d}.lips"), item.frames, fps=(item.fps, 1))
        paths.append(wav_path)
    return paths


def frame_energy(wave: Waveform, fps: int) -> np.ndarray:
    """Per-video-frame RMS of the audio, for checking audio-visual coupling."""
    hop = SAMPLE_RATE / fps
    n_frames = int(np.ceil(wave.samples.size * fps / SAMPLE_RATE))
    out = np.empty(n_frames)
    for i in range(n_frames):
        lo = int(round(i * hop))
        hi = min(wave.samples.size, int(round((i + 1) * hop)))
        seg = wave.samples[lo:max(hi, lo + 1)].astype(np.float64)
        out[i] = np.sqrt(np.mean(seg * seg))
    return out
