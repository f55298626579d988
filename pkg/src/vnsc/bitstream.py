"""Coded-index serialization: a small header plus tightly packed indices.

Layout: the magic, then little-endian header fields (version u32, mode u8,
sample rate u32, frame shift u16, downsample factor u16, stages u8, entries
u32, latent frames u32), then every index as a big-endian bit group of
ceil(log2(entries)) bits, stage-major, zero-padded to a whole byte. The
header carries everything a decoder must agree on, so mismatches against a
loaded model fail loudly instead of producing noise.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .config import SCENARIOS, VnscConfig
from .dsp import FRAME_SHIFT, SAMPLE_RATE
from .errors import ConfigurationError, FormatError

BITS_MAGIC = b"VNSCBITS"
BITS_VERSION = 1
_HEADER = "<IBIHHBII"
_HEADER_LEN = len(BITS_MAGIC) + struct.calcsize(_HEADER)


@dataclass
class BitstreamHeader:
    mode: str
    sample_rate: int
    frame_shift: int
    downsample_factor: int
    stages: int
    entries: int
    n_frames: int

    @property
    def index_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.entries)))

    def duration(self) -> float:
        """Seconds represented by the coded frames."""
        return self.n_frames * self.downsample_factor * self.frame_shift / self.sample_rate

    def bitrate(self) -> float:
        """Payload bits per second, excluding the header."""
        return self.stages * self.index_bits * self.sample_rate / (
            self.frame_shift * self.downsample_factor)


def header_for(cfg: VnscConfig, n_frames: int) -> BitstreamHeader:
    return BitstreamHeader(mode=cfg.scenario, sample_rate=SAMPLE_RATE,
                           frame_shift=FRAME_SHIFT,
                           downsample_factor=cfg.downsample_factor,
                           stages=cfg.rvq_stages, entries=cfg.rvq_entries,
                           n_frames=n_frames)


def bitstream_bytes(indices: np.ndarray, cfg: VnscConfig) -> bytes:
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[0] != cfg.rvq_stages:
        raise ConfigurationError(
            f"expected [{cfg.rvq_stages}, N] indices, got {indices.shape}")
    if indices.shape[1] < 1:
        raise ConfigurationError("refusing to write an empty bitstream")
    if indices.min() < 0 or indices.max() >= cfg.rvq_entries:
        raise ConfigurationError(
            f"indices outside [0, {cfg.rvq_entries}): "
            f"min {indices.min()}, max {indices.max()}")
    header = header_for(cfg, indices.shape[1])
    mode_code = SCENARIOS.index(cfg.scenario)
    head = BITS_MAGIC + struct.pack(_HEADER, BITS_VERSION, mode_code, header.sample_rate,
                                    header.frame_shift, header.downsample_factor,
                                    header.stages, header.entries, header.n_frames)
    return head + _pack(indices.reshape(-1), header.index_bits)


def write_bitstream(path, indices: np.ndarray, cfg: VnscConfig) -> None:
    with open(path, "wb") as f:
        f.write(bitstream_bytes(indices, cfg))


def parse_bitstream(blob: bytes):
    """-> (indices [stages, n_frames] int64, BitstreamHeader)."""
    if len(blob) < _HEADER_LEN:
        raise FormatError(f"bitstream holds {len(blob)} bytes; "
                          f"the header alone needs {_HEADER_LEN}")
    if blob[:len(BITS_MAGIC)] != BITS_MAGIC:
        raise FormatError("not a coded bitstream (bad magic)")
    version, mode_code, rate, shift, factor, stages, entries, n_frames = struct.unpack_from(
        _HEADER, blob, len(BITS_MAGIC))
    if version != BITS_VERSION:
        raise FormatError(f"unsupported bitstream version {version}")
    if mode_code >= len(SCENARIOS):
        raise FormatError(f"unknown mode code {mode_code}")
    if stages < 1 or entries < 1 or n_frames < 1:
        raise FormatError("degenerate bitstream header")
    header = BitstreamHeader(mode=SCENARIOS[mode_code], sample_rate=rate,
                             frame_shift=shift, downsample_factor=factor,
                             stages=stages, entries=entries, n_frames=n_frames)
    flat = _unpack(blob[_HEADER_LEN:], stages * n_frames, header.index_bits)
    if flat.max() >= entries:
        raise FormatError(f"corrupt payload: index {flat.max()} with {entries} entries")
    return flat.reshape(stages, n_frames), header


def read_bitstream(path):
    with open(path, "rb") as f:
        return parse_bitstream(f.read())


def check_compatible(header: BitstreamHeader, cfg: VnscConfig) -> None:
    """Reject decoding with a model the stream was not produced for."""
    got = header_for(cfg, header.n_frames)
    bad = [name for name in ("mode", "sample_rate", "frame_shift",
                             "downsample_factor", "stages", "entries")
           if getattr(header, name) != getattr(got, name)]
    if bad:
        detail = ", ".join(f"{n}: stream {getattr(header, n)} vs model {getattr(got, n)}"
                           for n in bad)
        raise FormatError(f"bitstream does not match the model ({detail})")


def _pack(values: np.ndarray, width: int) -> bytes:
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    bits = ((values.astype(np.int64)[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes()


def _unpack(payload: bytes, count: int, width: int) -> np.ndarray:
    need = count * width
    have = len(payload) * 8
    if have < need or have - need >= 8:
        raise FormatError(f"payload holds {have} bits, expected {need} "
                          f"plus at most 7 padding bits")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=need)
    weights = np.left_shift(1, np.arange(width - 1, -1, -1, dtype=np.int64))
    return bits.reshape(count, width).astype(np.int64) @ weights
