"""Lip-image analysis and synthesis networks, video alignment, and lip file IO.

The analyzer maps a lip sequence [1, N, 64, 64] to a visual feature
[D_v, N] through five conv3d blocks that halve height and width (stride
in block 1, pooling in blocks 2-5) and a post-processing stage that
merges the remaining 2x2 spatial grid into channels. The synthesizer
mirrors it with transposed convolutions doubling height and width back
to 64. Time resolution is never changed; lip video is aligned to the
spectral frame grid beforehand by `align_video`.
"""

from __future__ import annotations

import struct

import numpy as np

from . import instrument
from . import ops
from . import tensor as T
from .errors import AlignmentError, ConfigurationError, FormatError, IngestionError
from .layers import BatchNorm3d, Conv1d, Conv3d, ConvTranspose3d, Linear, Module, ModuleList
from .tensor import Tensor

IMAGE_SIZE = 64
ANALYZER_CHANNELS = (32, 64, 128, 256, 512)

LIPS_MAGIC = b"VNSCLIPS"
LIPS_VERSION = 1


class _AnalysisBlock(Module):
    def __init__(self, c_in, c_out, halve_by_stride):
        super().__init__()
        stride = (1, 2, 2) if halve_by_stride else (1, 1, 1)
        self.conv = Conv3d(c_in, c_out, kernel=3, stride=stride, padding=(1, 1, 1))
        self.norm = BatchNorm3d(c_out)
        self.pool = not halve_by_stride

    def forward(self, x):
        y = T.relu(self.norm(self.conv(x)))
        return ops.avg_pool_hw(y) if self.pool else y


class ImageAnalyzer(Module):
    def __init__(self, d_v: int = 64, channels=ANALYZER_CHANNELS, image_size: int = IMAGE_SIZE):
        super().__init__()
        if image_size != 2 ** (len(channels) + 1):
            raise ConfigurationError(
                f"five halvings need image size {2 ** (len(channels) + 1)}, got {image_size}")
        self.d_v = d_v
        self.image_size = image_size
        last = channels[-1]
        self.blocks = ModuleList(
            _AnalysisBlock(c_in, c_out, halve_by_stride=(i == 0))
            for i, (c_in, c_out) in enumerate(zip((1,) + tuple(channels[:-1]), channels)))
        # after five halvings the spatial grid is 2x2; merge it into channels
        self.merge = Linear(last * 4, last)
        self.post = ModuleList([
            Conv1d(last, last // 2, kernel=3, padding=1),
            Conv1d(last // 2, last // 2, kernel=3, padding=1),
            Conv1d(last // 2, d_v, kernel=3, padding=1),
            Conv1d(d_v, d_v, kernel=3, padding=1),
        ])

    def forward(self, seq: Tensor) -> Tensor:
        """[1, N, H, W] lip sequence -> [D_v, N] visual feature."""
        if seq.shape[0] != 1 or seq.shape[2:] != (self.image_size, self.image_size):
            raise ConfigurationError(
                f"expected [1, N, {self.image_size}, {self.image_size}] input, got {seq.shape}")
        instrument.bump(instrument.VISUAL_OPS)
        x = seq
        for block in self.blocks:
            x = block(x)
        c, n = x.shape[0], x.shape[1]
        grid = T.reshape(T.transpose(x, (0, 2, 3, 1)), (c * 4, n))
        x = T.relu(self.merge(grid))
        for i, conv in enumerate(self.post):
            x = conv(x)
            if i < len(self.post) - 1:
                x = T.relu(x)
        return x


class _SynthesisBlock(Module):
    def __init__(self, c_in, c_out, final):
        super().__init__()
        self.conv = ConvTranspose3d(c_in, c_out, kernel=3, stride=(1, 2, 2),
                                    padding=(1, 1, 1), output_padding=(0, 1, 1))
        self.norm = None if final else BatchNorm3d(c_out)
        self.final = final

    def forward(self, x):
        y = self.conv(x)
        # the output layer keeps a linear activation so pixel gradients
        # never saturate; the loss handles range
        return y if self.final else T.relu(self.norm(y))


class ImageSynthesizer(Module):
    def __init__(self, d_v: int = 64, channels=ANALYZER_CHANNELS, image_size: int = IMAGE_SIZE):
        super().__init__()
        self.d_v = d_v
        self.image_size = image_size
        last = channels[-1]
        self.pre = ModuleList([
            Conv1d(d_v, d_v, kernel=3, padding=1),
            Conv1d(d_v, last // 2, kernel=3, padding=1),
            Conv1d(last // 2, last // 2, kernel=3, padding=1),
            Conv1d(last // 2, last, kernel=3, padding=1),
        ])
        self.expand = Linear(last, last * 4)
        ladder = tuple(reversed(channels)) + (1,)
        self.blocks = ModuleList(
            _SynthesisBlock(c_in, c_out, final=(c_out == 1))
            for c_in, c_out in zip(ladder[:-1], ladder[1:]))

    def forward(self, v: Tensor) -> Tensor:
        """[D_v, N] visual feature -> [1, N, H, W] lip sequence."""
        if v.shape[0] != self.d_v:
            raise ConfigurationError(f"expected [{self.d_v}, N] feature, got {v.shape}")
        instrument.bump(instrument.VISUAL_OPS)
        x = v
        for i, conv in enumerate(self.pre):
            x = T.relu(conv(x)) if i < len(self.pre) - 1 else conv(x)
        c, n = x.shape[0], x.shape[1]
        grid = T.relu(self.expand(x))
        x = T.transpose(T.reshape(grid, (c, 2, 2, n)), (0, 3, 1, 2))
        for block in self.blocks:
            x = block(x)
        return x


def align_video(frames: np.ndarray, target_frames: int, source_fps: float = 60.0,
                feature_rate: float = 150.0, replication: int = 8,
                start_time: float = 0.0) -> np.ndarray:
    """Align a source-rate image stack [n, H, W] to the spectral frame grid.

    Nearest-frame sample-and-hold to `feature_rate`, each held frame
    replicated `replication` times, then truncated to exactly
    `target_frames`; times outside the video clamp to its edge frames.
    `start_time` is where (in seconds on the video clock) the aligned
    window begins, so a cropped waveform meets the lip frames that were
    recorded with it. Output is [1, target_frames, H, W]; every output
    frame is a verbatim copy of some input frame.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise IngestionError(f"expected a non-empty [frames, H, W] stack, got {frames.shape}")
    if target_frames < 1:
        raise ConfigurationError("target frame count must be positive")
    n = frames.shape[0]
    n_held = -(-target_frames // replication)
    held = start_time * source_fps + np.arange(n_held) * source_fps / feature_rate
    src = np.clip(np.round(held).astype(int), 0, n - 1)
    idx = np.repeat(src, replication)
    aligned = frames[idx[:target_frames]].astype(np.float32)
    return aligned[None, :, :, :]


def image_reconstruction_loss(target: Tensor, decoded: Tensor) -> Tensor:
    """Mean squared error over every pixel of the sequence."""
    if target.shape != decoded.shape:
        raise AlignmentError(f"image shapes differ: {target.shape} vs {decoded.shape}")
    diff = T.sub(target, decoded)
    return T.tmean(T.mul(diff, diff))


# -- lip video files -------------------------------------------------------------------


def write_lips(path, frames: np.ndarray, fps=(60, 1)) -> None:
    """Write a grayscale u8 image stack [n, H, W] as a lip video file."""
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise IngestionError(f"expected [frames, H, W], got {frames.shape}")
    if frames.dtype != np.uint8:
        raise IngestionError(f"expected uint8 pixels, got {frames.dtype}")
    n, h, w = frames.shape
    header = LIPS_MAGIC + struct.pack("<IIIIHH", LIPS_VERSION, n, fps[0], fps[1], h, w)
    with open(path, "wb") as f:
        f.write(header)
        f.write(frames.tobytes())


def read_lips(path):
    """Read a lip video file; returns (frames f32 [n, H, W] in [0, 1], fps tuple)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(LIPS_MAGIC) + 20:
        raise FormatError("lip file too short for its header")
    if blob[:len(LIPS_MAGIC)] != LIPS_MAGIC:
        raise FormatError("not a lip video file (bad magic)")
    version, n, num, den, h, w = struct.unpack_from("<IIIIHH", blob, len(LIPS_MAGIC))
    if version != LIPS_VERSION:
        raise FormatError(f"unsupported lip file version {version}")
    if den == 0:
        raise FormatError("zero fps denominator")
    start = len(LIPS_MAGIC) + 20
    expect = n * h * w
    if len(blob) - start != expect:
        raise FormatError(f"lip payload holds {len(blob) - start} bytes, expected {expect}")
    frames = np.frombuffer(blob, dtype=np.uint8, offset=start).reshape(n, h, w)
    return frames.astype(np.float32) / 255.0, (num, den)
