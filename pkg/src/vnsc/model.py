"""Full codec assembly: speech encoder/decoder, quantizer state, vision side.

The model owns everything a checkpoint must capture, including the
learned codebooks, which train by moving averages rather than by
gradient and therefore live outside the parameter registry.
"""

from __future__ import annotations

import numpy as np

from . import dsp
from .codec import SpeechEncoder, SpeechDecoder
from .config import VnscConfig
from .errors import UsageError
from .fusion import FeatureFusion
from .layers import Module
from .rvq import RvqCodebooks, rvq_dequantize, rvq_quantize
from .serialization import load_parameters, save_parameters
from .tensor import Tensor, no_grad
from .vision import ImageAnalyzer, ImageSynthesizer, align_video


class VnscModel(Module):
    def __init__(self, cfg: VnscConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = SpeechEncoder(cfg.n_spectral, cfg.d_s, cfg.n_blocks,
                                     cfg.fusion_index, cfg.downsample_factor)
        self.decoder = SpeechDecoder(cfg.n_spectral, cfg.d_s, cfg.n_blocks,
                                     cfg.downsample_factor)
        if cfg.scenario in ("va", "vua"):
            self.analyzer = ImageAnalyzer(cfg.d_v, cfg.vision_channels, cfg.image_size)
            self.fusion = FeatureFusion(cfg.d_s, cfg.d_v)
            self.synthesizer = ImageSynthesizer(cfg.d_v, cfg.vision_channels, cfg.image_size)
        self.books: RvqCodebooks | None = None

    # -- lifecycle ----------------------------------------------------------------

    def initialize(self, seed: int | None = None) -> "VnscModel":
        seed = self.cfg.seed if seed is None else seed
        super().initialize(seed)
        if self.has_vision() and self.cfg.resolved_fusion_init() == "neutral":
            self.fusion.make_neutral()
        return self

    def has_vision(self) -> bool:
        return self.cfg.scenario in ("va", "vua")

    def require_books(self) -> RvqCodebooks:
        if self.books is None:
            raise UsageError("codebooks are uninitialized; train or load a checkpoint first")
        return self.books

    # -- forward pieces -----------------------------------------------------------

    def visual_features(self, frames: np.ndarray, n_frames: int,
                        source_fps: float = 60.0) -> Tensor:
        """Lip frames [n, H, W] (u8 or [0,1] float) -> visual feature [D_v, N]."""
        frames = np.asarray(frames)
        if frames.dtype == np.uint8:
            frames = frames.astype(np.float32) / 255.0
        aligned = align_video(frames, n_frames, source_fps=source_fps)
        return self.analyzer(Tensor(aligned))

    def encode(self, spec: Tensor, visual: Tensor | None = None):
        """Route the encoder by scenario; returns (latent, hidden)."""
        if self.cfg.scenario == "va":
            return self.encoder(spec, visual=visual, fusion=self.fusion, mode="va")
        return self.encoder(spec, mode=self.cfg.scenario)

    def decode(self, latent: Tensor) -> Tensor:
        return self.decoder(latent)

    # -- inference ----------------------------------------------------------------

    def encode_wave(self, wave: dsp.Waveform, lips: np.ndarray | None = None,
                    lips_fps: float = 60.0) -> np.ndarray:
        """Waveform (plus lips when the scenario fuses them) -> indices [Q, N']."""
        self.eval()
        books = self.require_books()
        spec = dsp.mdct(wave.samples)
        with no_grad():
            visual = None
            if self.cfg.scenario == "va":
                if lips is None:
                    raise UsageError("va encoding requires a lip video")
                visual = self.visual_features(lips, spec.shape[1], lips_fps)
            elif lips is not None:
                raise UsageError(f"{self.cfg.scenario} encoding does not accept a lip video")
            latent, _ = self.encode(Tensor(spec.astype(np.float32)), visual)
        indices, _, _ = rvq_quantize(latent.data, books)
        return indices

    def decode_wave(self, indices: np.ndarray) -> dsp.Waveform:
        """Indices [Q, N'] -> reconstructed waveform."""
        self.eval()
        books = self.require_books()
        latent = rvq_dequantize(indices, books)
        with no_grad():
            spec = self.decode(Tensor(latent.astype(np.float32)))
        samples = dsp.imdct(spec.data)
        return dsp.Waveform(samples.astype(np.float32))

    # -- persistence --------------------------------------------------------------

    def full_state_dict(self) -> dict:
        state = self.state_dict()
        if self.books is not None:
            state.update(self.books.state_dict())
        return state

    def load_full_state(self, state: dict) -> None:
        books_keys = {k for k in state if k.startswith("rvq.")}
        if books_keys:
            self.books = RvqCodebooks.from_state(state, self.cfg.rvq_stages)
        self.load_state_dict({k: v for k, v in state.items() if k not in books_keys})

    def save(self, path) -> None:
        save_parameters(path, self.full_state_dict())

    def load(self, path) -> "VnscModel":
        self.load_full_state(load_parameters(path))
        return self


def bitrate_bps(cfg: VnscConfig, books: RvqCodebooks) -> float:
    """Coded bits per second at the latent frame rate."""
    latent_rate = dsp.SAMPLE_RATE / (dsp.FRAME_SHIFT * cfg.downsample_factor)
    return books.bits_per_frame * latent_rate
