"""Speech encoder and decoder between MDCT spectra and the latent code.

The encoder runs a conv/norm pre-processing stage, a cascade of residual
ConvNeXt-style blocks with an optional visual-fusion hook after one chosen
block, and a norm/linear/strided-conv post-processing stage that reduces
the frame rate by `downsample_factor`. The decoder mirrors it with a
transposed convolution restoring the frame rate.

Modes:
  "audio" — speech only.
  "va"    — a visual feature of matching frame count is fused into the
            hidden speech feature after block `fusion_index`.
  "vua"   — speech-only compute path (identical to "audio"); the hidden
            feature returned alongside the latent lets a training loop
            distill visual information into it without ever touching
            visual data here.
"""

from __future__ import annotations

from . import fusion as fusion_mod
from .errors import UsageError
from .layers import Conv1d, ConvTranspose1d, LayerNorm, Linear, McnxBlock, Module, ModuleList
from .tensor import Tensor

MODES = ("audio", "va", "vua")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {MODES}")


class SpeechEncoder(Module):
    def __init__(self, n_spectral: int = 40, d_s: int = 256, n_blocks: int = 8,
                 fusion_index: int = 2, downsample_factor: int = 8,
                 dw_kernel: int = 7, expand: int = 2):
        super().__init__()
        if not 1 <= fusion_index <= n_blocks - 1:
            raise UsageError(
                f"fusion index {fusion_index} outside [1, {n_blocks - 1}]")
        self.fusion_index = fusion_index
        self.downsample_factor = downsample_factor
        self.pre_conv = Conv1d(n_spectral, d_s, kernel=7, padding=3)
        self.pre_norm = LayerNorm(d_s)
        self.blocks = ModuleList(McnxBlock(d_s, kernel=dw_kernel, expand=expand)
                                 for _ in range(n_blocks))
        self.post_norm = LayerNorm(d_s)
        self.post_linear = Linear(d_s, d_s)
        self.down_conv = Conv1d(d_s, d_s, kernel=2 * downsample_factor,
                                stride=downsample_factor, padding=downsample_factor // 2)
        self.post_conv = Conv1d(d_s, d_s, kernel=7, padding=3)

    def forward(self, spec: Tensor, visual: Tensor | None = None,
                fusion: Module | None = None, mode: str = "audio"):
        """Encode an MDCT spectrum [M, N] to (latent [D, N/factor], hidden [D_s, N]).

        `hidden` is the speech feature after block `fusion_index`, before any
        fusion; callers use it for distillation training.
        """
        _check_mode(mode)
        if mode == "va":
            if visual is None:
                raise UsageError("va mode requires a visual feature")
            if fusion is None:
                raise UsageError("va mode requires a fusion module")
        elif visual is not None:
            raise UsageError(f"{mode} mode does not accept a visual feature")

        x = self.pre_norm(self.pre_conv(spec))
        hidden = None
        for index, block in enumerate(self.blocks, start=1):
            x = block(x)
            if index == self.fusion_index:
                hidden = x
                route = "va" if mode == "va" else "infer"
                x, _ = fusion_mod.apply_fusion_strategy(route, hidden, visual, fusion)
        latent = self.post_linear(self.post_norm(x))
        latent = self.post_conv(self.down_conv(latent))
        return latent, hidden


class SpeechDecoder(Module):
    def __init__(self, n_spectral: int = 40, d_s: int = 256, n_blocks: int = 8,
                 downsample_factor: int = 8, dw_kernel: int = 7, expand: int = 2):
        super().__init__()
        self.downsample_factor = downsample_factor
        self.pre_conv = Conv1d(d_s, d_s, kernel=7, padding=3)
        self.up_conv = ConvTranspose1d(d_s, d_s, kernel=2 * downsample_factor,
                                       stride=downsample_factor,
                                       padding=downsample_factor // 2)
        self.pre_linear = Linear(d_s, d_s)
        self.pre_norm = LayerNorm(d_s)
        self.blocks = ModuleList(McnxBlock(d_s, kernel=dw_kernel, expand=expand)
                                 for _ in range(n_blocks))
        self.post_norm = LayerNorm(d_s)
        self.post_conv = Conv1d(d_s, n_spectral, kernel=7, padding=3)

    def forward(self, latent: Tensor) -> Tensor:
        """Decode a latent [D, N'] to an MDCT spectrum [M, N'·factor]."""
        x = self.pre_norm(self.pre_linear(self.up_conv(self.pre_conv(latent))))
        for block in self.blocks:
            x = block(x)
        return self.post_conv(self.post_norm(x))
