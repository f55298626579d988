"""Bimodal feature fusion and the distillation loss.

`FeatureFusion` concatenates a speech feature [D_s, N] with a visual
feature [D_v, N] and projects back to D_s with one linear layer. The
distillation loss is a smooth cosine-alignment penalty between a speech
feature and its fused counterpart:

    softplus(-tr(X^T Xt) / (max(|X|_F, eps) * max(|Xt|_F, eps)))

which lies in [ln(1+e^-1), ln(1+e)] for nonzero inputs because the
normalized trace is a cosine.
"""

from __future__ import annotations

import numpy as np

from . import instrument
from . import tensor as T
from .errors import AlignmentError, UsageError
from .layers import Linear, Module
from .tensor import Tensor


class FeatureFusion(Module):
    def __init__(self, d_s: int = 256, d_v: int = 64):
        super().__init__()
        self.d_s = d_s
        self.d_v = d_v
        self.linear = Linear(d_s + d_v, d_s)

    def forward(self, x: Tensor, v: Tensor) -> Tensor:
        if x.shape[0] != self.d_s or v.shape[0] != self.d_v:
            raise AlignmentError(
                f"expected [{self.d_s}, N] speech and [{self.d_v}, N] visual features, "
                f"got {x.shape} and {v.shape}")
        if x.shape[1] != v.shape[1]:
            raise AlignmentError(
                f"frame counts differ: speech {x.shape[1]}, visual {v.shape[1]}")
        instrument.bump(instrument.VISUAL_OPS)
        return self.linear(T.concat([x, v], axis=0))

    def make_neutral(self) -> None:
        """Set the projection to [Identity | 0] with zero bias, so fusion
        passes the speech feature through untouched for any visual input."""
        self.linear.weight.data[:] = 0.0
        self.linear.weight.data[:, :self.d_s] = np.eye(self.d_s, dtype=np.float32)
        self.linear.bias.data[:] = 0.0


def _frob_norm(x: Tensor, eps: float) -> Tensor:
    # max(|X|_F, eps) computed as sqrt(max(sum x^2, eps^2)): same value,
    # and the clamp keeps the gradient finite at the all-zero input
    return T.sqrt(T.clamp_min(T.tsum(T.mul(x, x)), eps * eps))


def distillation_loss(x: Tensor, x_tilde: Tensor, eps: float = 1e-6) -> Tensor:
    """Alignment penalty between a speech feature and a bimodal feature."""
    if x.shape != x_tilde.shape:
        raise AlignmentError(f"feature shapes differ: {x.shape} vs {x_tilde.shape}")
    trace = T.tsum(T.mul(x, x_tilde))
    ratio = T.div(trace, T.mul(_frob_norm(x, eps), _frob_norm(x_tilde, eps)))
    return T.softplus(T.mul(ratio, -1.0))


def apply_fusion_strategy(mode: str, x: Tensor, visual: Tensor | None,
                          fusion: Module | None, eps: float = 1e-6):
    """Route the hidden speech feature according to the operating mode.

    "va"        -> (fused feature, None): visual information enters the
                   compute path explicitly.
    "vua_train" -> (x, distillation loss): the fused feature exists only
                   inside the loss term, pulling x toward it.
    "vua_infer" / "audio" -> (x, None): no visual computation at all.
    """
    if mode == "va":
        if visual is None or fusion is None:
            raise UsageError("va fusion requires a visual feature and fusion module")
        return fusion(x, visual), None
    if mode == "vua_train":
        if visual is None or fusion is None:
            raise UsageError("vua training requires a visual feature and fusion module")
        return x, distillation_loss(x, fusion(x, visual), eps)
    if mode in ("vua_infer", "audio", "infer"):
        return x, None
    raise UsageError(f"unknown fusion mode {mode!r}")
