"""Differentiable structured operations built on the Tensor graph.

Convolutions use stride-trick windowing plus einsum on the forward pass and
kernel-offset slice accumulation on the backward pass, so forward cost is
one contraction and backward cost is K contractions. Normalizations are
composed from Tensor primitives and inherit their gradients; only the ops
with nontrivial index bookkeeping (convs, framing, overlap-add) carry
hand-written backward closures.

Layout conventions, fixed package-wide:
  features      [D, N]            channels x frames
  1D conv       x [C_in, N],  weight [C_out, C_in/groups, K]
  1D transposed x [C_in, N],  weight [C_in, C_out, K]
  3D conv       x [C_in, T, H, W], weight [C_out, C_in, kT, kH, kW]
  3D transposed x [C_in, T, H, W], weight [C_in, C_out, kT, kH, kW]
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError
from . import tensor as T
from .tensor import Tensor


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ConfigurationError(f"expected an int or a 3-tuple, got {v!r}")
    return t


# -- 1D convolution ------------------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    c_in, n = x.shape
    c_out, c_g, k = weight.shape
    if c_in % groups or c_out % groups:
        raise ConfigurationError(f"channels ({c_in}->{c_out}) not divisible by groups={groups}")
    if c_g != c_in // groups:
        raise ConfigurationError(
            f"weight expects {c_g} channels/group but input supplies {c_in // groups}")
    n_out = (n + 2 * padding - k) // stride + 1
    if n_out < 1:
        raise ConfigurationError(f"kernel {k} does not fit input of {n} frames (padding {padding})")

    xp = np.pad(x.data, ((0, 0), (padding, padding)))
    wins = sliding_window_view(xp, k, axis=1)[:, ::stride]  # [C_in, n_out, K]
    wins_g = wins.reshape(groups, c_g, n_out, k)
    w_g = weight.data.reshape(groups, c_out // groups, c_g, k)
    data = np.einsum("gcnk,gock->gon", wins_g, w_g, optimize=True).reshape(c_out, n_out)
    if bias is not None:
        data = data + bias.data[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g_g = g.reshape(groups, c_out // groups, n_out)
        if weight.requires_grad:
            gw = np.einsum("gon,gcnk->gock", g_g, wins_g, optimize=True)
            weight._accumulate(gw.reshape(c_out, c_g, k))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            span = stride * (n_out - 1) + 1
            for j in range(k):
                contrib = np.einsum("gon,goc->gcn", g_g, w_g[:, :, :, j], optimize=True)
                gxp[:, j : j + span : stride] += contrib.reshape(c_in, n_out)
            x._accumulate(gxp[:, padding : padding + n] if padding else gxp)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=1))

    return Tensor._from_op(data, parents, backward)


def conv1d_transposed(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1,
                      padding: int = 0, output_padding: int = 0) -> Tensor:
    c_in, n = x.shape
    w_in, c_out, k = weight.shape
    if w_in != c_in:
        raise ConfigurationError(f"weight expects {w_in} input channels, got {c_in}")
    if output_padding >= max(stride, 1):
        raise ConfigurationError("output_padding must be smaller than stride")
    full = (n - 1) * stride + k
    n_out = full - 2 * padding + output_padding
    if n_out < 1:
        raise ConfigurationError(f"transposed conv yields empty output for {n} frames")

    buf = np.zeros((c_out, full), dtype=np.result_type(x.data, weight.data))
    span = stride * (n - 1) + 1
    for j in range(k):
        buf[:, j : j + span : stride] += np.einsum(
            "cn,co->on", x.data, weight.data[:, :, j], optimize=True)
    # output_padding positions past the accumulation buffer stay zero
    hi = min(full, padding + n_out)
    data = np.zeros((c_out, n_out), dtype=buf.dtype)
    data[:, : hi - padding] = buf[:, padding:hi]
    if bias is not None:
        data = data + bias.data[:, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gbuf = np.zeros((c_out, full), dtype=g.dtype)
        gbuf[:, padding:hi] = g[:, : hi - padding]
        gwins = sliding_window_view(gbuf, k, axis=1)[:, ::stride]  # [C_out, n, K]
        if x.requires_grad:
            x._accumulate(np.einsum("onk,cok->cn", gwins, weight.data, optimize=True))
        if weight.requires_grad:
            weight._accumulate(np.einsum("cn,onk->cok", x.data, gwins, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=1))

    return Tensor._from_op(data, parents, backward)


# -- 3D convolution -------------------------------------------------------------------


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None, stride=(1, 1, 1),
           padding=(0, 0, 0)) -> Tensor:
    st, sh, sw = _triple(stride)
    pt, ph, pw = _triple(padding)
    c_in, t, h, w = x.shape
    c_out, w_in, kt, kh, kw = weight.shape
    if w_in != c_in:
        raise ConfigurationError(f"weight expects {w_in} input channels, got {c_in}")

    xp = np.pad(x.data, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    wins = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
    to, ho, wo = wins.shape[1:4]
    data = np.einsum("cthwijk,ocijk->othw", wins, weight.data, optimize=True)
    if bias is not None:
        data = data + bias.data[:, None, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            weight._accumulate(np.einsum("othw,cthwijk->ocijk", g, wins, optimize=True))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            span_t = st * (to - 1) + 1
            span_h = sh * (ho - 1) + 1
            span_w = sw * (wo - 1) + 1
            for i in range(kt):
                for j in range(kh):
                    for l in range(kw):
                        contrib = np.einsum(
                            "othw,oc->cthw", g, weight.data[:, :, i, j, l], optimize=True)
                        gxp[:, i : i + span_t : st, j : j + span_h : sh,
                            l : l + span_w : sw] += contrib
            x._accumulate(gxp[:, pt : pt + t, ph : ph + h, pw : pw + w])
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2, 3)))

    return Tensor._from_op(data, parents, backward)


def conv3d_transposed(x: Tensor, weight: Tensor, bias: Tensor | None, stride=(1, 1, 1),
                      padding=(0, 0, 0), output_padding=(0, 0, 0)) -> Tensor:
    st, sh, sw = _triple(stride)
    pt, ph, pw = _triple(padding)
    ot, oh, ow = _triple(output_padding)
    c_in, t, h, w = x.shape
    w_in, c_out, kt, kh, kw = weight.shape
    if w_in != c_in:
        raise ConfigurationError(f"weight expects {w_in} input channels, got {c_in}")
    if ot >= max(st, 1) or oh >= max(sh, 1) or ow >= max(sw, 1):
        raise ConfigurationError("output_padding must be smaller than stride on every axis")

    full = ((t - 1) * st + kt, (h - 1) * sh + kh, (w - 1) * sw + kw)
    out_shape = ((t - 1) * st - 2 * pt + kt + ot,
                 (h - 1) * sh - 2 * ph + kh + oh,
                 (w - 1) * sw - 2 * pw + kw + ow)
    buf = np.zeros((c_out,) + full, dtype=np.result_type(x.data, weight.data))
    span_t = st * (t - 1) + 1
    span_h = sh * (h - 1) + 1
    span_w = sw * (w - 1) + 1
    for i in range(kt):
        for j in range(kh):
            for l in range(kw):
                buf[:, i : i + span_t : st, j : j + span_h : sh, l : l + span_w : sw] += (
                    np.einsum("cthw,co->othw", x.data, weight.data[:, :, i, j, l], optimize=True))
    # output_padding positions past the accumulation buffer stay zero
    ht, hh, hw = (min(full[0], pt + out_shape[0]), min(full[1], ph + out_shape[1]),
                  min(full[2], pw + out_shape[2]))
    data = np.zeros((c_out,) + out_shape, dtype=buf.dtype)
    data[:, : ht - pt, : hh - ph, : hw - pw] = buf[:, pt:ht, ph:hh, pw:hw]
    if bias is not None:
        data = data + bias.data[:, None, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gbuf = np.zeros((c_out,) + full, dtype=g.dtype)
        gbuf[:, pt:ht, ph:hh, pw:hw] = g[:, : ht - pt, : hh - ph, : hw - pw]
        gwins = sliding_window_view(gbuf, (kt, kh, kw), axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
        if x.requires_grad:
            x._accumulate(np.einsum("othwijk,coijk->cthw", gwins, weight.data, optimize=True))
        if weight.requires_grad:
            weight._accumulate(np.einsum("cthw,othwijk->coijk", x.data, gwins, optimize=True))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2, 3)))

    return Tensor._from_op(data, parents, backward)


# -- pooling / affine -----------------------------------------------------------------


def avg_pool_hw(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 height/width windows of x[C,T,H,W]."""
    c, t, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"2x2 pooling needs even spatial extents, got {h}x{w}")
    grouped = T.reshape(x, (c, t, h // 2, 2, w // 2, 2))
    return T.tmean(grouped, axis=(3, 5))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """Per-frame affine map of x[D_in,N] with weight[D_out,D_in]."""
    if weight.shape[1] != x.shape[0]:
        raise ConfigurationError(
            f"linear weight expects {weight.shape[1]} input dims, got {x.shape[0]}")
    out = T.matmul(weight, x)
    if bias is not None:
        out = T.add(out, T.reshape(bias, (bias.shape[0], 1)))
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each frame (column) of x[D,N] over the channel axis."""
    mu = T.tmean(x, axis=0, keepdims=True)
    centered = T.sub(x, mu)
    var = T.tmean(T.mul(centered, centered), axis=0, keepdims=True)
    inv = T.power(T.add(var, eps), -0.5)
    normed = T.mul(centered, inv)
    return T.add(T.mul(normed, T.reshape(gamma, (-1, 1))), T.reshape(beta, (-1, 1)))


def grn(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Global response normalization over x[D,N] with a residual pass-through.

    G_d = ||x_d||_2 across frames; N_d = G_d / (mean_d' G_d' + eps);
    y = gamma * (x o N) + beta + x. The squared norm is floored at 1e-30
    before the root so an all-zero channel keeps a finite gradient.
    """
    sumsq = T.tsum(T.mul(x, x), axis=1, keepdims=True)
    g_norm = T.sqrt(T.clamp_min(sumsq, 1e-30))
    # Axis-form mean keeps the graph in the input dtype (a full reduction
    # would promote everything downstream to float64).
    scale = T.div(g_norm, T.add(T.tmean(g_norm, axis=0, keepdims=True), eps))
    boosted = T.mul(x, scale)
    return T.add(T.add(T.mul(boosted, T.reshape(gamma, (-1, 1))), T.reshape(beta, (-1, 1))), x)


# -- signal framing -------------------------------------------------------------------


def pad1d(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the (only) axis of a 1D tensor."""
    data = np.pad(x.data, (left, right))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[left : left + x.shape[0]])

    return Tensor._from_op(data, (x,), backward)


def frame_signal(x: Tensor, frame_len: int, hop: int) -> Tensor:
    """Slice a 1D signal into overlapping rows: [L] -> [n_frames, frame_len]."""
    n = x.shape[0]
    if n < frame_len:
        raise ConfigurationError(f"signal of {n} samples shorter than frame length {frame_len}")
    n_frames = (n - frame_len) // hop + 1
    data = sliding_window_view(x.data, frame_len)[::hop][:n_frames].copy()

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(n_frames):
                gx[i * hop : i * hop + frame_len] += g[i]
            x._accumulate(gx)

    return Tensor._from_op(data, (x,), backward)


def overlap_add(frames: Tensor, hop: int, trim: int = 0) -> Tensor:
    """Overlap-add rows of frames[N, L] at the given hop; trim samples per side."""
    n_frames, frame_len = frames.shape
    total = (n_frames - 1) * hop + frame_len
    buf = np.zeros(total, dtype=frames.data.dtype)
    for i in range(n_frames):
        buf[i * hop : i * hop + frame_len] += frames.data[i]
    data = buf[trim : total - trim].copy() if trim else buf

    def backward(g):
        if frames.requires_grad:
            gbuf = np.zeros(total, dtype=g.dtype)
            gbuf[trim : total - trim] = g
            gframes = sliding_window_view(gbuf, frame_len)[::hop][:n_frames]
            frames._accumulate(gframes)

    return Tensor._from_op(data, (frames,), backward)
