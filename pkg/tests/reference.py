"""Slow, definition-level reference implementations used as test oracles.

Everything here is written as plain loops straight from the defining
formulas, trading speed for obviousness. Production code must agree with
these on small instances; nothing in src/ may import this module.
"""

from __future__ import annotations

import math

import numpy as np


# -- differentiation -----------------------------------------------------------


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one entry at a time."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = float(f(x))
        flat[i] = keep - h
        lo = float(f(x))
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


# -- convolutions ----------------------------------------------------------------


def conv1d(x, w, b, stride=1, padding=0, groups=1):
    """x[C_in,N], w[C_out,C_in/groups,K] -> [C_out,N']."""
    c_in, n = x.shape
    c_out, c_g, k = w.shape
    xp = np.zeros((c_in, n + 2 * padding))
    xp[:, padding : padding + n] = x
    n_out = (n + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, n_out))
    out_per_group = c_out // groups
    for o in range(c_out):
        g = o // out_per_group
        for t in range(n_out):
            acc = 0.0
            for c in range(c_g):
                for j in range(k):
                    acc += w[o, c, j] * xp[g * c_g + c, t * stride + j]
            out[o, t] = acc + (b[o] if b is not None else 0.0)
    return out


def conv1d_transposed(x, w, b, stride=1, padding=0, output_padding=0):
    """x[C_in,N], w[C_in,C_out,K] -> [C_out,(N-1)*stride-2*padding+K+output_padding]."""
    c_in, n = x.shape
    _, c_out, k = w.shape
    full = (n - 1) * stride + k
    buf = np.zeros((c_out, full))
    for c in range(c_in):
        for t in range(n):
            for o in range(c_out):
                for j in range(k):
                    buf[o, t * stride + j] += w[c, o, j] * x[c, t]
    n_out = full - 2 * padding + output_padding
    out = np.zeros((c_out, n_out))
    hi = min(full, padding + n_out)
    out[:, : hi - padding] = buf[:, padding:hi]
    if b is not None:
        out = out + b[:, None]
    return out


def conv3d(x, w, b, stride=(1, 1, 1), padding=(0, 0, 0)):
    """x[C_in,T,H,W], w[C_out,C_in,kT,kH,kW]."""
    c_in, t, h, wd = x.shape
    c_out, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.zeros((c_in, t + 2 * pt, h + 2 * ph, wd + 2 * pw))
    xp[:, pt : pt + t, ph : ph + h, pw : pw + wd] = x
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((c_out, to, ho, wo))
    for o in range(c_out):
        for a in range(to):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(c_in):
                        for da in range(kt):
                            for di in range(kh):
                                for dj in range(kw):
                                    acc += (
                                        w[o, c, da, di, dj]
                                        * xp[c, a * st + da, i * sh + di, j * sw + dj]
                                    )
                    out[o, a, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def conv3d_transposed(x, w, b, stride=(1, 1, 1), padding=(0, 0, 0), output_padding=(0, 0, 0)):
    """x[C_in,T,H,W], w[C_in,C_out,kT,kH,kW]."""
    c_in, t, h, wd = x.shape
    _, c_out, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    ot, oh, ow = output_padding
    buf = np.zeros((c_out, (t - 1) * st + kt, (h - 1) * sh + kh, (wd - 1) * sw + kw))
    for c in range(c_in):
        for a in range(t):
            for i in range(h):
                for j in range(wd):
                    for o in range(c_out):
                        for da in range(kt):
                            for di in range(kh):
                                for dj in range(kw):
                                    buf[o, a * st + da, i * sh + di, j * sw + dj] += (
                                        w[c, o, da, di, dj] * x[c, a, i, j]
                                    )
    t_out = (t - 1) * st - 2 * pt + kt + ot
    h_out = (h - 1) * sh - 2 * ph + kh + oh
    w_out = (wd - 1) * sw - 2 * pw + kw + ow
    out = np.zeros((c_out, t_out, h_out, w_out))
    lt = min(buf.shape[1], pt + t_out)
    lh = min(buf.shape[2], ph + h_out)
    lw = min(buf.shape[3], pw + w_out)
    out[:, : lt - pt, : lh - ph, : lw - pw] = buf[:, pt:lt, ph:lh, pw:lw]
    if b is not None:
        out = out + b[:, None, None, None]
    return out


def avg_pool_hw(x):
    """x[C,T,H,W] -> mean over non-overlapping 2x2 H/W windows."""
    c, t, h, w = x.shape
    out = np.zeros((c, t, h // 2, w // 2))
    for ci in range(c):
        for ti in range(t):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ci, ti, i, j] = x[ci, ti, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean()
    return out


# -- normalization ------------------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize each column (frame) of x[D,N] over the channel axis."""
    d, n = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for t in range(n):
        col = x[:, t]
        mu = col.mean()
        var = ((col - mu) ** 2).mean()
        out[:, t] = gamma * (col - mu) / math.sqrt(var + eps) + beta
    return out


def grn(x, gamma, beta, eps=1e-6):
    """Global response normalization over x[D,N]."""
    d, n = x.shape
    g = np.array([math.sqrt(float((x[c] ** 2).sum())) for c in range(d)])
    mean_g = g.mean()
    out = np.zeros_like(x, dtype=np.float64)
    for c in range(d):
        nd = g[c] / (mean_g + eps)
        out[c] = gamma[c] * (x[c] * nd) + beta[c] + x[c]
    return out


# -- lapped transform ------------------------------------------------------------------


def mdct_window(m: int) -> np.ndarray:
    return np.array([math.sin(math.pi / (2 * m) * (j + 0.5)) for j in range(2 * m)])


def mdct_frame(frame: np.ndarray, m: int) -> np.ndarray:
    """Direct O(M*2M) windowed DCT-IV of one 2M-sample frame."""
    w = mdct_window(m)
    out = np.zeros(m)
    for k in range(m):
        acc = 0.0
        for j in range(2 * m):
            acc += w[j] * frame[j] * math.cos(math.pi / m * (j + 0.5 + m / 2.0) * (k + 0.5))
        out[k] = acc
    return out


def imdct_frame(coeffs: np.ndarray, m: int) -> np.ndarray:
    w = mdct_window(m)
    out = np.zeros(2 * m)
    for j in range(2 * m):
        acc = 0.0
        for k in range(m):
            acc += coeffs[k] * math.cos(math.pi / m * (j + 0.5 + m / 2.0) * (k + 0.5))
        out[j] = 2.0 / m * w[j] * acc
    return out


def mdct(samples: np.ndarray, m: int) -> np.ndarray:
    """Zero-pad to whole hops, reflect-pad M per side, then frame-wise transform."""
    padded_len = int(math.ceil(len(samples) / m)) * m
    x = np.zeros(padded_len)
    x[: len(samples)] = samples
    x = np.pad(x, m, mode="reflect")
    n_frames = padded_len // m + 1
    out = np.zeros((m, n_frames))
    for t in range(n_frames):
        out[:, t] = mdct_frame(x[t * m : t * m + 2 * m], m)
    return out


def imdct(spec: np.ndarray) -> np.ndarray:
    """Overlap-add synthesis; drops the M-sample analysis padding per side."""
    m, n_frames = spec.shape
    buf = np.zeros((n_frames + 1) * m)
    for t in range(n_frames):
        buf[t * m : t * m + 2 * m] += imdct_frame(spec[:, t], m)
    return buf[m : n_frames * m]


# -- quantization -------------------------------------------------------------------


def rvq_quantize(latent: np.ndarray, codebooks: list[np.ndarray]):
    """Greedy per-stage nearest codeword. latent[D,N], codebooks Q x [K,D]."""
    d, n = latent.shape
    q = len(codebooks)
    indices = np.zeros((q, n), dtype=np.int64)
    quantized = np.zeros_like(latent, dtype=np.float64)
    energies = np.zeros(q)
    residual = latent.astype(np.float64).copy()
    for s, book in enumerate(codebooks):
        for t in range(n):
            best, best_d = 0, math.inf
            for k in range(book.shape[0]):
                dist = float(((residual[:, t] - book[k]) ** 2).sum())
                if dist < best_d:
                    best, best_d = k, dist
            indices[s, t] = best
            quantized[:, t] += book[best]
            residual[:, t] -= book[best]
        energies[s] = float((residual**2).sum(axis=0).mean())
    return indices, quantized, energies


# -- metrics -----------------------------------------------------------------------


def ssnr(clean: np.ndarray, decoded: np.ndarray, seg_len: int = 320) -> float:
    n = min(len(clean), len(decoded))
    clean, decoded = clean[:n], decoded[:n]
    n_seg = n // seg_len
    vals = []
    for i in range(n_seg):
        s = clean[i * seg_len : (i + 1) * seg_len]
        e = s - decoded[i * seg_len : (i + 1) * seg_len]
        ps, pe = float((s**2).sum()), float((e**2).sum())
        if ps == 0.0:
            db = -10.0
        elif pe == 0.0:
            db = 35.0
        else:
            db = 10.0 * math.log10(ps / pe)
        vals.append(min(35.0, max(-10.0, db)))
    return float(np.mean(vals))


# -- bit packing --------------------------------------------------------------------


def pack_bits(values: list[int], width: int) -> bytes:
    bits = []
    for v in values:
        for i in range(width - 1, -1, -1):
            bits.append((v >> i) & 1)
    while len(bits) % 8:
        bits.append(0)
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for bit in bits[i : i + 8]:
            byte = (byte << 1) | bit
        out.append(byte)
    return bytes(out)


def unpack_bits(data: bytes, width: int, count: int) -> list[int]:
    bits = []
    for byte in data:
        for i in range(7, -1, -1):
            bits.append((byte >> i) & 1)
    out = []
    for i in range(count):
        v = 0
        for bit in bits[i * width : (i + 1) * width]:
            v = (v << 1) | bit
        out.append(v)
    return out
