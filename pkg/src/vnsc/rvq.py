"""Residual vector quantization: greedy stage-wise coding, EMA codebook
learning, and the commitment loss that trains the encoder.

Each stage picks the codeword nearest (squared L2, ties to the lowest
index) to the running residual; the quantized latent is the sum of the
selected codewords. Codebooks learn outside the gradient graph through
exponential-moving-average counts and sums; the encoder receives gradients
through a straight-through estimator plus the commitment loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


@dataclass
class RvqCodebooks:
    codewords: list[np.ndarray]          # Q arrays of [K, D] float32
    ema_counts: list[np.ndarray] = field(default_factory=list)
    ema_sums: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.codewords:
            raise ConfigurationError("need at least one quantizer stage")
        k, d = self.codewords[0].shape
        for book in self.codewords:
            if book.ndim != 2 or book.shape != (k, d):
                raise ConfigurationError("all stages must share one [K, D] codebook shape")
            if not np.isfinite(book).all():
                raise ConfigurationError("codebooks must be finite")
        if k < 1:
            raise ConfigurationError("empty codebook")
        if not self.ema_counts:
            self.ema_counts = [np.ones(k, dtype=np.float32) for _ in self.codewords]
        if not self.ema_sums:
            self.ema_sums = [b.astype(np.float32).copy() for b in self.codewords]

    @property
    def stages(self) -> int:
        return len(self.codewords)

    @property
    def entries(self) -> int:
        return self.codewords[0].shape[0]

    @property
    def dim(self) -> int:
        return self.codewords[0].shape[1]

    @property
    def bits_per_frame(self) -> int:
        return self.stages * max(1, int(np.ceil(np.log2(self.entries))))

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for q in range(self.stages):
            state[f"rvq.{q}.codewords"] = self.codewords[q]
            state[f"rvq.{q}.ema_counts"] = self.ema_counts[q]
            state[f"rvq.{q}.ema_sums"] = self.ema_sums[q]
        return state

    @staticmethod
    def from_state(state: dict[str, np.ndarray], stages: int) -> "RvqCodebooks":
        try:
            return RvqCodebooks(
                codewords=[np.asarray(state[f"rvq.{q}.codewords"], dtype=np.float32)
                           for q in range(stages)],
                ema_counts=[np.asarray(state[f"rvq.{q}.ema_counts"], dtype=np.float32)
                            for q in range(stages)],
                ema_sums=[np.asarray(state[f"rvq.{q}.ema_sums"], dtype=np.float32)
                          for q in range(stages)])
        except KeyError as e:
            raise ConfigurationError(f"checkpoint lacks quantizer table {e}") from e


def init_codebooks(latent: np.ndarray, stages: int, entries: int, seed: int,
                   refine_iters: int = 4) -> RvqCodebooks:
    """Fit each stage's codebook to the residuals of the previous stages:
    k-means++ seeding (jittered resampling when there are fewer vectors than
    entries) followed by Lloyd mean updates. The mean updates matter beyond
    fit quality: once every codeword is the mean of its assigned residuals,
    quantizing the fitting data cannot increase the mean residual energy."""
    d, n = latent.shape
    rng = np.random.default_rng([seed, 0x5EED])
    residual = latent.astype(np.float64).copy()
    books = []
    for _ in range(stages):
        pts = residual.T
        book = _kmeanspp(pts, entries, rng)
        for _ in range(refine_iters):
            assign = np.argmin(_pairwise_sq(book, residual), axis=0)
            for k in range(entries):
                members = pts[assign == k]
                if len(members):  # empty clusters keep their seed
                    book[k] = members.mean(axis=0)
        stored = book.astype(np.float32)
        books.append(stored)
        # chain residuals through the stored (rounded) book so later stages
        # fit exactly the residuals quantization will produce
        b64 = stored.astype(np.float64)
        residual = residual - b64[np.argmin(_pairwise_sq(b64, residual), axis=0)].T
    return RvqCodebooks(codewords=books)


def _kmeanspp(pts: np.ndarray, entries: int, rng: np.random.Generator) -> np.ndarray:
    n, d = pts.shape
    chosen = np.empty((entries, d))
    chosen[0] = pts[rng.integers(n)]
    d2 = ((pts - chosen[0]) ** 2).sum(axis=1)
    for k in range(1, entries):
        total = float(d2.sum())
        if total <= 0.0:
            # fewer distinct points than entries: recycle points with a
            # small jitter so every codeword stays near the data
            scale = 1e-3 * (float(pts.std()) + 1e-6)
            idx = rng.integers(n)
            chosen[k] = pts[idx] + scale * rng.standard_normal(d)
        else:
            idx = rng.choice(n, p=d2 / total)
            chosen[k] = pts[idx]
        d2 = np.minimum(d2, ((pts - chosen[k]) ** 2).sum(axis=1))
    return chosen


def _pairwise_sq(book: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Squared distances [K, N] between codewords [K, D] and columns of [D, N]."""
    return ((book**2).sum(axis=1, keepdims=True)
            - 2.0 * book @ residual
            + (residual**2).sum(axis=0, keepdims=True))


def rvq_quantize(latent: np.ndarray, books: RvqCodebooks):
    """Greedy stage-wise quantization.

    Returns (indices [Q, N] int64, quantized [D, N], energies [Q]) where
    energies[q] is the mean squared residual norm per frame after stage q.
    """
    if latent.shape[0] != books.dim:
        raise ConfigurationError(
            f"latent dim {latent.shape[0]} != codebook dim {books.dim}")
    d, n = latent.shape
    residual = latent.astype(np.float64).copy()
    indices = np.zeros((books.stages, n), dtype=np.int64)
    quantized = np.zeros((d, n))
    energies = np.zeros(books.stages)
    for q, book in enumerate(books.codewords):
        book64 = book.astype(np.float64)
        idx = np.argmin(_pairwise_sq(book64, residual), axis=0)
        picked = book64[idx].T
        indices[q] = idx
        quantized += picked
        residual -= picked
        energies[q] = float((residual**2).sum(axis=0).mean())
    return indices, quantized, energies


def rvq_dequantize(indices: np.ndarray, books: RvqCodebooks) -> np.ndarray:
    """Sum of the indexed codewords, [D, N]."""
    indices = np.asarray(indices)
    if indices.ndim != 2 or indices.shape[0] != books.stages:
        raise ConfigurationError(
            f"expected indices [stages={books.stages}, frames], got {indices.shape}")
    if indices.min() < 0 or indices.max() >= books.entries:
        raise ConfigurationError(
            f"index out of range [0, {books.entries}): {int(indices.min())}..{int(indices.max())}")
    out = np.zeros((books.dim, indices.shape[1]))
    for q, book in enumerate(books.codewords):
        out += book.astype(np.float64)[indices[q]].T
    return out


def quantize_straight_through(latent: Tensor, books: RvqCodebooks):
    """Quantize a latent tensor; the result forwards the quantized values and
    routes gradients straight through to the latent."""
    indices, quantized, energies = rvq_quantize(latent.data, books)
    return T.straight_through(latent, quantized), indices, energies


def quantization_loss(latent: Tensor, quantized: np.ndarray) -> Tensor:
    """Commitment loss: mean squared distance of the latent to its (fixed)
    quantization; gradient flows to the latent only."""
    diff = T.sub(latent, Tensor(np.asarray(quantized, dtype=latent.dtype)))
    return T.tmean(T.mul(diff, diff))


def codebook_update_ema(books: RvqCodebooks, latent: np.ndarray, indices: np.ndarray,
                        decay: float = 0.99, rng: np.random.Generator | None = None,
                        dead_threshold: float = 1e-3) -> None:
    """One EMA step on every stage from a batch of latent columns.

    Stage q is updated with the residuals that were its quantization input,
    reconstructed from the currently stored codewords. Codewords whose EMA
    count falls below `dead_threshold` are re-seeded from random batch
    vectors (seeded rng required for that path to stay deterministic).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    residual = latent.astype(np.float64).copy()
    n = residual.shape[1]
    for q in range(books.stages):
        idx = indices[q]
        picked = books.codewords[q].astype(np.float64)[idx].T
        one_hot_counts = np.bincount(idx, minlength=books.entries).astype(np.float64)
        sums = np.zeros((books.entries, books.dim))
        np.add.at(sums, idx, residual.T)
        books.ema_counts[q][:] = (decay * books.ema_counts[q]
                                  + (1.0 - decay) * one_hot_counts).astype(np.float32)
        books.ema_sums[q][:] = (decay * books.ema_sums[q]
                                + (1.0 - decay) * sums).astype(np.float32)
        books.codewords[q][:] = (books.ema_sums[q]
                                 / np.maximum(books.ema_counts[q], 1e-7)[:, None])
        dead = books.ema_counts[q] < dead_threshold
        for k in np.nonzero(dead)[0]:
            vec = residual[:, rng.integers(n)].astype(np.float32)
            books.codewords[q][k] = vec
            books.ema_sums[q][k] = vec
            books.ema_counts[q][k] = 1.0
        residual -= picked
