"""Losses, the AdamW optimizer, the training loop, and the gradient audit.

Training minimizes a composite objective

    total = l_mdct + l_mel + l_quant + lambda_i * l_image + lambda_d * l_distill

where the image and distillation terms are active only when the scenario
builds the vision modules. Codebooks learn by exponential moving averages
after each optimizer step, outside the gradient graph.

Checkpoints are a directory of three files: model.vnscparm (parameters
plus codebooks), optim.vnscparm (moments and counters), and config.txt.
Every random choice is derived from (seed, purpose, step), so resuming
from a checkpoint continues the exact run that produced it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from . import tensor as T
from .config import VnscConfig, load_config, save_config
from .data import ToyItem
from .errors import ConfigurationError, NumericalError
from .fusion import distillation_loss
from .gradcheck import GradCheckReport, check_gradients
from .layers import BatchNorm3d
from .model import VnscModel
from .rvq import (codebook_update_ema, init_codebooks, quantization_loss,
                  quantize_straight_through)
from .serialization import load_parameters, save_parameters
from .tensor import Tensor
from .vision import align_video, image_reconstruction_loss

MODEL_FILE = "model.vnscparm"
OPTIM_FILE = "optim.vnscparm"
CONFIG_FILE = "config.txt"


# -- losses ---------------------------------------------------------------------------


@dataclass
class LossReport:
    step: int
    lr: float
    l_mdct: float
    l_mel: float
    l_quant: float
    l_image: float
    l_distill: float
    total: float

    def line(self) -> str:
        return (f"step={self.step} lr={self.lr:.6g} l_mdct={self.l_mdct:.6f} "
                f"l_mel={self.l_mel:.6f} l_quant={self.l_quant:.6f} "
                f"l_image={self.l_image:.6f} l_distill={self.l_distill:.6f} "
                f"total={self.total:.6f}")


def reconstruction_losses(decoded_spec: Tensor, target_spec: np.ndarray,
                          target_wave: np.ndarray, cfg: VnscConfig):
    """(l_mdct, l_mel) between a decoded spectrum and the clean targets.

    The decoder emits a whole number of downsampling blocks, so its output
    can be a few frames shorter than the analysis of the raw crop; targets
    are trimmed to the decoded extent rather than padding the decode.
    """
    n_dec = decoded_spec.shape[1]
    if n_dec > target_spec.shape[1]:
        raise ConfigurationError(
            f"decoded {n_dec} frames from a {target_spec.shape[1]}-frame target")
    ref = Tensor(target_spec[:, :n_dec].astype(decoded_spec.dtype))
    diff = T.sub(decoded_spec, ref)
    l_mdct = T.tmean(T.mul(diff, diff))

    decoded_wave = dsp.imdct_t(decoded_spec)
    n_samples = decoded_wave.shape[0]
    mel_ref = dsp.mel_spectrogram(target_wave[:n_samples], n_fft=cfg.mel_n_fft,
                                  hop=cfg.mel_hop, n_mels=cfg.mel_bands)
    mel_dec = dsp.mel_spectrogram_t(decoded_wave, n_fft=cfg.mel_n_fft,
                                    hop=cfg.mel_hop, n_mels=cfg.mel_bands)
    l_mel = T.tmean(T.absolute(T.sub(mel_dec, Tensor(mel_ref))))
    return l_mdct, l_mel


def composite_loss(l_mdct: Tensor, l_mel: Tensor, l_quant: Tensor,
                   l_image: Tensor | None = None, l_distill: Tensor | None = None,
                   lambda_i: float = 0.0, lambda_d: float = 0.0) -> Tensor:
    """Weighted sum of the training terms; absent terms contribute nothing."""
    total = T.add(T.add(l_mdct, l_mel), l_quant)
    if l_image is not None and lambda_i != 0.0:
        total = T.add(total, T.mul(l_image, lambda_i))
    if l_distill is not None and lambda_d != 0.0:
        total = T.add(total, T.mul(l_distill, lambda_d))
    return total


# -- optimizer ------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    Decay applies to every parameter each step, whether or not the step's
    graph produced a gradient for it; a missing gradient counts as zero.
    """

    def __init__(self, named_params, lr: float = 2e-4, beta1: float = 0.8,
                 beta2: float = 0.99, eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(named_params)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad.astype(p.data.dtype)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)

    def state_dict(self) -> dict:
        state = {"adamw.t": np.array([self.t], dtype=np.int64)}
        for name, _ in self.params:
            state[f"{name}.m"] = self.m[name]
            state[f"{name}.v"] = self.v[name]
        return state

    def load_state_dict(self, state: dict) -> None:
        expected = {f"{name}{suffix}" for name, _ in self.params for suffix in (".m", ".v")}
        expected.add("adamw.t")
        if expected != set(state):
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigurationError(
                f"optimizer state mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
        self.t = int(state["adamw.t"][0])
        for name, p in self.params:
            for store, suffix in ((self.m, ".m"), (self.v, ".v")):
                arr = np.asarray(state[f"{name}{suffix}"], dtype=p.data.dtype)
                if arr.shape != p.shape:
                    raise ConfigurationError(f"moment shape mismatch for {name}{suffix}")
                store[name][:] = arr


# -- trainer --------------------------------------------------------------------------


class Trainer:
    """Mini-batch trainer over (waveform, lip-frames) items.

    Dataset items are `ToyItem`s or (Waveform, frames-or-None, fps) tuples.
    Batch order, crop offsets, and codebook reseeding are all functions of
    (config seed, step), so a restored checkpoint reproduces the original
    run bit for bit.
    """

    def __init__(self, model: VnscModel, dataset: list, cfg: VnscConfig | None = None):
        self.model = model
        self.cfg = cfg or model.cfg
        if not dataset:
            raise ConfigurationError("training needs at least one item")
        self.items = [self._as_item(it) for it in dataset]
        if self.cfg.scenario != "audio":
            for wave, frames, _ in self.items:
                if frames is None:
                    raise ConfigurationError(
                        f"{self.cfg.scenario} training needs lip frames for every item")
        self.optimizer = AdamW(model.trainable_parameters(), lr=self.cfg.lr,
                               beta1=self.cfg.beta1, beta2=self.cfg.beta2,
                               weight_decay=self.cfg.weight_decay)
        self.global_step = 0

    @staticmethod
    def _as_item(item):
        if isinstance(item, ToyItem):
            return item.wave, item.frames, item.fps
        wave, frames = item[0], item[1]
        fps = item[2] if len(item) > 2 else 60
        return wave, frames, fps

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.items) // self.cfg.batch_size)

    @property
    def epoch(self) -> int:
        return self.global_step // self.steps_per_epoch

    def current_lr(self) -> float:
        return self.cfg.lr * self.cfg.lr_decay ** self.epoch

    def _batch_indices(self) -> np.ndarray:
        order = np.random.default_rng([self.cfg.seed, 7, self.epoch]).permutation(len(self.items))
        pos = self.global_step % self.steps_per_epoch
        return order[pos * self.cfg.batch_size:(pos + 1) * self.cfg.batch_size]

    def _crop(self, wave: dsp.Waveform, rng: np.random.Generator) -> tuple[np.ndarray, int]:
        """Random fixed-length window; the start offset keeps video alignable."""
        want = self.cfg.crop_frames * dsp.FRAME_SHIFT
        samples = np.asarray(wave.samples, dtype=np.float64)
        if samples.size >= want:
            start = int(rng.integers(0, samples.size - want + 1))
            return samples[start:start + want], start
        return np.pad(samples, (0, want - samples.size)), 0

    def _item_losses(self, wave, frames, fps, rng):
        """Loss tensors plus the latent/indices needed for the codebook update."""
        cfg = self.cfg
        crop, start = self._crop(wave, rng)
        spec = dsp.mdct(crop)
        spec_t = Tensor(spec.astype(np.float32))

        visual = None
        target_img = None
        if self.model.has_vision():
            pix = np.asarray(frames)
            if pix.dtype == np.uint8:
                pix = pix.astype(np.float32) / 255.0
            aligned = align_video(pix, spec.shape[1], source_fps=fps,
                                  start_time=start / dsp.SAMPLE_RATE)
            target_img = Tensor(aligned)
            visual = self.model.analyzer(Tensor(aligned))

        latent, hidden = self.model.encode(spec_t, visual if cfg.scenario == "va" else None)
        st, indices, _ = quantize_straight_through(latent, self.model.books)
        decoded = self.model.decode(st)

        l_mdct, l_mel = reconstruction_losses(decoded, spec, crop, cfg)
        l_quant = quantization_loss(latent, st.data)
        l_image = l_distill = None
        if self.model.has_vision():
            l_image = image_reconstruction_loss(target_img, self.model.synthesizer(visual))
            if cfg.scenario == "vua":
                l_distill = distillation_loss(hidden, self.model.fusion(hidden, visual))
        total = composite_loss(l_mdct, l_mel, l_quant, l_image, l_distill,
                               cfg.lambda_i, cfg.lambda_d)
        terms = {"l_mdct": l_mdct, "l_mel": l_mel, "l_quant": l_quant,
                 "l_image": l_image, "l_distill": l_distill, "total": total}
        return terms, latent.data, indices

    def _ensure_books(self, batch) -> None:
        if self.model.books is not None:
            return
        self.model.eval()
        latents = []
        for wave, frames, fps in batch:
            rng = np.random.default_rng([self.cfg.seed, 13, 0])
            crop, start = self._crop(wave, rng)
            spec_t = Tensor(dsp.mdct(crop).astype(np.float32))
            visual = None
            if self.cfg.scenario == "va":
                pix = np.asarray(frames)
                if pix.dtype == np.uint8:
                    pix = pix.astype(np.float32) / 255.0
                visual = self.model.analyzer(Tensor(align_video(
                    pix, spec_t.shape[1], source_fps=fps,
                    start_time=start / dsp.SAMPLE_RATE)))
            latent, _ = self.model.encode(spec_t, visual)
            latents.append(latent.data)
        self.model.books = init_codebooks(np.concatenate(latents, axis=1),
                                          self.cfg.rvq_stages, self.cfg.rvq_entries,
                                          self.cfg.seed)

    def train_step(self) -> LossReport:
        cfg = self.cfg
        batch = [self.items[i] for i in self._batch_indices()]
        self._ensure_books(batch)
        self.model.train(True)
        self.optimizer.zero_grad()
        lr = self.current_lr()

        sums = {k: 0.0 for k in ("l_mdct", "l_mel", "l_quant", "l_image", "l_distill", "total")}
        batch_total = None
        all_latents, all_indices = [], []
        for k, (wave, frames, fps) in enumerate(batch):
            rng = np.random.default_rng([cfg.seed, 13, self.global_step, k])
            terms, latent, indices = self._item_losses(wave, frames, fps, rng)
            for name, t in terms.items():
                if t is not None:
                    value = float(t.data)
                    if not np.isfinite(value):
                        raise NumericalError(
                            f"{name} became non-finite at step {self.global_step}")
                    sums[name] += value
            item_total = terms["total"]
            batch_total = item_total if batch_total is None else T.add(batch_total, item_total)
            all_latents.append(latent)
            all_indices.append(indices)

        T.mul(batch_total, 1.0 / len(batch)).backward()
        self.optimizer.step(lr)
        codebook_update_ema(self.model.books, np.concatenate(all_latents, axis=1),
                            np.concatenate(all_indices, axis=1), decay=cfg.ema_decay,
                            rng=np.random.default_rng([cfg.seed, 11, self.global_step]))
        self.optimizer.zero_grad()

        report = LossReport(step=self.global_step, lr=lr,
                            **{k: v / len(batch) for k, v in sums.items()})
        self.global_step += 1
        return report

    def train(self, n_steps: int | None = None, log=None) -> list[LossReport]:
        if n_steps is None:
            n_steps = self.cfg.epochs * self.steps_per_epoch - self.global_step
        reports = []
        for _ in range(max(0, n_steps)):
            report = self.train_step()
            reports.append(report)
            if log is not None:
                log(report)
        return reports

    # -- evaluation ---------------------------------------------------------------

    def evaluate(self, items=None) -> dict:
        """Whole-utterance codec pass; mean spectral error and segmental SNR."""
        items = self.items if items is None else [self._as_item(it) for it in items]
        mdct_errs, snrs = [], []
        for wave, frames, fps in items:
            lips = frames if self.cfg.scenario == "va" else None
            indices = self.model.encode_wave(wave, lips, fps)
            decoded = self.model.decode_wave(indices)
            spec = dsp.mdct(wave.samples)
            dec_spec = dsp.mdct(decoded.samples)
            n = min(spec.shape[1], dec_spec.shape[1])
            mdct_errs.append(float(np.mean((spec[:, :n] - dec_spec[:, :n]) ** 2)))
            snrs.append(dsp.ssnr(wave.samples, decoded.samples))
        return {"l_mdct": float(np.mean(mdct_errs)), "ssnr": float(np.mean(snrs))}

    # -- checkpoints --------------------------------------------------------------

    def save_checkpoint(self, dirpath) -> None:
        os.makedirs(dirpath, exist_ok=True)
        self.model.save(os.path.join(dirpath, MODEL_FILE))
        state = self.optimizer.state_dict()
        state["trainer.step"] = np.array([self.global_step], dtype=np.int64)
        save_parameters(os.path.join(dirpath, OPTIM_FILE), state)
        save_config(self.cfg, os.path.join(dirpath, CONFIG_FILE))

    @staticmethod
    def restore(dirpath, dataset) -> "Trainer":
        cfg = load_config(os.path.join(dirpath, CONFIG_FILE))
        model = VnscModel(cfg)
        model.load(os.path.join(dirpath, MODEL_FILE))
        trainer = Trainer(model, dataset, cfg)
        state = dict(load_parameters(os.path.join(dirpath, OPTIM_FILE)))
        trainer.global_step = int(state.pop("trainer.step")[0])
        trainer.optimizer.load_state_dict(state)
        return trainer


def load_model(dirpath) -> VnscModel:
    """Build and fill a model from a checkpoint directory; no optimizer state."""
    cfg = load_config(os.path.join(dirpath, CONFIG_FILE))
    model = VnscModel(cfg)
    model.load(os.path.join(dirpath, MODEL_FILE))
    return model


# -- gradient audit -------------------------------------------------------------------


@dataclass
class AuditSection:
    name: str
    report: GradCheckReport

    @property
    def ok(self) -> bool:
        return self.report.ok


@dataclass
class AuditReport:
    sections: list[AuditSection] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.sections)

    def summary(self) -> str:
        lines = []
        for s in self.sections:
            lines.append(f"== {s.name} ==")
            lines.append(s.report.summary())
        lines.append("excluded from exactness (straight-through approximations):")
        lines.extend(f"  {e}" for e in self.excluded)
        return "\n".join(lines)


def audit_config() -> VnscConfig:
    """Miniature fused setup small enough for exhaustive finite differences.

    Loss weights are set to one: the audit verifies the chain rule through
    every module, and unit weights keep gradient magnitudes well above
    finite-difference noise (production weights only rescale them).
    """
    return VnscConfig.miniature("vua", d_v=4, vision_channels=(3, 4, 5), image_size=16,
                                lambda_i=1.0, lambda_d=1.0)


def audit_gradients(cfg: VnscConfig | None = None, seed: int = 0, rel_tol: float = 1e-3,
                    max_entries: int = 3, h: float = 1e-6) -> AuditReport:
    """Finite-difference audit of every analytically-backed gradient path.

    Three sections cover the model: decoder parameters under the full
    composite loss (the quantizer sits upstream of them, so their gradients
    are exact); encoder-side parameters under the losses that do not cross
    the quantizer; and all parameters with the quantizer bypassed. What
    remains — reconstruction gradients crossing the quantizer into the
    encoder — is exactly the straight-through approximation, which is
    listed as excluded rather than checked.
    """
    cfg = cfg or audit_config()
    model = VnscModel(cfg).initialize(seed)
    model.train(True)
    for mod in model.modules():
        if isinstance(mod, BatchNorm3d):
            mod.update_stats = False
    # Freshly initialized biases are zero, and upstream relus emit exact zeros,
    # so some units sit exactly on a kink where one-sided differences disagree
    # with the (correct) subgradient. Jitter every parameter into general
    # position so the comparison measures the chain rule, not the kink.
    jitter = np.random.default_rng([seed, 3])
    for _, p in model.trainable_parameters():
        p.data += (0.02 * jitter.standard_normal(p.shape)).astype(p.data.dtype)

    rng = np.random.default_rng([seed, 5])
    n = cfg.crop_frames
    spec = (0.8 * rng.standard_normal((cfg.n_spectral, n))).astype(np.float32)
    wave = dsp.imdct(spec)
    frames = rng.uniform(0.0, 1.0, size=(max(2, n // 8), cfg.image_size,
                                         cfg.image_size)).astype(np.float32)
    aligned = align_video(frames, n)
    target_img = Tensor(aligned)

    latent0, _ = model.encode(Tensor(spec))  # stat updates are already off
    model.books = init_codebooks(latent0.data, cfg.rvq_stages, cfg.rvq_entries, seed)

    def forward(bypass_quantizer: bool):
        visual = model.analyzer(target_img)
        latent, hidden = model.encode(Tensor(spec), None)
        if bypass_quantizer:
            decoded = model.decode(latent)
            l_quant = None
        else:
            st, _, _ = quantize_straight_through(latent, model.books)
            decoded = model.decode(st)
            l_quant = quantization_loss(latent, st.data)
        l_mdct, l_mel = reconstruction_losses(decoded, spec, wave, cfg)
        l_image = image_reconstruction_loss(target_img, model.synthesizer(visual))
        l_distill = distillation_loss(hidden, model.fusion(hidden, visual))
        return l_mdct, l_mel, l_quant, l_image, l_distill

    def full_loss():
        l_mdct, l_mel, l_quant, l_image, l_distill = forward(bypass_quantizer=False)
        return composite_loss(l_mdct, l_mel, l_quant, l_image, l_distill,
                              cfg.lambda_i, cfg.lambda_d)

    def encoder_side_loss():
        _, _, l_quant, l_image, l_distill = forward(bypass_quantizer=False)
        return T.add(l_quant, T.add(T.mul(l_image, cfg.lambda_i),
                                    T.mul(l_distill, cfg.lambda_d)))

    def bypass_loss():
        l_mdct, l_mel, _, l_image, l_distill = forward(bypass_quantizer=True)
        return composite_loss(l_mdct, l_mel, Tensor(np.zeros(())), l_image, l_distill,
                              cfg.lambda_i, cfg.lambda_d)

    def named(module, prefix):
        return [(f"{prefix}.{n}", p) for n, p in module.named_parameters() if p.trainable]

    decoder_params = named(model.decoder, "decoder")
    encoder_side = (named(model.encoder, "encoder") + named(model.analyzer, "analyzer")
                    + named(model.fusion, "fusion") + named(model.synthesizer, "synthesizer"))
    everything = decoder_params + encoder_side

    report = AuditReport(excluded=[
        "encoder/analyzer/fusion parameters under l_mdct and l_mel with the quantizer "
        "in the loop: those gradients exist only through the straight-through estimator",
    ])
    for name, loss_fn, params in (
            ("decoder under the full composite loss", full_loss, decoder_params),
            ("encoder side under non-crossing losses", encoder_side_loss, encoder_side),
            ("all parameters with the quantizer bypassed", bypass_loss, everything)):
        report.sections.append(AuditSection(
            name, check_gradients(loss_fn, params, rel_tol=rel_tol, h=h,
                                  max_entries=max_entries, seed=seed)))
    return report
