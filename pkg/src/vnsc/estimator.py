"""Scikit-learn style facade over the codec: fit trains, transform encodes."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import dsp
from .config import VnscConfig
from .data import ToyItem
from .errors import UsageError
from .model import VnscModel, bitrate_bps
from .training import Trainer


def _as_item(x) -> tuple:
    """Coerce one dataset entry to (Waveform, frames | None, fps)."""
    if isinstance(x, ToyItem):
        return x.wave, x.frames, float(x.fps)
    if isinstance(x, dsp.Waveform):
        return x, None, 60.0
    if isinstance(x, np.ndarray):
        if x.ndim != 1:
            raise UsageError(f"bare arrays must be 1-D waveforms, got shape {x.shape}")
        return dsp.Waveform(x.astype(np.float32)), None, 60.0
    if isinstance(x, (tuple, list)) and len(x) in (2, 3):
        wave = x[0] if isinstance(x[0], dsp.Waveform) else dsp.Waveform(
            np.asarray(x[0], dtype=np.float32))
        fps = float(x[2]) if len(x) == 3 else 60.0
        return wave, x[1], fps
    raise UsageError(f"cannot interpret {type(x).__name__} as a codec item")


class VnscCodec(BaseEstimator, TransformerMixin):
    """Neural speech codec with optional lip-image fusion.

    fit trains the model on a list of utterances, transform encodes each
    utterance to quantizer indices [Q, N'], and inverse_transform decodes
    indices back to waveforms.  Items may be ToyItem instances, Waveform
    objects, 1-D sample arrays, or (wave, frames[, fps]) tuples; the va
    scenario needs the lip frames both to fit and to transform.

    Parameters
    ----------
    scenario : "audio", "va", or "vua"
    miniature : use the small architecture (fast, for tests and demos)
    n_steps : optimizer steps taken by fit
    seed : initialization and data-order seed
    config : full VnscConfig; overrides scenario/miniature/seed when given
    """

    def __init__(self, scenario: str = "audio", miniature: bool = True,
                 n_steps: int = 50, seed: int = 0, config: VnscConfig | None = None):
        self.scenario = scenario
        self.miniature = miniature
        self.n_steps = n_steps
        self.seed = seed
        self.config = config

    def _resolved_config(self) -> VnscConfig:
        if self.config is not None:
            self.config.validate()
            return self.config
        make = VnscConfig.miniature if self.miniature else VnscConfig.for_scenario
        return make(self.scenario, seed=self.seed)

    def fit(self, X, y=None):
        """Train encoder, quantizer, and decoder on the utterances in X."""
        items = [_as_item(x) for x in X]
        cfg = self._resolved_config()
        model = VnscModel(cfg).initialize(cfg.seed)
        trainer = Trainer(model, items, cfg)
        self.reports_ = trainer.train(n_steps=self.n_steps)
        self.model_ = model
        self.config_ = cfg
        return self

    def transform(self, X) -> list:
        """Encode each utterance to an index array [Q, N']."""
        check_is_fitted(self)
        out = []
        for x in X:
            wave, frames, fps = _as_item(x)
            lips = frames if self.config_.scenario == "va" else None
            out.append(self.model_.encode_wave(wave, lips, fps))
        return out

    def inverse_transform(self, Xt) -> list:
        """Decode index arrays back to Waveform objects."""
        check_is_fitted(self)
        return [self.model_.decode_wave(np.asarray(indices)) for indices in Xt]

    def score(self, X, y=None) -> float:
        """Mean segmental SNR of the decoded utterances, in dB."""
        check_is_fitted(self)
        snrs = []
        for x in X:
            wave, frames, fps = _as_item(x)
            lips = frames if self.config_.scenario == "va" else None
            decoded = self.model_.decode_wave(self.model_.encode_wave(wave, lips, fps))
            snrs.append(dsp.ssnr(wave.samples, decoded.samples))
        return float(np.mean(snrs))

    def bitrate(self) -> float:
        """Coded bitrate in bits per second."""
        check_is_fitted(self)
        return bitrate_bps(self.config_, self.model_.require_books())
