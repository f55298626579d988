"""Model/training configuration and its key=value file format.

A config file is one `key=value` pair per line; `#` starts a comment.
Every field of VnscConfig is a key; unknown keys are rejected so typos
fail loudly. Checkpoints echo the full config so a bitstream or model
file is interpretable on its own.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigurationError

SCENARIOS = ("audio", "va", "vua")
FUSION_INITS = ("auto", "neutral", "uniform")


@dataclass
class VnscConfig:
    scenario: str = "audio"
    # codec architecture
    n_spectral: int = 40
    d_s: int = 256
    d_v: int = 64
    n_blocks: int = 8
    fusion_index: int = 2
    downsample_factor: int = 8
    # quantizer
    rvq_stages: int = 4
    rvq_entries: int = 1024
    # vision
    vision_channels: tuple = (32, 64, 128, 256, 512)
    image_size: int = 64
    video_fps: int = 60
    # loss weights
    lambda_i: float = 1e-5
    lambda_d: float = 1.0
    # mel loss front end
    mel_n_fft: int = 1024
    mel_hop: int = 240
    mel_bands: int = 80
    # optimizer and loop
    lr: float = 2e-4
    lr_decay: float = 0.999
    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    ema_decay: float = 0.99
    epochs: int = 1
    batch_size: int = 4
    crop_frames: int = 960
    seed: int = 0
    # "neutral" starts fusion as a speech pass-through; "uniform" starts it
    # random; "auto" picks neutral for va and uniform for vua
    fusion_init: str = "auto"

    def validate(self) -> "VnscConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.fusion_init not in FUSION_INITS:
            raise ConfigurationError(
                f"fusion_init must be one of {FUSION_INITS}, got {self.fusion_init!r}")
        for name in ("n_spectral", "d_s", "d_v", "n_blocks", "downsample_factor",
                     "rvq_stages", "rvq_entries", "image_size", "video_fps", "mel_n_fft",
                     "mel_hop", "mel_bands", "epochs", "batch_size", "crop_frames"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 1 <= self.fusion_index <= self.n_blocks - 1:
            raise ConfigurationError(
                f"fusion_index {self.fusion_index} outside [1, {self.n_blocks - 1}]")
        if self.lambda_i < 0 or self.lambda_d < 0:
            raise ConfigurationError("loss weights must be nonnegative")
        if not 0 <= self.ema_decay < 1:
            raise ConfigurationError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.image_size != 2 ** (len(self.vision_channels) + 1):
            raise ConfigurationError(
                f"{len(self.vision_channels)} analysis blocks need image size "
                f"{2 ** (len(self.vision_channels) + 1)}, got {self.image_size}")
        return self

    def resolved_fusion_init(self) -> str:
        if self.fusion_init != "auto":
            return self.fusion_init
        return "neutral" if self.scenario == "va" else "uniform"

    @staticmethod
    def for_scenario(scenario: str, **overrides) -> "VnscConfig":
        """Defaults with the per-scenario loss weights applied."""
        weights = {"audio": dict(lambda_i=0.0, lambda_d=0.0),
                   "va": dict(lambda_i=1e-5, lambda_d=0.0),
                   "vua": dict(lambda_i=0.5e-5, lambda_d=1.0)}
        if scenario not in weights:
            raise ConfigurationError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
        kwargs = {"scenario": scenario, **weights[scenario], **overrides}
        return VnscConfig(**kwargs).validate()

    @staticmethod
    def miniature(scenario: str = "audio", **overrides) -> "VnscConfig":
        """Desk-scale preset small enough for finite-difference audits."""
        small = dict(d_s=16, d_v=8, n_blocks=2, fusion_index=1,
                     rvq_stages=2, rvq_entries=8,
                     vision_channels=(4, 8, 16, 32, 64),
                     mel_n_fft=64, mel_hop=16, mel_bands=8,
                     batch_size=2, crop_frames=16)
        small.update(overrides)
        return VnscConfig.for_scenario(scenario, **small)


def save_config(cfg: VnscConfig, path) -> None:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_config(path) -> VnscConfig:
    defaults = VnscConfig()
    known = {f.name: getattr(defaults, f.name) for f in fields(VnscConfig)}
    overrides = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, text = line.partition("=")
            key, text = key.strip(), text.strip()
            if key not in known:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _coerce(key, text, known[key], f"{path}:{lineno}")
    return replace(defaults, **overrides).validate()


def _coerce(key, text, default, where):
    try:
        if isinstance(default, bool):
            raise ConfigurationError(f"{where}: no boolean keys exist")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as e:
        raise ConfigurationError(f"{where}: cannot parse {key}={text!r}") from e
