"""Vision-integrated neural speech codec."""

from .bitstream import read_bitstream, write_bitstream
from .config import VnscConfig
from .dsp import Waveform, read_wav, ssnr, write_wav
from .estimator import VnscCodec
from .model import VnscModel, bitrate_bps
from .tensor import Tensor
from .training import Trainer, audit_gradients, load_model
from .vision import read_lips, write_lips

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Trainer",
    "VnscCodec",
    "VnscConfig",
    "VnscModel",
    "Waveform",
    "audit_gradients",
    "bitrate_bps",
    "load_model",
    "read_bitstream",
    "read_lips",
    "read_wav",
    "ssnr",
    "write_bitstream",
    "write_lips",
    "write_wav",
]
