"""Parameter registry and the neural layers shared by the codec and vision nets.

A Parameter is a Tensor that additionally knows how it should be initialized
and whether the optimizer may touch it. Modules discover their parameters and
submodules by walking instance attributes in insertion order, which makes
dotted names ("encoder.blocks.0.dwconv.weight") deterministic and unique by
construction. Initialization draws one seeded RNG stream per parameter name,
so a module's initial weights do not depend on what other modules exist in
the model.
"""

from __future__ import annotations

import math
import zlib
from typing import Iterator

import numpy as np

from . import ops
from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor


class Parameter(Tensor):
    """Tensor owned by a Module, with an initialization rule attached."""

    __slots__ = ("trainable", "init_kind", "fan_in")

    def __init__(self, shape, init: str = "zeros", fan_in: int | None = None,
                 trainable: bool = True):
        super().__init__(np.zeros(shape, dtype=np.float32), requires_grad=trainable)
        if init == "uniform" and not fan_in:
            raise ConfigurationError("uniform initialization needs a positive fan_in")
        self.trainable = trainable
        self.init_kind = init
        self.fan_in = fan_in

    def reset(self, rng: np.random.Generator) -> None:
        if self.init_kind == "zeros":
            self.data[:] = 0.0
        elif self.init_kind == "ones":
            self.data[:] = 1.0
        elif self.init_kind == "uniform":
            bound = math.sqrt(1.0 / self.fan_in)
            self.data[:] = rng.uniform(-bound, bound, size=self.shape).astype(np.float32)
        else:
            raise ConfigurationError(f"unknown init kind {self.init_kind!r}")


class Module:
    """Base class providing parameter discovery, init, and mode switches."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- registry ------------------------------------------------------------

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self.__dict__.items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.trainable]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield from value.modules()

    def apply(self, fn) -> "Module":
        for m in self.modules():
            fn(m)
        return self

    # -- lifecycle ------------------------------------------------------------

    def initialize(self, seed: int) -> None:
        """Fill every parameter from a stream keyed by (seed, dotted name)."""
        for name, p in self.named_parameters():
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            p.reset(rng)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- state ----------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigurationError(
                f"parameter name mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.shape:
                raise ConfigurationError(
                    f"shape mismatch for {name}: stored {arr.shape}, model {p.shape}")
            p.data[:] = arr


class ModuleList(Module):
    """Sequence container whose children are named by their index."""

    def __init__(self, mods):
        super().__init__()
        mods = list(mods)
        self._count = len(mods)
        for i, m in enumerate(mods):
            self.__dict__[str(i)] = m

    def __len__(self) -> int:
        return self._count

    def __getitem__(self, i: int) -> Module:
        return self.__dict__[str(i)]

    def __iter__(self):
        return (self.__dict__[str(i)] for i in range(self._count))


# -- layers --------------------------------------------------------------------------


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        if c_in % groups:
            raise ConfigurationError(f"{c_in} input channels not divisible by groups={groups}")
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = Parameter((c_out, c_in // groups, kernel), init="uniform",
                                fan_in=(c_in // groups) * kernel)
        self.bias = Parameter((c_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose1d(Module):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, output_padding=0, bias=True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self.weight = Parameter((c_in, c_out, kernel), init="uniform", fan_in=c_in * kernel)
        self.bias = Parameter((c_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d_transposed(x, self.weight, self.bias, self.stride,
                                     self.padding, self.output_padding)


class Conv3d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=(1, 1, 1), padding=(1, 1, 1), bias=True):
        super().__init__()
        k = (kernel,) * 3 if isinstance(kernel, int) else tuple(kernel)
        self.stride = stride
        self.padding = padding
        self.weight = Parameter((c_out, c_in) + k, init="uniform",
                                fan_in=c_in * k[0] * k[1] * k[2])
        self.bias = Parameter((c_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=(1, 1, 1), padding=(1, 1, 1),
                 output_padding=(0, 0, 0), bias=True):
        super().__init__()
        k = (kernel,) * 3 if isinstance(kernel, int) else tuple(kernel)
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        self.weight = Parameter((c_in, c_out) + k, init="uniform",
                                fan_in=c_in * k[0] * k[1] * k[2])
        self.bias = Parameter((c_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d_transposed(x, self.weight, self.bias, self.stride,
                                     self.padding, self.output_padding)


class Linear(Module):
    def __init__(self, d_in, d_out, bias=True):
        super().__init__()
        self.weight = Parameter((d_out, d_in), init="uniform", fan_in=d_in)
        self.bias = Parameter((d_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter((d,), init="ones")
        self.beta = Parameter((d,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Grn(Module):
    """Global response normalization; zero-initialized so it starts as identity."""

    def __init__(self, d, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter((d,))
        self.beta = Parameter((d,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.grn(x, self.gamma, self.beta, self.eps)


class BatchNorm3d(Module):
    """Per-channel batch normalization over the T/H/W axes of [C,T,H,W].

    Training mode normalizes with batch statistics and, unless `update_stats`
    is cleared (gradient checks clear it to keep loss evaluation side-effect
    free), folds them into the running buffers; eval mode uses the buffers
    only, so inference is deterministic.
    """

    def __init__(self, c, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.update_stats = True
        self.gamma = Parameter((c,), init="ones")
        self.beta = Parameter((c,))
        self.running_mean = Parameter((c,), trainable=False)
        self.running_var = Parameter((c,), init="ones", trainable=False)

    def forward(self, x: Tensor) -> Tensor:
        c = x.shape[0]
        if self.training:
            mu = T.tmean(x, axis=(1, 2, 3), keepdims=True)
            centered = T.sub(x, mu)
            var = T.tmean(T.mul(centered, centered), axis=(1, 2, 3), keepdims=True)
            if self.update_stats:
                n = x.size // c
                unbiased = var.data * (n / (n - 1)) if n > 1 else var.data
                m = self.momentum
                self.running_mean.data[:] = (1 - m) * self.running_mean.data + m * mu.data.reshape(-1)
                self.running_var.data[:] = (1 - m) * self.running_var.data + m * unbiased.reshape(-1)
        else:
            mu = T.reshape(self.running_mean, (c, 1, 1, 1))
            var = T.reshape(self.running_var, (c, 1, 1, 1))
            centered = T.sub(x, mu)
        inv = T.power(T.add(var, self.eps), -0.5)
        normed = T.mul(centered, inv)
        return T.add(T.mul(normed, T.reshape(self.gamma, (c, 1, 1, 1))),
                     T.reshape(self.beta, (c, 1, 1, 1)))


class McnxBlock(Module):
    """Residual block: depth-wise conv, layer norm, expanding linear, GELU,
    global response normalization, projecting linear, skip connection."""

    def __init__(self, d, kernel=7, expand=2):
        super().__init__()
        self.dwconv = Conv1d(d, d, kernel, padding=kernel // 2, groups=d)
        self.norm = LayerNorm(d)
        self.pw1 = Linear(d, expand * d)
        self.grn = Grn(expand * d)
        self.pw2 = Linear(expand * d, d)

    def forward(self, x: Tensor) -> Tensor:
        y = self.dwconv(x)
        y = self.norm(y)
        y = T.gelu(self.pw1(y))
        y = self.grn(y)
        y = self.pw2(y)
        return T.add(x, y)
