"""Parameter containers around the operators in `convpc.ops`."""

from __future__ import annotations

import numpy as np

from . import ops
from . import tensor as _tensor
from .tensor import Tensor


class Module:
    """Base class: tracks parameters, buffers, child modules and the mode flag."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, np.ndarray):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=_tensor.DEFAULT_DTYPE), requires_grad=True)


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = param(he_uniform(rng, (n_out, n_in), n_in))
        self.bias = param(np.zeros(n_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class Conv3d(Module):
    """Bias-free stride-1 convolution; ``kernel`` 3 pads by 1, ``kernel`` 2 does not pad."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3, padding: int | None = None):
        self.padding = (1 if kernel == 3 else 0) if padding is None else padding
        fan_in = c_in * kernel**3
        self.weight = param(he_uniform(rng, (c_out, c_in, kernel, kernel, kernel), fan_in))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=_tensor.DEFAULT_DTYPE)
        self.running_var = np.ones(channels, dtype=_tensor.DEFAULT_DTYPE)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class MLP(Module):
    """Stack of dense layers.

    ``norm=True`` inserts batch normalization after every layer except the
    last (``norm_last`` extends it to the last); ELU follows every layer but
    the last. Layers followed by batch normalization carry no bias unless
    ``bias`` forces it.
    """

    def __init__(
        self,
        n_in: int,
        widths: list[int],
        rng: np.random.Generator,
        norm: bool = False,
        norm_last: bool = False,
        bias: bool | None = None,
    ):
        self.layers = []
        self.norms = []
        prev = n_in
        for i, w in enumerate(widths):
            last = i == len(widths) - 1
            has_norm = norm and (not last or norm_last)
            use_bias = (not has_norm) if bias is None else bias
            self.layers.append(Dense(prev, w, rng, bias=use_bias))
            self.norms.append(BatchNorm(w) if has_norm else None)
            prev = w

    def forward(self, x: Tensor) -> Tensor:
        n = len(self.layers)
        for i, (layer, norm) in enumerate(zip(self.layers, self.norms)):
            x = layer(x)
            if norm is not None:
                x = norm(x)
            if i < n - 1:
                x = ops.elu(x)
        return x
