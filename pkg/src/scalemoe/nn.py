"""Parameter containers and the handful of layers the model is built from.

A :class:`Module` discovers its state by attribute inspection: ``Tensor``
attributes with ``requires_grad`` are parameters, ``numpy.ndarray`` attributes
are buffers (batch-norm running statistics), and ``Module`` attributes or
lists of modules are children.  Names are dotted attribute paths in
definition order, which is what checkpoints key on.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .exceptions import InvalidConfig, ShapeMismatch
from .tensor import Tensor, ops


class Module:
    training: bool = True

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    yield f"{key}.{i}", child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + key, value
        for key, child in self._children():
            yield from child.named_buffers(f"{prefix}{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            if name in state:
                raise InvalidConfig(f"duplicate state name {name!r}")
            state[name] = buf
        return state

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        targets: dict[str, np.ndarray] = {name: p.data for name, p in self.named_parameters()}
        targets.update(self.named_buffers())
        missing = sorted(set(targets) - set(state))
        if strict and missing:
            raise InvalidConfig(f"state is missing entries: {missing[:5]}")
        for name, dest in targets.items():
            if name not in state:
                continue
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != dest.shape:
                raise ShapeMismatch(f"{name}: stored shape {src.shape} vs model shape {dest.shape}")
            dest[...] = src  # in place, so graphs and optimiser state keep their references


def parameter(array: np.ndarray) -> Tensor:
    return Tensor(array, requires_grad=True)


class Linear(Module):
    """``y = x @ weight + bias`` with ``weight`` stored as in_features × out_features."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True, gain: float = 1.0):
        std = gain / np.sqrt(in_features)
        self.weight = parameter(rng.normal(0.0, std, size=(in_features, out_features)))
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.weight = parameter(rng.normal(0.0, 1.0, size=(num_embeddings, dim)))

    def __call__(self, ids) -> Tensor:
        return ops.gather_rows(self.weight, ids)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        pad: int = 0,
        bias: bool = False,
    ):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = parameter(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel_size, kernel_size))
        )
        self.bias = parameter(np.zeros((1, out_channels, 1, 1))) if bias else None
        self.stride, self.pad = stride, pad

    def __call__(self, x) -> Tensor:
        y = ops.conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        return y + self.bias if self.bias is not None else y


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x) -> Tensor:
        return ops.batch_norm2d(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class ConvBNReLU(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel_size: int = 3, stride: int = 1, pad: Optional[int] = None):
        pad = kernel_size // 2 if pad is None else pad
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride, pad=pad)
        self.bn = BatchNorm2d(out_channels)

    def __call__(self, x) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))
