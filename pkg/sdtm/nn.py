"""
Parameter containers and the two learnable layer kinds the networks use.
"""
from typing import Dict, Iterator, List, Tuple

import numpy as np

from sdtm import ops
from sdtm.tensor import Tensor


def parameter(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """
    Base for anything holding parameters.

    Parameters and child modules are discovered from instance attributes in
    assignment order, so names and ordering are stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if isinstance(value, Tensor):
                yield f"{prefix}{attr}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{attr}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: str = "same_zero",
        zero_init: bool = False,
    ):
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            weight = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = in_channels * kernel_size * kernel_size
            weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)
        self.weight = parameter(weight, "weight")
        self.bias = parameter(np.zeros(out_channels, dtype=np.float32), "bias")
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding=self.padding, stride=self.stride)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, zero_init: bool = False):
        if zero_init:
            weight = np.zeros((out_features, in_features), dtype=np.float32)
        else:
            weight = rng.normal(0.0, np.sqrt(1.0 / in_features), size=(out_features, in_features)).astype(np.float32)
        self.weight = parameter(weight, "weight")
        self.bias = parameter(np.zeros(out_features, dtype=np.float32), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matvec_head(x, self.weight, self.bias)


def set_trainable(params: List[Tensor], trainable: bool) -> None:
    for p in params:
        p.requires_grad = trainable


def grad_norm(params: List[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))

