"""Minimal parameter containers on top of the numerics core."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .numerics import Tensor, ops, parameter

INIT_STD = 0.02


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return z * std


def fan_in_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in being the leading extents."""
    fan_in = int(np.prod(shape[:-1]))
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, shape)


class Module:
    """Walks attributes for parameters, sub-modules and lists of sub-modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data[...] = arr


class Linear(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator, bias: bool = True, fan_in: bool = False):
        init = fan_in_uniform if fan_in else trunc_normal
        self.weight = parameter(init(rng, (cin, cout)), "weight")
        self.bias = parameter(np.zeros(cout), "bias") if bias else None
        self.cin, self.cout = cin, cout

    def __call__(self, x) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv3x3(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.weight = parameter(trunc_normal(rng, (3, 3, cin, cout)), "weight")
        self.bias = parameter(np.zeros(cout), "bias")

    def __call__(self, x) -> Tensor:
        return ops.conv2d_3x3(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6):
        self.gamma = parameter(np.ones(channels), "gamma")
        self.beta = parameter(np.zeros(channels), "beta")
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, self.eps)
