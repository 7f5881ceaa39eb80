"""Mixture-of-complexity-experts layer.

A layer holds ``n`` spatial experts of increasing width and window size, a
channel-attention shared expert, an image-level router driven by global
average and Sobel statistics, and a cross-attention merge. Only the expert
picked for a sample is evaluated on that sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import LayerNorm, Linear, Module, fan_in_uniform
from .numerics import MacCounter, Tensor, is_power_of_two, ops, parameter


class ConfigError(ValueError):
    """Invalid architecture configuration."""


SCALING_MODES = ("nested", "exponential")
BIAS_NORMS = ("p_max", "p_min")


@dataclass(frozen=True)
class ExpertSpec:
    index: int  # 1-based
    embed_width: int
    window: int
    param_count: int


@dataclass
class MoceLayerConfig:
    n: int = 4
    channels: int = 32
    k: int = 1
    noise_variance: float | None = None
    scaling_mode: str = "nested"
    bias_norm: str = "p_max"
    windows: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"need at least two experts, got n={self.n}")
        if self.k != 1:
            raise ConfigError("only top-1 routing is supported")
        if self.scaling_mode not in SCALING_MODES:
            raise ConfigError(f"scaling_mode must be one of {SCALING_MODES}, got {self.scaling_mode!r}")
        if self.bias_norm not in BIAS_NORMS:
            raise ConfigError(f"bias_norm must be one of {BIAS_NORMS}, got {self.bias_norm!r}")
        if self.noise_variance is None:
            self.noise_variance = 1.0 / self.n**2
        if self.windows is None:
            self.windows = tuple(2 ** (2 + i) for i in range(1, self.n + 1))
        self.windows = tuple(int(w) for w in self.windows)
        if len(self.windows) != self.n:
            raise ConfigError(f"expected {self.n} window sizes, got {len(self.windows)}")
        if any(not is_power_of_two(w) for w in self.windows):
            raise ConfigError(f"window sizes must be powers of two: {self.windows}")
        if any(b <= a for a, b in zip(self.windows, self.windows[1:])):
            raise ConfigError(f"window sizes must strictly increase: {self.windows}")

    @property
    def noise_std(self) -> float:
        return float(np.sqrt(self.noise_variance))


def embed_widths(channels: int, n: int, scaling_mode: str = "nested") -> list[int]:
    """Per-expert embedding widths, lightest first.

    nested: ``C / 2**(n + 1 - i)``; exponential: ``C * 2**(i - n)``. Both
    are clamped below at one channel, which only bites when ``C < 2**n``.
    """
    if scaling_mode not in SCALING_MODES:
        raise ConfigError(f"unknown scaling mode {scaling_mode!r}")
    widths = []
    for i in range(1, n + 1):
        shift = n + 1 - i if scaling_mode == "nested" else n - i
        if channels % (2**shift) and channels >= 2**shift:
            raise ConfigError(f"channels={channels} not divisible by 2**{shift}")
        widths.append(max(1, channels // 2**shift))
    return widths


class TransposedAttention(Module):
    """Channel (C x C) attention; with ``context`` it becomes cross-attention.

    Queries come from ``x``, keys/values from ``context`` (or ``x``). Q and K
    are L2-normalised over the spatial axis and the softmaxed map mixes the
    value channels before a final projection.
    """

    def __init__(self, channels: int, rng: np.random.Generator, fan_in: bool = False):
        self.q = Linear(channels, channels, rng, fan_in=fan_in)
        # keys and values share one (C -> 2C) map
        self.kv = Linear(channels, 2 * channels, rng, fan_in=fan_in)
        self.proj = Linear(channels, channels, rng, fan_in=fan_in)
        self.temperature = parameter(np.ones(1), "temperature")

    def attention_map(self, x: Tensor, context: Tensor | None = None) -> tuple[Tensor, Tensor]:
        context = x if context is None else context
        *lead, h, w, c = x.shape
        q = self.q(x).reshape(*lead, h * w, c)
        kv = self.kv(context).reshape(*lead, h * w, 2 * c)
        k, v = kv[..., :c], kv[..., c:]
        qn = ops.l2_normalize(q, axis=-2)
        kn = ops.l2_normalize(k, axis=-2)
        logits = ops.matmul(ops.swapaxes(qn, -1, -2), kn) / self.temperature
        return ops.softmax(logits), v

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        *lead, h, w, c = x.shape
        attn, v = self.attention_map(x, context)
        out = ops.matmul(v, ops.swapaxes(attn, -1, -2))
        return self.proj(out).reshape(*lead, h, w, c)


class ComplexityExpert(Module):
    """Project to ``r`` channels, FFT window attention, project back."""

    def __init__(self, channels: int, width: int, window: int, rng: np.random.Generator, eps: float = 1e-6):
        # fan-in init (see MoceLayer): at widths of one or two channels,
        # 0.02-std weights leave the expert's own gradients below Adam's epsilon
        self.proj_in = Linear(channels, width, rng, fan_in=True)
        # query, key and value maps (r -> r each) stacked into one r -> 3r map
        self.qkv = Linear(width, 3 * width, rng, fan_in=True)
        self.proj_out = Linear(width, channels, rng, fan_in=True)
        self.width = width
        self.window = window
        self.eps = eps

    def effective_window(self, h: int, w: int) -> int:
        ws = min(self.window, h, w)
        if not is_power_of_two(ws) or h % ws or w % ws:
            raise ConfigError(f"window {ws} does not tile a {h}x{w} feature map")
        return ws

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        ws = self.effective_window(h, w)
        z = self.proj_in(x)
        r = self.width

        qkv = self.qkv(z).reshape(b, h // ws, ws, w // ws, ws, 3 * r)
        qkv = ops.transpose(qkv, (0, 1, 3, 2, 4, 5))
        q, k, v = qkv[..., :r], qkv[..., r:2 * r], qkv[..., 2 * r:]
        corr = ops.circular_correlate2d(q, k, axes=(-3, -2))
        corr = ops.standardize(corr, axis=(-3, -2), eps=self.eps)
        out = corr * v
        out = ops.transpose(out, (0, 1, 3, 2, 4, 5)).reshape(b, h, w, r)
        return self.proj_out(out)


def sobel_descriptor(x) -> Tensor:
    """Spatial mean of the Sobel gradient magnitude, per channel.

    Evaluated on interior pixels only (no padding), so constant inputs give
    exactly zero. ``x``: ``[..., H, W, C]`` -> ``[..., C]``.
    """
    return ops.mean(ops.sobel_magnitude(x), axis=(-3, -2))


@dataclass
class RoutingTrace:
    """Routing decisions of one layer for a batch of images.

    ``selected`` is 0-based; ``logits``/``noise`` are ``[B, n]``.
    """

    layer_id: int
    logits: np.ndarray
    noise: np.ndarray
    selected: np.ndarray
    gate: np.ndarray
    expert_macs: np.ndarray
    logits_tensor: Tensor | None = field(default=None, repr=False, compare=False)
    gate_tensor: Tensor | None = field(default=None, repr=False, compare=False)

    @property
    def batch_size(self) -> int:
        return len(self.selected)


ROUTING_STREAM = 1


def routing_noise(key: Sequence[int], layer_id: int, n: int, std: float) -> np.ndarray:
    """Per-sample, per-layer Gaussian noise stream.

    The stream tag keeps it apart from other streams keyed by the same
    integers (SeedSequence ignores trailing zero words).
    """
    seq = np.random.SeedSequence([*map(int, key), int(layer_id)], spawn_key=(ROUTING_STREAM,))
    rng = np.random.default_rng(seq)
    return rng.normal(0.0, std, size=n)


class Router(Module):
    def __init__(self, channels: int, n: int, rng: np.random.Generator):
        # fan-in uniform: logit spread must be comparable to the routing noise
        # from the start, or selection stays noise-driven and never specialises
        self.weight = parameter(fan_in_uniform(rng, (2 * channels, n)), "weight")
        self.n = n

    def descriptor(self, x: Tensor) -> Tensor:
        return ops.concat([ops.mean(x, axis=(-3, -2)), sobel_descriptor(x)], axis=-1)

    def logits(self, x: Tensor) -> Tensor:
        if self.weight.shape[1] != self.n:
            raise ConfigError(f"router weight has {self.weight.shape[1]} experts, config says {self.n}")
        return ops.matmul(self.descriptor(x), self.weight)


def select(logits: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Top-1 over noisy logits; ``argmax`` breaks ties toward the lower index."""
    return np.argmax(logits + noise, axis=-1)


class MoceLayer(Module):
    def __init__(self, config: MoceLayerConfig, rng: np.random.Generator, layer_id: int = 0):
        self.config = config
        self.layer_id = layer_id
        c = config.channels
        widths = embed_widths(c, config.n, config.scaling_mode)
        self.router = Router(c, config.n, rng)
        self.experts = [ComplexityExpert(c, r, w, rng) for r, w in zip(widths, config.windows)]
        # fan-in init throughout the layer: the gate reaches the loss through a
        # chain of maps (expert, shared, merge), and 0.02-std weights shrink
        # the router's task gradient below Adam's epsilon
        self.shared = TransposedAttention(c, rng, fan_in=True)
        self.merge = TransposedAttention(c, rng, fan_in=True)

    @property
    def specs(self) -> list[ExpertSpec]:
        return [
            ExpertSpec(i + 1, e.width, e.window, e.num_parameters())
            for i, e in enumerate(self.experts)
        ]

    def route(
        self,
        x: Tensor,
        train_mode: bool = False,
        noise_keys: Sequence[Sequence[int]] | None = None,
        force: int | None = None,
    ) -> RoutingTrace:
        logits = self.router.logits(x)
        b, n = logits.shape
        if train_mode:
            if noise_keys is None or len(noise_keys) != b:
                raise ValueError("train-mode routing needs one noise key per sample")
            noise = np.stack([routing_noise(key, self.layer_id, n, self.config.noise_std) for key in noise_keys])
        else:
            noise = np.zeros((b, n))
        selected = select(logits.data, noise) if force is None else np.full(b, int(force))
        if np.any(selected < 0) or np.any(selected >= n):
            raise ConfigError(f"forced expert {force} outside 0..{n - 1}")
        probs = ops.softmax(logits + Tensor(noise))
        gate = ops.take_along_last(probs, selected[:, None])
        return RoutingTrace(
            layer_id=self.layer_id,
            logits=logits.data.copy(),
            noise=noise,
            selected=selected,
            gate=gate.data[:, 0].copy(),
            expert_macs=np.zeros(b, dtype=np.int64),
            logits_tensor=logits,
            gate_tensor=gate,
        )

    def __call__(
        self,
        x: Tensor,
        train_mode: bool = False,
        noise_keys: Sequence[Sequence[int]] | None = None,
        force: int | None = None,
    ) -> tuple[Tensor, RoutingTrace]:
        b = x.shape[0]
        trace = self.route(x, train_mode, noise_keys, force)

        parts, order = [], []
        for e in np.unique(trace.selected):
            members = np.flatnonzero(trace.selected == e)
            with MacCounter() as counter:
                xe = x if len(members) == b else ops.take(x, members, axis=0)
                parts.append(self.experts[e](xe))
            trace.expert_macs[members] = counter.count // len(members)
            order.append(members)
        expert_out = parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)
        perm = np.concatenate(order)
        if not np.array_equal(perm, np.arange(b)):
            expert_out = ops.take(expert_out, np.argsort(perm), axis=0)

        y = ops.reshape(trace.gate_tensor, (b, 1, 1, 1)) * expert_out * self.shared(x)
        # queries from x, keys/values from y: the spatial L2 normalisation of
        # the query would cancel a per-image gate, the values keep it
        return x + self.merge(x, context=y), trace


def expert_specs(config: MoceLayerConfig, seed: int = 0) -> list[ExpertSpec]:
    """Specs of a freshly built layer; parameter counts come from the instances."""
    return MoceLayer(config, np.random.default_rng(seed)).specs


class DecoderBlock(Module):
    """LN -> channel attention -> residual -> LN -> MoCE layer -> residual."""

    def __init__(self, config: MoceLayerConfig, rng: np.random.Generator, layer_id: int):
        c = config.channels
        self.norm1 = LayerNorm(c)
        self.attn = TransposedAttention(c, rng)
        self.norm2 = LayerNorm(c)
        self.moce = MoceLayer(config, rng, layer_id)

    def __call__(self, x, train_mode=False, noise_keys=None, force=None):
        x = x + self.attn(self.norm1(x))
        y, trace = self.moce(self.norm2(x), train_mode, noise_keys, force)
        return x + y, trace
