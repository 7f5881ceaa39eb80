"""Asymmetric U-shaped restoration network with MoCE layers in the decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .moce import ConfigError, DecoderBlock, MoceLayer, MoceLayerConfig, RoutingTrace, TransposedAttention
from .nn import Conv3x3, LayerNorm, Linear, Module
from .numerics import MacCounter, Tensor, ops


@dataclass
class ModelConfig:
    base_channels: int = 32
    encoder_blocks: tuple[int, ...] = (4, 6, 6, 8)
    decoder_blocks: tuple[int, ...] = (2, 4, 4)
    refinement_blocks: int = 2
    n_experts: int = 4
    crop_size: int = 128
    scaling_mode: str = "nested"
    bias_norm: str = "p_max"
    ffn_expansion: float = 2.0
    noise_variance: float | None = None

    def __post_init__(self):
        self.encoder_blocks = tuple(int(b) for b in self.encoder_blocks)
        self.decoder_blocks = tuple(int(b) for b in self.decoder_blocks)
        if not self.encoder_blocks or any(b < 1 for b in self.encoder_blocks):
            raise ConfigError(f"encoder_blocks must be positive, got {self.encoder_blocks}")
        if len(self.decoder_blocks) != len(self.encoder_blocks) - 1:
            raise ConfigError(
                f"decoder needs one level fewer than the encoder: "
                f"{len(self.decoder_blocks)} vs {len(self.encoder_blocks)}"
            )
        if any(b < 1 for b in self.decoder_blocks):
            raise ConfigError(f"decoder_blocks must be positive, got {self.decoder_blocks}")
        if self.base_channels < 1 or self.refinement_blocks < 0 or self.ffn_expansion <= 0:
            raise ConfigError("base_channels, refinement_blocks and ffn_expansion must be positive")
        if self.crop_size % self.divisor:
            raise ConfigError(f"crop_size {self.crop_size} not divisible by {self.divisor}")

    @property
    def levels(self) -> int:
        return len(self.encoder_blocks)

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def channels(self, level: int) -> int:
        """Channel width at 1-based ``level``."""
        return self.base_channels * 2 ** (level - 1)

    @property
    def num_moce_layers(self) -> int:
        return sum(self.decoder_blocks)

    def layer_config(self, level: int) -> MoceLayerConfig:
        return MoceLayerConfig(
            n=self.n_experts,
            channels=self.channels(level),
            noise_variance=self.noise_variance,
            scaling_mode=self.scaling_mode,
            bias_norm=self.bias_norm,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardRecord:
    """Output of one forward pass over a batch.

    ``traces`` follow execution order (deepest decoder level first);
    ``macs`` holds one multiply-accumulate count per sample.
    """

    restored: Tensor
    traces: list[RoutingTrace]
    macs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def batch_size(self) -> int:
        return self.restored.shape[0]

    def selections(self) -> np.ndarray:
        """``[B, layers]`` 0-based expert indices."""
        return np.stack([t.selected for t in self.traces], axis=1)


class GatedFeedForward(Module):
    def __init__(self, channels: int, expansion: float, rng: np.random.Generator):
        hidden = max(1, int(round(channels * expansion)))
        self.proj_in = Linear(channels, 2 * hidden, rng)
        self.proj_out = Linear(hidden, channels, rng)
        self.hidden = hidden

    def __call__(self, x: Tensor) -> Tensor:
        h = self.proj_in(x)
        a, g = h[..., : self.hidden], h[..., self.hidden:]
        return self.proj_out(a * ops.gelu(g))


class EncoderBlock(Module):
    def __init__(self, channels: int, expansion: float, rng: np.random.Generator):
        self.norm1 = LayerNorm(channels)
        self.attn = TransposedAttention(channels, rng)
        self.norm2 = LayerNorm(channels)
        self.ffn = GatedFeedForward(channels, expansion, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


def pixel_unshuffle(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    x = x.reshape(b, h // 2, 2, w // 2, 2, c)
    return ops.transpose(x, (0, 1, 3, 2, 4, 5)).reshape(b, h // 2, w // 2, 4 * c)


def pixel_shuffle(x: Tensor) -> Tensor:
    b, h, w, c4 = x.shape
    c = c4 // 4
    x = x.reshape(b, h, w, 2, 2, c)
    return ops.transpose(x, (0, 1, 3, 2, 4, 5)).reshape(b, 2 * h, 2 * w, c)


class Downsample(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.proj = Linear(4 * channels, 2 * channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(pixel_unshuffle(x))


class Upsample(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.proj = Linear(channels, 2 * channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return pixel_shuffle(self.proj(x))


class DecoderLevel(Module):
    def __init__(self, config: ModelConfig, level: int, first_layer_id: int, rng: np.random.Generator):
        c = config.channels(level)
        self.up = Upsample(2 * c, rng)
        self.fuse = Linear(2 * c, c, rng)
        layer_cfg = config.layer_config(level)
        self.blocks = [
            DecoderBlock(layer_cfg, rng, first_layer_id + j) for j in range(config.decoder_blocks[level - 1])
        ]


class MoceIR(Module):
    """Shallow conv, encoder levels, MoCE decoder levels, refinement, output conv."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        cfg = config
        self.shallow = Conv3x3(3, cfg.base_channels, rng)
        self.encoder = []
        self.down = []
        for level in range(1, cfg.levels + 1):
            c = cfg.channels(level)
            self.encoder.append(_Stage([EncoderBlock(c, cfg.ffn_expansion, rng) for _ in range(cfg.encoder_blocks[level - 1])]))
            if level < cfg.levels:
                self.down.append(Downsample(c, rng))
        self.decoder = []
        layer_id = 0
        for level in range(cfg.levels - 1, 0, -1):
            self.decoder.append(DecoderLevel(cfg, level, layer_id, rng))
            layer_id += cfg.decoder_blocks[level - 1]
        c1 = cfg.base_channels
        self.refinement = _Stage([EncoderBlock(c1, cfg.ffn_expansion, rng) for _ in range(cfg.refinement_blocks)])
        self.output = Conv3x3(c1, 3, rng)

    def moce_layers(self) -> list[MoceLayer]:
        return [blk.moce for lvl in self.decoder for blk in lvl.blocks]

    def param_report(self) -> dict[str, int]:
        groups: dict[str, int] = {}
        for name, p in self.named_parameters():
            key = name.split(".")[0]
            groups[key] = groups.get(key, 0) + p.size
        groups["total"] = sum(v for k, v in groups.items())
        return groups

    def __call__(self, x, train_mode: bool = False, noise_keys=None, force=None) -> ForwardRecord:
        return forward(self, x, train_mode=train_mode, noise_keys=noise_keys, force=force)


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = list(blocks)

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


def build(config: ModelConfig, rng: np.random.Generator | int = 0) -> MoceIR:
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return MoceIR(config, rng)


def _force_list(force, n_layers: int) -> list[int | None]:
    if force is None or isinstance(force, (int, np.integer)):
        return [force] * n_layers
    force = list(force)
    if len(force) != n_layers:
        raise ConfigError(f"force needs {n_layers} entries, got {len(force)}")
    return force


def forward(
    model: MoceIR,
    x,
    train_mode: bool = False,
    noise_keys: Sequence[Sequence[int]] | None = None,
    force: int | Sequence[int | None] | None = None,
) -> ForwardRecord:
    """Restore a batch ``[B, H, W, 3]`` (a single ``[H, W, 3]`` image is promoted).

    ``force`` pins routing to a 0-based expert, either globally or per layer;
    ``noise_keys`` gives each sample its routing-noise stream in train mode.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ops.ShapeError(f"expected [B, H, W, 3] input, got {x.shape}")
    cfg = model.config
    b, h, w, _ = x.shape
    if h % cfg.divisor or w % cfg.divisor:
        raise ops.ShapeError(f"spatial size {h}x{w} not divisible by {cfg.divisor}")
    forced = _force_list(force, cfg.num_moce_layers)

    traces: list[RoutingTrace] = []
    with MacCounter() as total:
        shallow = model.shallow(x)
        feats = shallow
        skips = []
        for level, stage in enumerate(model.encoder):
            feats = stage(feats)
            if level < len(model.down):
                skips.append(feats)
                feats = model.down[level](feats)
        for lvl in model.decoder:
            feats = lvl.up(feats)
            feats = lvl.fuse(ops.concat([feats, skips.pop()], axis=-1))
            for blk in lvl.blocks:
                feats, trace = blk(feats, train_mode, noise_keys, forced[len(traces)])
                traces.append(trace)
        feats = model.refinement(feats) + shallow
        restored = model.output(feats) + x

    expert_total = sum(int(t.expert_macs.sum()) for t in traces)
    shared = total.count - expert_total
    if shared % b:
        raise RuntimeError("shared MAC count is not a multiple of the batch size")
    macs = np.full(b, shared // b, dtype=np.int64)
    for t in traces:
        macs += t.expert_macs
    return ForwardRecord(restored=restored, traces=traces, macs=macs)


def count_flops(record: ForwardRecord) -> np.ndarray:
    """Per-sample multiply-accumulate counts of an executed forward pass."""
    return record.macs.copy()
