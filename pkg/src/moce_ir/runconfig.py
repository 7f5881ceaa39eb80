"""Plain-text ``key=value`` run configuration.

Blank lines and ``#`` comments are ignored. Every key must be known; a key
may appear once. Keys left out take the documented defaults, and
:func:`render` writes the fully resolved set back out for log headers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .moce import ConfigError
from .network import ModelConfig
from .objective import DEFAULT_AUX_WEIGHT
from .trainer import TrainConfig


class RunConfigError(ConfigError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    doc: str


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    return repr(value) if isinstance(value, float) else str(value)


KEYS: tuple[Key, ...] = (
    Key("base_channels", int, 8, "channel width C of the first level"),
    Key("encoder_blocks", _ints, (2, 2), "encoder blocks per level, comma separated"),
    Key("decoder_blocks", _ints, (2,), "MoCE decoder blocks per level (one fewer level than the encoder)"),
    Key("refinement_blocks", int, 1, "channel-attention blocks after the decoder"),
    Key("n_experts", int, 4, "complexity experts per MoCE layer"),
    Key("scaling_mode", str, "nested", "expert width rule: nested or exponential"),
    Key("bias_norm", str, "p_max", "complexity bias normaliser: p_max or p_min"),
    Key("ffn_expansion", float, 2.0, "hidden width multiplier of the gated feed-forward"),
    Key("noise_variance", _optional_float, None, "routing noise variance; auto means 1/n^2"),
    Key("crop", int, 32, "training crop size (also the model's nominal input size)"),
    Key("steps", int, 2000, "optimizer steps"),
    Key("batch_size", int, 8, "images per step"),
    Key("lr", float, 1e-3, "initial learning rate (cosine decay to 0)"),
    Key("beta1", float, 0.9, "Adam first-moment decay"),
    Key("beta2", float, 0.999, "Adam second-moment decay"),
    Key("adam_eps", float, 1e-8, "Adam denominator epsilon"),
    Key("aux_weight", float, DEFAULT_AUX_WEIGHT, "weight of the routing auxiliary loss"),
    Key("fourier_weight", float, 0.1, "weight of the Fourier L1 term"),
    Key("balance", str, "complexity", "auxiliary bias: complexity or uniform (plain load balancing)"),
    Key("task_mix", _words, ("noise", "rain", "haze", "blur", "lowlight"), "training tasks, sampled uniformly"),
    Key("seed", int, 0, "seed for initialisation, data and routing noise"),
    Key("snapshot_every", int, 100, "steps between routing snapshots"),
)
_BY_NAME = {k.name: k for k in KEYS}


@dataclass
class RunConfig:
    values: dict[str, Any]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k.name: k.default for k in KEYS})

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            base_channels=v["base_channels"],
            encoder_blocks=v["encoder_blocks"],
            decoder_blocks=v["decoder_blocks"],
            refinement_blocks=v["refinement_blocks"],
            n_experts=v["n_experts"],
            crop_size=v["crop"],
            scaling_mode=v["scaling_mode"],
            bias_norm=v["bias_norm"],
            ffn_expansion=v["ffn_expansion"],
            noise_variance=v["noise_variance"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            steps=v["steps"],
            batch_size=v["batch_size"],
            lr=v["lr"],
            betas=(v["beta1"], v["beta2"]),
            adam_eps=v["adam_eps"],
            crop=v["crop"],
            aux_weight=v["aux_weight"],
            fourier_weight=v["fourier_weight"],
            seed=v["seed"],
            task_mix=v["task_mix"],
            balance=v["balance"],
            snapshot_every=v["snapshot_every"],
        )

    def validate(self) -> "RunConfig":
        self.model_config()
        self.train_config()
        return self

    def to_strings(self) -> dict[str, str]:
        return {k.name: _fmt(self.values[k.name]) for k in KEYS}


def parse(text: str, path: str | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise RunConfigError(f"expected key=value, got {raw.strip()!r}", lineno, path)
        if key not in _BY_NAME:
            raise RunConfigError(f"unknown key {key!r}", lineno, path)
        if key in values:
            raise RunConfigError(f"duplicate key {key!r}", lineno, path)
        try:
            values[key] = _BY_NAME[key].parse(value)
        except ValueError as err:
            raise RunConfigError(f"bad value for {key}: {value!r} ({err})", lineno, path) from None
    cfg = RunConfig.defaults()
    cfg.values.update(values)
    try:
        return cfg.validate()
    except ConfigError as err:
        raise RunConfigError(str(err), None, path) from None


def from_strings(values: dict[str, str]) -> RunConfig:
    """Inverse of :meth:`RunConfig.to_strings` (as stored in checkpoints)."""
    return parse("\n".join(f"{k}={v}" for k, v in values.items() if k in _BY_NAME))


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise RunConfigError(f"cannot read config: {err.strerror}", None, str(path)) from None
    return parse(text, str(path))


def render(cfg: RunConfig, prefix: str = "") -> str:
    return "".join(f"{prefix}{k}={v}\n" for k, v in cfg.to_strings().items())


def reference() -> str:
    """Generated documentation of every key and its default."""
    lines = ["# run configuration keys (key=value, '#' starts a comment)"]
    for k in KEYS:
        lines.append(f"# {k.doc}")
        lines.append(f"{k.name}={_fmt(k.default)}")
    return "\n".join(lines) + "\n"
