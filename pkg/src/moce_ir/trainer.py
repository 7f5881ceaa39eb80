"""Deterministic training loop: data sampling, losses, Adam and cosine decay."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import degradations
from .moce import ConfigError
from .network import ForwardRecord, MoceIR, forward
from .numerics import NonFiniteError, Tensor, detect_anomaly, no_grad
from .objective import (
    DEFAULT_AUX_WEIGHT,
    DEFAULT_FOURIER_WEIGHT,
    BiasVector,
    aux_loss,
    complexity_bias,
    gate_stats,
    restoration_loss,
    uniform_bias,
)

DATA_STREAM = 2
BALANCE_MODES = ("complexity", "uniform")


class TrainingDiverged(RuntimeError):
    """Loss or gradients became non-finite."""

    def __init__(self, step: int, op: str | None):
        self.step = step
        self.op = op
        where = f"first non-finite value produced by op '{op}'" if op else "no op produced a non-finite value on replay"
        super().__init__(f"non-finite loss at step {step}: {where}")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    crop: int = 32
    aux_weight: float = DEFAULT_AUX_WEIGHT
    fourier_weight: float = DEFAULT_FOURIER_WEIGHT
    seed: int = 0
    task_mix: tuple[str, ...] = degradations.TASKS
    balance: str = "complexity"
    snapshot_every: int = 100

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.task_mix = tuple(self.task_mix)
        if self.steps <= 0:
            raise ConfigError(f"steps must be positive, got {self.steps}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.crop <= 0:
            raise ConfigError(f"crop must be positive, got {self.crop}")
        if self.aux_weight < 0 or self.fourier_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.task_mix or any(t not in degradations.TASKS for t in self.task_mix):
            raise ConfigError(f"task_mix must be drawn from {degradations.TASKS}, got {self.task_mix}")
        if self.balance not in BALANCE_MODES:
            raise ConfigError(f"balance must be one of {BALANCE_MODES}, got {self.balance!r}")
        if self.snapshot_every <= 0:
            raise ConfigError("snapshot_every must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(step: int, total: int, lr0: float) -> float:
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    A ``None`` gradient counts as zero.
    """
    if not len(params) == len(grads) == len(state.m) == len(state.v):
        raise ValueError("params, grads and optimizer state differ in length")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = 0.0
        elif g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class Batch:
    clean: np.ndarray
    degraded: np.ndarray
    tasks: list[str]
    keys: list[tuple[int, int, int]]


def sample_key_rng(key: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(map(int, key)), spawn_key=(DATA_STREAM,)))


def make_batch(cfg: TrainConfig, step: int, params: dict | None = None) -> Batch:
    """Training batch for ``step``; sample ``i`` depends only on ``(seed, step, i)``."""
    clean, degraded, tasks, keys = [], [], [], []
    params = params or {}
    for i in range(cfg.batch_size):
        key = (int(cfg.seed), int(step), i)
        rng = sample_key_rng(key)
        task = cfg.task_mix[int(rng.integers(len(cfg.task_mix)))]
        image_seed = int(rng.integers(0, 2**63 - 1))
        s = degradations.make_sample(task, image_seed, cfg.crop, params.get(task))
        c, d = s.clean, s.degraded
        if rng.random() < 0.5:
            c, d = c[:, ::-1], d[:, ::-1]
        if rng.random() < 0.5:
            c, d = c[::-1], d[::-1]
        clean.append(c)
        degraded.append(d)
        tasks.append(task)
        keys.append(key)
    return Batch(np.stack(clean), np.stack(degraded), tasks, keys)


def layer_biases(model: MoceIR, balance: str) -> list[BiasVector]:
    if balance == "uniform":
        return [uniform_bias(layer.config.n) for layer in model.moce_layers()]
    return [
        complexity_bias([s.param_count for s in layer.specs], layer.config.bias_norm)
        for layer in model.moce_layers()
    ]


@dataclass
class StepResult:
    loss: Tensor
    restoration: Tensor
    aux: Tensor
    record: ForwardRecord


def compute_loss(model: MoceIR, cfg: TrainConfig, batch: Batch, biases: list[BiasVector]) -> StepResult:
    record = forward(model, batch.degraded, train_mode=True, noise_keys=batch.keys)
    rest = restoration_loss(record.restored, batch.clean, cfg.fourier_weight)
    layers = model.moce_layers()
    aux = aux_loss(gate_stats(record.traces), biases, layers[0].config.noise_std)
    loss = rest + cfg.aux_weight * aux if cfg.aux_weight else rest
    return StepResult(loss, rest, aux, record)


def _histograms(record: ForwardRecord, n: int) -> list[list[int]]:
    return [np.bincount(t.selected, minlength=n).tolist() for t in record.traces]


@dataclass
class TrainState:
    step: int
    adam: AdamState
    log: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)


def init_state(model: MoceIR) -> TrainState:
    return TrainState(0, AdamState.zeros_like([p.data for p in model.parameters()]))


def _diagnose(model: MoceIR, cfg: TrainConfig, batch: Batch, biases, step: int) -> TrainingDiverged:
    model.zero_grad()
    try:
        with detect_anomaly():
            res = compute_loss(model, cfg, batch, biases)
            res.loss.backward()
    except NonFiniteError as err:
        return TrainingDiverged(step, err.op)
    except FloatingPointError:
        return TrainingDiverged(step, "softmax")
    return TrainingDiverged(step, None)


def train(
    model: MoceIR,
    cfg: TrainConfig,
    state: TrainState | None = None,
    stop_at: int | None = None,
    on_step: Callable[[dict], None] | None = None,
    after_step: Callable[[int, MoceIR, TrainState], None] | None = None,
    task_params: dict | None = None,
    batch_fn: Callable[[int], Batch] | None = None,
) -> TrainState:
    """Run steps ``state.step .. stop_at`` (default ``cfg.steps``).

    ``on_step`` receives each log record; ``after_step`` runs after every
    optimizer update and may mutate the model or state (used to emulate a
    checkpoint round trip). ``batch_fn`` replaces the synthetic data source.
    """
    state = state or init_state(model)
    stop = cfg.steps if stop_at is None else min(int(stop_at), cfg.steps)
    params = model.parameters()
    if len(params) != len(state.adam.m):
        raise ValueError("optimizer state does not match the model")
    biases = layer_biases(model, cfg.balance)
    n = model.config.n_experts
    window = np.zeros((model.config.num_moce_layers, n), dtype=np.int64)

    while state.step < stop:
        step = state.step
        batch = batch_fn(step) if batch_fn is not None else make_batch(cfg, step, task_params)
        model.zero_grad()
        res = compute_loss(model, cfg, batch, biases)
        loss_value = float(res.loss.data)
        if not math.isfinite(loss_value):
            raise _diagnose(model, cfg, batch, biases, step)
        res.loss.backward()
        grads = [p.grad for p in params]
        if any(g is not None and not np.all(np.isfinite(g)) for g in grads):
            raise _diagnose(model, cfg, batch, biases, step)
        lr_t = cosine_lr(step, cfg.steps, cfg.lr)
        adam_step([p.data for p in params], grads, state.adam, lr_t, cfg.betas, cfg.adam_eps)

        hist = _histograms(res.record, n)
        window += np.asarray(hist)
        record = {
            "step": step,
            "lr": lr_t,
            "loss": loss_value,
            "restoration": float(res.restoration.data),
            "aux": float(res.aux.data),
            "selected": hist,
        }
        state.log.append(record)
        state.step += 1
        if state.step % cfg.snapshot_every == 0 or state.step == cfg.steps:
            state.snapshots.append({"step": state.step, "counts": window.tolist()})
            window[:] = 0
        if on_step is not None:
            on_step(record)
        if after_step is not None:
            after_step(step, model, state)
    return state


def quantize_state(model: MoceIR, state: TrainState) -> None:
    """Round parameters and optimizer moments to float32 in place, as a checkpoint would."""
    for p in model.parameters():
        p.data[...] = p.data.astype(np.float32)
    for arr in state.adam.m + state.adam.v:
        arr[...] = arr.astype(np.float32)


def restore(model: MoceIR, degraded: np.ndarray, batch_size: int = 32, force=None) -> tuple[np.ndarray, list[ForwardRecord]]:
    """Inference over ``[N, H, W, 3]`` in chunks; returns clipped outputs and records."""
    outs, records = [], []
    with no_grad():
        for i in range(0, len(degraded), batch_size):
            rec = forward(model, degraded[i:i + batch_size], train_mode=False, force=force)
            outs.append(np.clip(rec.restored.data, 0.0, 1.0))
            rec.restored = Tensor(rec.restored.data)
            for t in rec.traces:
                t.logits_tensor = t.gate_tensor = None
            records.append(rec)
    return np.concatenate(outs), records
