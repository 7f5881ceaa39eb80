"""Training objectives: RGB + Fourier L1 reconstruction and the routing auxiliary loss.

The auxiliary loss is ``0.5 * CV(Imp)**2 + 0.5 * CV(Load)**2`` per MoCE layer,
averaged over layers. ``Imp`` sums the noise-free routing probabilities over
the batch and scales them by a complexity bias ``b``; ``Load`` is the smooth
expected selection count under the routing noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .moce import BIAS_NORMS, ConfigError, RoutingTrace
from .numerics import Tensor, as_tensor, ops

DEFAULT_FOURIER_WEIGHT = 0.1
DEFAULT_AUX_WEIGHT = 1e-4


@dataclass(frozen=True)
class BiasVector:
    values: np.ndarray
    mode: str = "p_max"

    def __len__(self) -> int:
        return len(self.values)


def complexity_bias(param_counts: Sequence[float], mode: str = "p_max") -> BiasVector:
    """Normalise per-expert parameter counts by the largest (or, as an ablation, smallest)."""
    if mode not in BIAS_NORMS:
        raise ConfigError(f"bias mode must be one of {BIAS_NORMS}, got {mode!r}")
    p = np.asarray(param_counts, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ConfigError("param_counts must be a non-empty 1-D sequence")
    if np.any(p <= 0):
        raise ConfigError(f"parameter counts must be positive, got {p.tolist()}")
    ref = p.max() if mode == "p_max" else p.min()
    return BiasVector(p / ref, mode)


def uniform_bias(n: int) -> BiasVector:
    """All-ones bias: the plain load-balancing baseline."""
    return BiasVector(np.ones(n), "uniform")


@dataclass
class BatchGateStats:
    """Router outputs of one layer over a batch.

    ``logits`` are the clean (noise-free) router logits ``[B, n]``; ``noise``
    is the realised routing noise and ``selected`` the 0-based choices.
    """

    logits: Tensor
    noise: np.ndarray
    selected: np.ndarray

    def __post_init__(self):
        self.logits = as_tensor(self.logits)
        self.noise = np.asarray(self.noise, dtype=np.float64)
        if self.logits.ndim != 2 or self.noise.shape != self.logits.shape:
            raise ops.ShapeError(f"logits {self.logits.shape} and noise {self.noise.shape} must be [B, n]")
        if self.selected is None:
            self.selected = np.argmax(self.logits.data + self.noise, axis=-1)
        self.selected = np.asarray(self.selected, dtype=np.int64)

    @classmethod
    def from_trace(cls, trace: RoutingTrace) -> "BatchGateStats":
        logits = trace.logits_tensor if trace.logits_tensor is not None else Tensor(trace.logits)
        return cls(logits, trace.noise, trace.selected)

    @property
    def batch_size(self) -> int:
        return self.logits.shape[0]

    @property
    def n(self) -> int:
        return self.logits.shape[1]

    def probs(self) -> Tensor:
        return ops.softmax(self.logits)


def gate_stats(traces: Iterable[RoutingTrace]) -> list[BatchGateStats]:
    return [BatchGateStats.from_trace(t) for t in traces]


def _bias_array(b, n: int) -> np.ndarray:
    arr = np.asarray(b.values if isinstance(b, BiasVector) else b, dtype=np.float64)
    if arr.shape != (n,):
        raise ops.ShapeError(f"bias has shape {arr.shape}, expected ({n},)")
    return arr


def importance(stats: BatchGateStats, b) -> Tensor:
    if stats.batch_size == 0:
        raise ValueError("importance needs a non-empty batch")
    return ops.sum(stats.probs(), axis=0) * _bias_array(b, stats.n)


def _rival_index(noisy: np.ndarray) -> np.ndarray:
    """For each expert i, the index of the largest noisy logit among j != i."""
    b, n = noisy.shape
    out = np.empty((b, n), dtype=np.intp)
    for i in range(n):
        masked = noisy.copy()
        masked[:, i] = -np.inf
        out[:, i] = np.argmax(masked, axis=-1)
    return out


def load(stats: BatchGateStats, noise_std: float) -> Tensor:
    """``Load_i = sum_x Phi((logit_i - theta_-i) / noise_std)``.

    ``theta_-i`` is the best realised noisy logit among the other experts,
    i.e. the threshold expert i's own noise must clear to be selected.
    Gradients flow into both the logit and the threshold.
    """
    if noise_std <= 0:
        raise ValueError(f"noise_std must be positive, got {noise_std}")
    noisy = stats.logits + Tensor(stats.noise)
    theta = ops.take_along_last(noisy, _rival_index(noisy.data))
    return ops.sum(ops.normal_cdf((stats.logits - theta) / noise_std), axis=0)


def _moments(v: Tensor) -> tuple[Tensor, Tensor]:
    v = as_tensor(v)
    if v.ndim != 1:
        raise ops.ShapeError(f"cv expects a vector, got {v.shape}")
    m = ops.mean(v)
    if not m.data > 0:
        raise ValueError(f"coefficient of variation needs a positive mean, got {float(m.data)}")
    d = v - m
    return m, ops.mean(d * d)


def cv(v) -> Tensor:
    """Population standard deviation over mean."""
    m, var = _moments(v)
    return ops.sqrt(var) / m


def cv_squared(v) -> Tensor:
    # avoids the sqrt kink at a uniform vector
    m, var = _moments(v)
    return var / (m * m)


def layer_aux_loss(stats: BatchGateStats, b, noise_std: float) -> Tensor:
    return 0.5 * cv_squared(importance(stats, b)) + 0.5 * cv_squared(load(stats, noise_std))


def aux_loss(stats: BatchGateStats | Sequence[BatchGateStats], b, noise_std: float) -> Tensor:
    """Mean over layers of the per-layer auxiliary loss.

    ``b`` is one bias for all layers or a sequence with one per layer.
    """
    if isinstance(stats, BatchGateStats):
        stats = [stats]
    if not stats:
        raise ValueError("aux_loss needs at least one layer")
    biases = b if isinstance(b, (list, tuple)) else [b] * len(stats)
    if len(biases) != len(stats):
        raise ValueError(f"{len(biases)} biases for {len(stats)} layers")
    total = None
    for s, bias in zip(stats, biases):
        term = layer_aux_loss(s, bias, noise_std)
        total = term if total is None else total + term
    return total / len(stats)


def load_balance_loss(stats, noise_std: float) -> Tensor:
    """The baseline auxiliary loss with ``b`` fixed to ones."""
    first = stats if isinstance(stats, BatchGateStats) else stats[0]
    return aux_loss(stats, uniform_bias(first.n), noise_std)


def restoration_loss(pred, target, fourier_weight: float = DEFAULT_FOURIER_WEIGHT) -> Tensor:
    """``mean|d| + w * sum_c mean|fft2(d_c)|`` with ``d = pred - target``.

    Works on ``[H, W, C]`` or batched ``[B, H, W, C]``; the Fourier term uses
    the complex modulus and means over every axis except channels.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ops.ShapeError(f"pred {pred.shape} vs target {target.shape}")
    if pred.ndim < 3:
        raise ops.ShapeError(f"expected [..., H, W, C], got {pred.shape}")
    d = pred - target
    loss = ops.mean(ops.abs(d))
    if fourier_weight:
        parts = ops.fft2_parts(d, axes=(-3, -2))
        modulus = ops.sqrt(ops.sum(parts * parts, axis=-1))
        loss = loss + fourier_weight * pred.shape[-1] * ops.mean(modulus)
    return loss


def total_loss(restoration, aux, aux_weight: float = DEFAULT_AUX_WEIGHT) -> Tensor:
    restoration = as_tensor(restoration)
    if not aux_weight:
        return restoration
    return restoration + aux_weight * as_tensor(aux)
