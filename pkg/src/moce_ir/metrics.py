"""PSNR, SSIM and routing-statistics summaries."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_INF = float("inf")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels jointly."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(data_range**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' Gaussian filtering over the first two axes of [H, W, C]
    x = sliding_window_view(x, len(g), axis=0) @ g
    return sliding_window_view(x, len(g), axis=1) @ g


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), per channel then averaged.

    Only windows fully inside the image contribute. ``a``/``b``: ``[H, W]``
    or ``[H, W, C]``.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected [H, W] or [H, W, C], got {a.shape}")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    per_channel = (num / den).mean(axis=(0, 1))
    return float(per_channel.mean())


@dataclass
class RoutingHistogram:
    """Expert-selection statistics.

    ``frequencies[l, t, e]`` is the fraction of task-``t`` samples that layer
    ``l`` sent to expert ``e``; ``counts`` holds the raw tallies.
    """

    tasks: tuple[str, ...]
    counts: np.ndarray
    batches: int

    @property
    def n_layers(self) -> int:
        return self.counts.shape[0]

    @property
    def n_experts(self) -> int:
        return self.counts.shape[2]

    @property
    def frequencies(self) -> np.ndarray:
        totals = self.counts.sum(axis=-1, keepdims=True)
        return np.divide(self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)

    def mean_expert(self) -> np.ndarray:
        """``[layers, tasks]`` mean selected expert, 1-based."""
        return self.frequencies @ np.arange(1, self.n_experts + 1)

    def purity(self) -> np.ndarray:
        """``[layers, tasks]`` share of the dominant expert."""
        return self.frequencies.max(axis=-1)

    def task_purity(self) -> dict[str, float]:
        """Best purity any layer reaches for each task."""
        best = self.purity().max(axis=0)
        return {t: float(p) for t, p in zip(self.tasks, best)}

    def dominant(self) -> np.ndarray:
        """``[layers, tasks]`` 0-based dominant expert."""
        return self.frequencies.argmax(axis=-1)

    def layer_coverage(self) -> np.ndarray:
        return (self.counts.sum(axis=1) > 0).sum(axis=-1)

    def coverage(self) -> int:
        """Number of distinct experts used anywhere."""
        return int((self.counts.sum(axis=(0, 1)) > 0).sum())

    def max_deviation_from_uniform(self) -> np.ndarray:
        """Per layer, the largest |frequency - 1/n| over experts (all tasks pooled)."""
        pooled = self.counts.sum(axis=1)
        freq = pooled / pooled.sum(axis=-1, keepdims=True)
        return np.abs(freq - 1.0 / self.n_experts).max(axis=-1)

    def csv_rows(self) -> list[tuple]:
        freq = self.frequencies
        rows = []
        for l in range(self.n_layers):
            for t, task in enumerate(self.tasks):
                for e in range(self.n_experts):
                    rows.append((l, task, e + 1, int(self.counts[l, t, e]), float(freq[l, t, e])))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,task,expert,count,frequency\n")
        for l, task, e, c, f in self.csv_rows():
            buf.write(f"{l},{task},{e},{c},{f:.6f}\n")
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"batches={self.batches} layers={self.n_layers} experts={self.n_experts} coverage={self.coverage()}"]
        purity, dom, mean = self.purity(), self.dominant(), self.mean_expert()
        for t, task in enumerate(self.tasks):
            per_layer = " ".join(
                f"L{l}:e{dom[l, t] + 1}@{purity[l, t]:.3f}/mean{mean[l, t]:.2f}" for l in range(self.n_layers)
            )
            lines.append(f"{task}: {per_layer}")
        return "\n".join(lines) + "\n"


def routing_report(records: Iterable[tuple], n_experts: int | None = None) -> RoutingHistogram:
    """Tally selections from ``(record, task)`` pairs.

    ``record`` is a forward record (anything with ``selections()``) or a
    ``[B, layers]`` array of 0-based choices; ``task`` is one label for the
    whole batch or a sequence with one label per sample.
    """
    pairs = []
    for record, task in records:
        sel = np.asarray(record.selections() if hasattr(record, "selections") else record, dtype=np.int64)
        if sel.ndim == 1:
            sel = sel[None, :]
        labels = [task] * len(sel) if isinstance(task, str) else list(task)
        if len(labels) != len(sel):
            raise ValueError(f"{len(labels)} task labels for {len(sel)} samples")
        pairs.append((sel, labels))
    if not pairs:
        raise ValueError("routing_report needs at least one record")
    n_layers = pairs[0][0].shape[1]
    if any(sel.shape[1] != n_layers for sel, _ in pairs):
        raise ValueError("records disagree on the number of layers")
    top = max(int(sel.max()) for sel, _ in pairs) + 1
    n = top if n_experts is None else int(n_experts)
    if top > n:
        raise ValueError(f"selection index {top - 1} outside {n} experts")
    tasks: list[str] = []
    for _, labels in pairs:
        for lab in labels:
            if lab not in tasks:
                tasks.append(lab)
    counts = np.zeros((n_layers, len(tasks), n), dtype=np.int64)
    for sel, labels in pairs:
        t_idx = np.array([tasks.index(lab) for lab in labels])
        for l in range(n_layers):
            np.add.at(counts[l], (t_idx, sel[:, l]), 1)
    return RoutingHistogram(tuple(tasks), counts, len(pairs))


def selection_matrix(records: Sequence) -> np.ndarray:
    return np.concatenate([np.asarray(r.selections()) for r in records], axis=0)
