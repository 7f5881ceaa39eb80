"""Deterministic synthetic clean images and degradations.

Everything is keyed by explicit integer seeds so a (seed, task, params)
triple always produces the same pixels. Images are float64 ``[H, W, 3]``
arrays in [0, 1].
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .moce import ConfigError

TASKS = ("noise", "rain", "haze", "blur", "lowlight")
STANDARD_NOISE_LEVELS = (15 / 255, 25 / 255, 50 / 255)


class NonstandardParameterWarning(UserWarning):
    """A generator parameter outside the standard benchmark settings."""


@dataclass
class DegradationSample:
    clean: np.ndarray
    degraded: np.ndarray
    task: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.clean.shape != self.degraded.shape:
            raise ValueError(f"clean {self.clean.shape} and degraded {self.degraded.shape} differ")


def _rng(seed, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


def _size(size) -> tuple[int, int]:
    if isinstance(size, (int, np.integer)):
        return int(size), int(size)
    h, w = size
    return int(h), int(w)


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an [H, W, 3] image, got {img.shape}")
    return img


def _check_range(name: str, value: float, lo: float, hi: float) -> float:
    value = float(value)
    if not lo <= value <= hi:
        raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")
    return value


def make_clean(seed: int, size=32) -> np.ndarray:
    """Procedural image: colour ramp + rectangles + band-limited texture."""
    h, w = _size(size)
    rng = _rng(seed, 0)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")

    c0, c1 = rng.uniform(0.15, 0.85, size=(2, 3))
    ang = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(ang) * xx + np.sin(ang) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    img = c0 + (c1 - c0) * ramp[..., None]

    for _ in range(rng.integers(2, 6)):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        rh, rw = rng.integers(max(2, h // 8), max(3, h // 2)), rng.integers(max(2, w // 8), max(3, w // 2))
        colour = rng.uniform(0.05, 0.95, size=3)
        alpha = rng.uniform(0.5, 0.9)
        patch = img[y0:y0 + rh, x0:x0 + rw]
        patch[...] = (1 - alpha) * patch + alpha * colour

    tex = np.zeros((h, w))
    for _ in range(6):
        fy, fx = rng.uniform(-0.35, 0.35, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        tex += np.cos(2 * np.pi * (fy * np.arange(h)[:, None] + fx * np.arange(w)[None, :]) + phase)
    img = img + 0.04 * tex[..., None] * rng.uniform(0.5, 1.0, size=3)
    return np.clip(img, 0.0, 1.0)


def add_gaussian_noise(clean, sigma: float, seed: int) -> np.ndarray:
    """``clean + N(0, sigma**2)``, clipped; sigma is in [0, 1] units."""
    clean = _check_image(clean)
    sigma = _check_range("sigma", sigma, 0.0, 1.0)
    if sigma and not any(np.isclose(sigma, s) for s in STANDARD_NOISE_LEVELS):
        warnings.warn(f"noise sigma {sigma * 255:.3g}/255 is not one of 15, 25, 50", NonstandardParameterWarning, stacklevel=2)
    if sigma == 0:
        return clean.copy()
    noise = _rng(seed, 1).normal(0.0, sigma, size=clean.shape)
    return np.clip(clean + noise, 0.0, 1.0)


def synthesize_haze(clean, beta: float, airlight: float, seed: int = 0) -> np.ndarray:
    """Atmospheric scattering over a left-to-right linear depth ramp."""
    clean = _check_image(clean)
    beta = _check_range("beta", beta, 0.0, 10.0)
    airlight = _check_range("airlight", airlight, 0.0, 1.0)
    depth = np.linspace(0.0, 1.0, clean.shape[1])[None, :, None]
    t = np.exp(-beta * depth)
    return np.clip(clean * t + airlight * (1.0 - t), 0.0, 1.0)


def _streak_layer(shape: tuple[int, int], count: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    layer = np.zeros((h, w))
    max_len = max(4, min(h, w) // 3)
    for _ in range(count):
        theta = np.deg2rad(angle + rng.uniform(-5.0, 5.0))
        dy, dx = np.cos(theta), np.sin(theta)
        length = rng.integers(3, max_len + 1)
        y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
        level = rng.uniform(0.5, 0.9)
        steps = np.arange(0, length, 0.5)
        ys = np.floor(y0 + steps * dy).astype(int) % h
        xs = np.floor(x0 + steps * dx).astype(int) % w
        np.maximum.at(layer, (ys, xs), level)
    return layer


def synthesize_rain(clean, streak_count: int, angle: float, seed: int) -> np.ndarray:
    """Additive thin bright streaks; ``angle`` is degrees from vertical."""
    clean = _check_image(clean)
    count = int(_check_range("streak_count", streak_count, 0, 100_000))
    angle = _check_range("angle", angle, -60.0, 60.0)
    layer = _streak_layer(clean.shape[:2], count, angle, _rng(seed, 2))
    return np.clip(clean + layer[..., None], 0.0, 1.0)


def synthesize_blur(clean, kernel_sigma: float, seed: int = 0) -> np.ndarray:
    """Isotropic Gaussian blur with reflective borders."""
    clean = _check_image(clean)
    kernel_sigma = _check_range("kernel_sigma", kernel_sigma, 0.0, 16.0)
    if kernel_sigma == 0:
        return clean.copy()
    return np.clip(gaussian_filter(clean, sigma=(kernel_sigma, kernel_sigma, 0), mode="reflect"), 0.0, 1.0)


def synthesize_lowlight(clean, gamma: float, gain: float, seed: int = 0) -> np.ndarray:
    """``gain * clean**gamma`` with gamma >= 1 and gain <= 1."""
    clean = _check_image(clean)
    gamma = _check_range("gamma", gamma, 1.0, 8.0)
    gain = _check_range("gain", gain, 1e-3, 1.0)
    return np.clip(gain * clean**gamma, 0.0, 1.0)


def default_params(task: str, size=32) -> dict:
    h, w = _size(size)
    if task == "noise":
        return {"sigma": 25 / 255}
    if task == "rain":
        return {"streak_count": max(1, round(h * w / 64)), "angle": 15.0}
    if task == "haze":
        return {"beta": 1.2, "airlight": 0.85}
    if task == "blur":
        return {"kernel_sigma": 1.5}
    if task == "lowlight":
        return {"gamma": 2.0, "gain": 0.4}
    raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


def degrade(clean, task: str, params: dict, seed: int) -> np.ndarray:
    if task == "noise":
        return add_gaussian_noise(clean, params["sigma"], seed)
    if task == "rain":
        return synthesize_rain(clean, params["streak_count"], params["angle"], seed)
    if task == "haze":
        return synthesize_haze(clean, params["beta"], params["airlight"], seed)
    if task == "blur":
        return synthesize_blur(clean, params["kernel_sigma"], seed)
    if task == "lowlight":
        return synthesize_lowlight(clean, params["gamma"], params["gain"], seed)
    raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")


def make_sample(task: str, seed: int, size=32, params: dict | None = None) -> DegradationSample:
    """Clean image and its degradation, both derived from ``seed``."""
    merged = default_params(task, size)
    if params:
        unknown = set(params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown {task} parameters: {sorted(unknown)}")
        merged.update(params)
    clean = make_clean(seed, size)
    degraded = degrade(clean, task, merged, seed)
    return DegradationSample(clean, degraded, task, merged, int(seed))


def make_dataset(
    tasks: Sequence[str], n_samples: int, seed: int, size=32, params: dict | None = None
) -> list[DegradationSample]:
    """``n_samples`` samples cycling through ``tasks``.

    Sample ``i`` uses image seed ``(seed, i)`` folded to 63 bits, so sets made
    with different ``seed`` values share no images. ``params`` maps a task
    name to parameter overrides.
    """
    params = params or {}
    out = []
    for i in range(n_samples):
        task = tasks[i % len(tasks)]
        s = int(np.random.SeedSequence([int(seed), i]).generate_state(1, np.uint64)[0] >> np.uint64(1))
        out.append(make_sample(task, s, size, params.get(task)))
    return out


def export_samples(samples: Sequence[DegradationSample], path) -> tuple[Path, Path]:
    """Write ``path.bin`` (little-endian float32, clean then degraded per
    sample) and ``path.manifest`` with one JSON line per sample."""
    path = Path(path)
    bin_path, manifest_path = path.with_suffix(".bin"), path.with_suffix(".manifest")
    offset = 0
    lines = []
    with open(bin_path, "wb") as fh:
        for i, s in enumerate(samples):
            for arr in (s.clean, s.degraded):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            count = int(s.clean.size)
            lines.append(json.dumps({
                "index": i, "task": s.task, "seed": s.seed, "shape": list(s.clean.shape),
                "offset": offset, "count": count, "params": s.params,
            }, sort_keys=True))
            offset += 2 * count * 4
    manifest_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return bin_path, manifest_path


def load_samples(path) -> list[DegradationSample]:
    path = Path(path)
    raw = path.with_suffix(".bin").read_bytes()
    out = []
    for line in path.with_suffix(".manifest").read_text().splitlines():
        meta = json.loads(line)
        count, off = meta["count"], meta["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=2 * count, offset=off).astype(np.float64)
        shape = tuple(meta["shape"])
        out.append(DegradationSample(
            arr[:count].reshape(shape), arr[count:].reshape(shape), meta["task"], meta["params"], meta["seed"]
        ))
    return out
