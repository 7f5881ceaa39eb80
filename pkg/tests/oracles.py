"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops, direct sums) and share no
code with the package beyond plain numpy.
"""

from __future__ import annotations

import math

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_dft2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Direct O(N^4) 2-D DFT of an ``[h, w]`` array."""
    h, w = x.shape
    sign = 1.0 if inverse else -1.0
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            s = 0j
            for y in range(h):
                for xx in range(w):
                    s += x[y, xx] * complex(math.cos(sign * 2 * math.pi * (u * y / h + v * xx / w)),
                                            math.sin(sign * 2 * math.pi * (u * y / h + v * xx / w)))
            out[u, v] = s
    if inverse:
        out /= h * w
    return out


def naive_conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 cross-correlation, ``x: [H, W, Cin]``, ``w: [3, 3, Cin, Cout]``."""
    h, wd, cin = x.shape
    cout = w.shape[-1]
    out = np.zeros((h, wd, cout))
    for i in range(h):
        for j in range(wd):
            for o in range(cout):
                s = b[o]
                for di in range(3):
                    for dj in range(3):
                        y, xx = i + di - 1, j + dj - 1
                        if 0 <= y < h and 0 <= xx < wd:
                            for c in range(cin):
                                s += x[y, xx, c] * w[di, dj, c, o]
                out[i, j, o] = s
    return out


def naive_circular_correlation(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """``A[t] = sum_s q[s + t] * k[s]`` with indices mod the extent, ``[h, w]`` arrays."""
    h, w = q.shape
    out = np.zeros((h, w))
    for ty in range(h):
        for tx in range(w):
            s = 0.0
            for sy in range(h):
                for sx in range(w):
                    s += q[(sy + ty) % h, (sx + tx) % w] * k[sy, sx]
            out[ty, tx] = s
    return out


def naive_sobel_magnitude(x: np.ndarray) -> np.ndarray:
    """Interior-pixel Sobel magnitude of an ``[H, W]`` array."""
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    ky = kx.T
    h, w = x.shape
    out = np.zeros((h - 2, w - 2))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            patch = x[i - 1:i + 2, j - 1:j + 2]
            out[i - 1, j - 1] = math.hypot(float((patch * kx).sum()), float((patch * ky).sum()))
    return out


def mc_load(logits: np.ndarray, noise: np.ndarray, std: float, draws: int, rng) -> np.ndarray:
    """Monte-Carlo estimate of the expected selection count per expert.

    For expert ``i`` only its own noise is redrawn; the other experts keep
    their realised noisy logits, so the estimate targets
    ``P(logit_i + eps > max_{j != i} (logit_j + noise_j))``.
    """
    b, n = logits.shape
    noisy = logits + noise
    out = np.zeros(n)
    for i in range(n):
        rivals = np.delete(noisy, i, axis=1).max(axis=1)
        eps = rng.normal(0.0, std, size=(draws, b))
        out[i] = (logits[:, i] + eps > rivals).mean(axis=0).sum()
    return out


def linear_params(cin: int, cout: int, bias: bool = True) -> int:
    return cin * cout + (cout if bias else 0)


def expert_params(channels: int, width: int) -> int:
    """Projection in, query/key/value maps, projection out."""
    return linear_params(channels, width) + 3 * linear_params(width, width) + linear_params(width, channels)


def channel_attention_params(channels: int) -> int:
    """Query, key, value and output maps plus one temperature."""
    return 4 * linear_params(channels, channels) + 1


def moce_layer_params(channels: int, widths: list[int], n: int) -> int:
    router = 2 * channels * n
    return router + sum(expert_params(channels, r) for r in widths) + 2 * channel_attention_params(channels)


def ssim_reference(a: np.ndarray, b: np.ndarray) -> float:
    from skimage.metrics import structural_similarity

    return float(structural_similarity(
        a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0, channel_axis=-1
    ))


def direct_dft2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Direct 2-D DFT sum, vectorised over input pixels one output row at a time.

    Same O(N^4) sum as :func:`naive_dft2`; phases are reduced mod the extent
    before scaling so large sizes keep full precision.
    """
    h, w = x.shape
    sign = 1.0 if inverse else -1.0
    y = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]
    v = np.arange(w)[:, None, None]
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        ph = ((u * y) % h)[None] / h + ((v * xx[None]) % w) / w  # [w, h, w]
        kernel = np.exp(sign * 2j * np.pi * ph)
        out[u] = (kernel * x[None]).sum(axis=(1, 2))
    if inverse:
        out /= h * w
    return out


def shifted_circular_correlation(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Same sum as :func:`naive_circular_correlation`, one shift at a time."""
    h, w = q.shape
    out = np.zeros((h, w))
    for ty in range(h):
        for tx in range(w):
            out[ty, tx] = (np.roll(q, (-ty, -tx), axis=(0, 1)) * k).sum()
    return out
