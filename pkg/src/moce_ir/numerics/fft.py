"""Radix-2 decimation-in-time FFT over arbitrary axes.

Forward transforms are unnormalized; inverse transforms carry ``1/N`` per
axis, so ``ifft2(fft2(x)) == x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .counters import add_macs
from .tensor import Tensor


class FFTSizeError(ValueError):
    """Transform extent is not a power of two."""


@dataclass
class ComplexTensor:
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape:
            raise ValueError(f"real/imag shape mismatch: {self.real.shape} vs {self.imag.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexTensor":
        return cls(z.real.copy(), z.imag.copy())

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def abs(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(span: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    k = np.arange(span // 2)
    return np.exp(sign * 2j * np.pi * k / span)


def _fft_axis(z: np.ndarray, axis: int, inverse: bool) -> np.ndarray:
    """Radix-2 decimation-in-time transform along ``axis``.

    The array is viewed as ``[pre, n, post]`` so every butterfly stage works
    on contiguous blocks instead of a moved (strided) axis.
    """
    axis %= z.ndim
    shape = z.shape
    n = shape[axis]
    if not is_power_of_two(n):
        raise FFTSizeError(f"FFT extent {n} is not a power of two")
    pre = int(np.prod(shape[:axis]))
    post = int(np.prod(shape[axis + 1:]))
    z = np.take(z.reshape(pre, n, post), _bit_reverse(n), axis=1)
    half = 1
    while half < n:
        span = 2 * half
        blocks = z.reshape(pre, n // span, span, post)
        even = blocks[:, :, :half]
        odd = blocks[:, :, half:] * _twiddles(span, inverse)[:, None]
        z = np.concatenate([even + odd, even - odd], axis=2)
        half = span
    # one complex multiply (4 real MACs) per butterfly, n/2 butterflies per stage
    add_macs(pre * post * 2 * n * (n.bit_length() - 1))
    if inverse:
        z = z / n
    return z.reshape(shape)


def fft_axes(x: np.ndarray, axes=(-2, -1), inverse: bool = False) -> np.ndarray:
    """Complex transform of ``x`` along ``axes`` (array level, no autodiff)."""
    z = np.asarray(x, dtype=np.complex128)
    for ax in axes:
        z = _fft_axis(z, ax, inverse)
    return z


def fft2(x) -> ComplexTensor:
    """Unnormalized 2-D DFT over the last two axes."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim < 2:
        raise FFTSizeError("fft2 needs at least two axes")
    return ComplexTensor.from_complex(fft_axes(arr, (-2, -1)))


def ifft2(X: ComplexTensor, real_only: bool = True):
    """Inverse 2-D DFT (with 1/(h*w)); returns the real part as a Tensor by default."""
    z = fft_axes(X.to_complex(), (-2, -1), inverse=True)
    if real_only:
        return Tensor(z.real)
    return ComplexTensor.from_complex(z)

