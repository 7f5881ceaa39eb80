"""Tensor core: autodiff, FFT, MAC counters and the gradient oracle."""

from . import ops
from ._alloc import tune_allocator
from .counters import MacCounter, add_macs
from .fft import ComplexTensor, FFTSizeError, fft2, fft_axes, ifft2, is_power_of_two
from .gradcheck import GradCheckError, grad_check, grad_check_params
from .ops import ShapeError
from .tensor import GraphError, NonFiniteError, Tensor, as_tensor, detect_anomaly, no_grad, parameter

ALLOCATOR_TUNED = tune_allocator()

__all__ = [
    "ComplexTensor",
    "FFTSizeError",
    "GradCheckError",
    "GraphError",
    "MacCounter",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "add_macs",
    "as_tensor",
    "detect_anomaly",
    "fft2",
    "fft_axes",
    "grad_check",
    "grad_check_params",
    "ifft2",
    "is_power_of_two",
    "no_grad",
    "ops",
    "parameter",
]
