"""Desk-scale mixture-of-complexity-experts image restoration."""

import os as _os

# MOCE_THREADS caps BLAS worker threads; only effective before numpy loads
_threads = _os.environ.get("MOCE_THREADS", "")
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .moce import ConfigError, MoceLayer, MoceLayerConfig, embed_widths, expert_specs
from .network import ForwardRecord, ModelConfig, MoceIR, build, count_flops, forward

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ForwardRecord",
    "ModelConfig",
    "MoceIR",
    "MoceLayer",
    "MoceLayerConfig",
    "build",
    "count_flops",
    "embed_widths",
    "expert_specs",
    "forward",
]
