"""Keep freed activation buffers in the heap instead of returning them to the OS.

glibc serves blocks above its mmap threshold with fresh mappings, so every
new activation array pays page faults on first touch. Raising the threshold
(and the trim threshold) lets those blocks be reused, which roughly halves
the cost of elementwise ops on feature maps. No-op off glibc.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(mmap_threshold: int = 32 * 1024 * 1024, trim_threshold: int = 1 << 30) -> bool:
    if os.environ.get("MOCE_NO_MALLOPT"):
        return False
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    return bool(mallopt(_M_MMAP_THRESHOLD, mmap_threshold)) and bool(mallopt(_M_TRIM_THRESHOLD, trim_threshold))
