"""Multiply-accumulate instrumentation.

Ops that do arithmetic proportional to their operand sizes (matmul, conv,
FFT butterflies, spectral products) report into every active counter.
Elementwise ops are free by convention.
"""

from __future__ import annotations

_ACTIVE: list["MacCounter"] = []


class MacCounter:
    """Context manager collecting MACs issued while it is active."""

    def __init__(self) -> None:
        self.count = 0

    def __enter__(self) -> "MacCounter":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)


def add_macs(n: int) -> None:
    if _ACTIVE:
        n = int(n)
        for c in _ACTIVE:
            c.count += n
