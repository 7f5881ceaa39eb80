"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


class GradCheckError(ValueError):
    """The checked function does not return a scalar."""


def _scalar(value) -> float:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if arr.size != 1:
        raise GradCheckError(f"grad_check needs a scalar-valued function, got shape {arr.shape}")
    return float(arr.reshape(()))


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between the tape gradient of ``f`` and central differences.

    The error per coordinate is ``|a - n| / max(1, |a|, |n|)``. ``coords``
    restricts the check to a random subset of coordinates (all by default).
    ``f`` is re-evaluated with ``point`` perturbed in place, so it must read
    the tensor it is given rather than a copy taken earlier.
    """
    x = point if isinstance(point, Tensor) else Tensor(point)
    x.requires_grad = True
    x.grad = None
    out = f(x)
    _scalar(out)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else np.array(x.grad, dtype=np.float64)

    flat = x.data.reshape(-1)
    idx = np.arange(flat.size)
    if coords is not None and coords < flat.size:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(flat.size, size=coords, replace=False))
    worst = 0.0
    a_flat = analytic.reshape(-1)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f(x))
        flat[i] = orig - step
        fm = _scalar(f(x))
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * step)
        a = a_flat[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst


def grad_check_params(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Gradient check of a closure w.r.t. every tensor in ``params``.

    Returns the max relative error per parameter name.
    """
    for p in params.values():
        p.grad = None
    out = f()
    _scalar(out)
    out.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else np.array(p.grad)) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords_per_param is not None and coords_per_param < flat.size:
            idx = np.sort(rng.choice(flat.size, size=coords_per_param, replace=False))
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(f())
            flat[i] = orig - step
            fm = _scalar(f())
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]), abs(numeric)))
        errors[name] = worst
    return errors
