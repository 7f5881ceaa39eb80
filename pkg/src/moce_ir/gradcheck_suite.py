"""Registered gradient checks: one small case per differentiable operation.

Each case builds random inputs and a closure reducing the op's output to a
scalar through fixed random weights, so every output element contributes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import objective
from .network import ModelConfig, build, forward
from .numerics import Tensor, grad_check_params, ops, parameter
from .trainer import layer_biases

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


def _p(rng, *shape, lo=None, scale=1.0, name="x") -> Tensor:
    x = rng.standard_normal(shape) * scale
    if lo is not None:
        # keep clear of kinks at zero
        x = np.sign(x) * (np.abs(x) + lo)
    return parameter(x, name)


def _unary(fn, lo=None, positive=False, scale=1.0, shape=(2, 3, 4)) -> Case:
    def case(rng):
        x = _p(rng, *shape, lo=lo, scale=scale)
        if positive:
            x.data[...] = np.abs(x.data) + 0.5
        w = rng.standard_normal(fn(x).shape)
        return (lambda: ops.sum(fn(x) * w)), {"x": x}
    return case


def _binary(fn, positive_b=False) -> Case:
    def case(rng):
        a = _p(rng, 2, 3, 4, name="a")
        b = _p(rng, 3, 1, name="b")
        if positive_b:
            b.data[...] = np.abs(b.data) + 0.5
        w = rng.standard_normal((2, 3, 4))
        return (lambda: ops.sum(fn(a, b) * w)), {"a": a, "b": b}
    return case


def _with_weights(make) -> Case:
    def case(rng):
        params, fn = make(rng)
        probe = fn()
        w = rng.standard_normal(probe.shape)
        return (lambda: ops.sum(fn() * w)), params
    return case


def _case_matmul(rng):
    a, b = _p(rng, 2, 3, 4, name="a"), _p(rng, 2, 4, 5, name="b")
    return {"a": a, "b": b}, lambda: ops.matmul(a, b)


def _case_matmul_shared(rng):
    a, b = _p(rng, 2, 3, 4, name="a"), _p(rng, 4, 5, name="b")
    return {"a": a, "b": b}, lambda: ops.matmul(a, b)


def _case_linear(rng):
    x, w, b = _p(rng, 2, 3, 3, 4), _p(rng, 4, 5, name="w"), _p(rng, 5, name="b")
    return {"x": x, "w": w, "b": b}, lambda: ops.linear(x, w, b)


def _case_conv(rng):
    x, w, b = _p(rng, 2, 5, 6, 3), _p(rng, 3, 3, 3, 4, name="w"), _p(rng, 4, name="b")
    return {"x": x, "w": w, "b": b}, lambda: ops.conv2d_3x3(x, w, b)


def _case_layernorm(rng):
    x, g, b = _p(rng, 2, 3, 5), _p(rng, 5, name="gamma"), _p(rng, 5, name="beta")
    return {"x": x, "gamma": g, "beta": b}, lambda: ops.layernorm(x, g, b)


def _case_correlate(rng):
    q, k = _p(rng, 2, 4, 4, 3, name="q"), _p(rng, 2, 4, 4, 3, name="k")
    return {"q": q, "k": k}, lambda: ops.circular_correlate2d(q, k, axes=(-3, -2))


def _case_take_along(rng):
    x = _p(rng, 4, 5)
    idx = rng.integers(0, 5, size=(4, 3))
    return {"x": x}, lambda: ops.take_along_last(x, idx)


def _case_concat(rng):
    a, b = _p(rng, 2, 3, name="a"), _p(rng, 2, 4, name="b")
    return {"a": a, "b": b}, lambda: ops.concat([a, b], axis=-1)


def _case_restoration(rng):
    pred = _p(rng, 2, 8, 8, 3, name="pred", scale=0.3)
    target = Tensor(rng.standard_normal((2, 8, 8, 3)) * 0.3)
    return (lambda: objective.restoration_loss(pred, target, 0.1)), {"pred": pred}


def _case_cv(rng):
    v = parameter(rng.uniform(0.5, 2.0, size=5), "v")
    return (lambda: objective.cv(v)), {"v": v}


def _gate_case(baseline: bool):
    def case(rng):
        logits = _p(rng, 6, 4, name="logits", scale=0.3)
        noise = rng.standard_normal((6, 4)) * 0.25
        bias = objective.uniform_bias(4) if baseline else objective.complexity_bias([31, 31, 60, 136])

        def f():
            stats = objective.BatchGateStats(logits, noise, None)
            return objective.aux_loss(stats, bias, 0.25)

        return f, {"logits": logits}
    return case


def _vector_case(fn):
    def case(rng):
        logits = _p(rng, 6, 4, name="logits", scale=0.3)
        noise = rng.standard_normal((6, 4)) * 0.25
        w = rng.standard_normal(4)

        def f():
            stats = objective.BatchGateStats(logits, noise, None)
            return ops.sum(fn(stats) * w)

        return f, {"logits": logits}
    return case


OP_CASES: dict[str, Case] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, positive_b=True),
    "neg": _unary(ops.neg),
    "power": _unary(lambda x: ops.power(x, 3.0)),
    "square": _unary(lambda x: ops.power(x, 2)),
    "exp": _unary(ops.exp, scale=0.5),
    "log": _unary(ops.log, positive=True),
    "sqrt": _unary(ops.sqrt, positive=True),
    "abs": _unary(ops.abs, lo=0.1),
    "tanh": _unary(ops.tanh),
    "relu": _unary(ops.relu, lo=0.1),
    "gelu": _unary(ops.gelu),
    "normal_cdf": _unary(ops.normal_cdf),
    "sum": _unary(lambda x: ops.sum(x, axis=(0, 2), keepdims=True)),
    "mean": _unary(lambda x: ops.mean(x, axis=1)),
    "reshape": _unary(lambda x: ops.reshape(x, (4, 6))),
    "transpose": _unary(lambda x: ops.transpose(x, (2, 0, 1))),
    "swapaxes": _unary(lambda x: ops.swapaxes(x, 0, 2)),
    "getitem": _unary(lambda x: x[:, 1:, ::2]),
    "getitem_fancy": _unary(lambda x: x[np.array([1, 0, 1])]),
    "take": _unary(lambda x: ops.take(x, np.array([2, 0, 2]), axis=1)),
    "take_along_last": _with_weights(_case_take_along),
    "concat": _with_weights(_case_concat),
    "matmul": _with_weights(_case_matmul),
    "matmul_shared": _with_weights(_case_matmul_shared),
    "linear": _with_weights(_case_linear),
    "conv2d_3x3": _with_weights(_case_conv),
    "softmax": _unary(ops.softmax),
    "standardize": _unary(lambda x: ops.standardize(x, axis=(-2, -1))),
    "layernorm": _with_weights(_case_layernorm),
    "l2_normalize": _unary(lambda x: ops.l2_normalize(x, axis=-2)),
    "sobel_magnitude": _unary(ops.sobel_magnitude, shape=(2, 5, 6, 3)),
    "fft2_parts": _unary(lambda x: ops.fft2_parts(x, axes=(-3, -2)), shape=(2, 4, 8, 3)),
    "circular_correlate2d": _with_weights(_case_correlate),
    "restoration_loss": _case_restoration,
    "cv": _case_cv,
    "importance": _vector_case(lambda s: objective.importance(s, [0.25, 0.25, 0.5, 1.0])),
    "load": _vector_case(lambda s: objective.load(s, 0.25)),
    "aux_loss": _gate_case(baseline=False),
    "load_balance_loss": _gate_case(baseline=True),
}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def check_op(name: str, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, sum(map(ord, name))]))
    f, params = OP_CASES[name](rng)
    errors = grad_check_params(f, params)
    return CheckResult(name, max(errors.values()), OP_TOLERANCE)


def run_op_checks(seed: int = 0) -> list[CheckResult]:
    return [check_op(name, seed) for name in OP_CASES]


def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        base_channels=8, encoder_blocks=(1, 1), decoder_blocks=(1,), refinement_blocks=1,
        n_experts=2, crop_size=16,
    )


def check_model(seed: int = 0, coords_per_param: int = 3, batch: int = 2) -> CheckResult:
    """End-to-end check of the training loss (restoration + aux) w.r.t. every parameter.

    Routing runs in train mode with fixed noise keys, so the gate and the
    auxiliary loss are both on the differentiated path.
    """
    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    model = build(cfg, rng)
    # lift weights off the tiny init so every branch carries signal
    for p in model.parameters():
        p.data += rng.standard_normal(p.shape) * 0.1
    size = cfg.crop_size
    x = rng.uniform(0, 1, size=(batch, size, size, 3))
    y = rng.uniform(0, 1, size=(batch, size, size, 3))
    keys = [(seed, 0, i) for i in range(batch)]
    biases = layer_biases(model, "complexity")
    noise_std = model.moce_layers()[0].config.noise_std

    def f():
        rec = forward(model, x, train_mode=True, noise_keys=keys)
        aux = objective.aux_loss(objective.gate_stats(rec.traces), biases, noise_std)
        return objective.restoration_loss(rec.restored, y) + 0.01 * aux

    errors = grad_check_params(f, dict(model.named_parameters()), coords_per_param=coords_per_param, rng=rng)
    worst = max(errors, key=errors.get)
    return CheckResult(f"model[{worst}]", errors[worst], MODEL_TOLERANCE)
