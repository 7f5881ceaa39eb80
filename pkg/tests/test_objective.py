import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moce_ir import ConfigError
from moce_ir.numerics import ShapeError, Tensor, grad_check, ops
from moce_ir.objective import (
    BatchGateStats,
    aux_loss,
    complexity_bias,
    cv,
    cv_squared,
    importance,
    load,
    load_balance_loss,
    restoration_loss,
    total_loss,
    uniform_bias,
)

from oracles import mc_load


def test_complexity_bias_normalises():
    b = complexity_bias([10, 20, 40, 80])
    np.testing.assert_allclose(b.values, [0.125, 0.25, 0.5, 1.0])
    b = complexity_bias([10, 20, 40, 80], "p_min")
    np.testing.assert_allclose(b.values, [1, 2, 4, 8])


@pytest.mark.parametrize("counts,mode", [([1, 0, 2], "p_max"), ([], "p_max"), ([1, 2], "mean")])
def test_complexity_bias_rejects(counts, mode):
    with pytest.raises(ConfigError):
        complexity_bias(counts, mode)


def test_cv_known_values():
    assert cv([1.0, 1.0, 1.0]).data == 0.0
    # population std of [1, 3] is 1, mean 2
    assert cv([1.0, 3.0]).data == pytest.approx(0.5)
    assert cv_squared([1.0, 3.0]).data == pytest.approx(0.25)


def test_cv_needs_positive_mean():
    with pytest.raises(ValueError):
        cv([0.0, 0.0])
    with pytest.raises(ShapeError):
        cv(np.ones((2, 2)))


@given(arrays(np.float64, 5, elements=st.floats(0.1, 10)), st.floats(0.1, 100))
@settings(max_examples=40, deadline=None)
def test_cv_scale_invariant(v, k):
    assert cv(v).data == pytest.approx(cv(v * k).data, rel=1e-9, abs=1e-12)


def test_importance_is_biased_probability_mass():
    logits = np.log(np.array([[1, 1, 2], [2, 1, 1]], dtype=float))
    stats = BatchGateStats(logits, np.zeros((2, 3)), None)
    np.testing.assert_allclose(importance(stats, [1, 1, 1]).data, [0.75, 0.5, 0.75])
    np.testing.assert_allclose(importance(stats, [0.5, 1, 2]).data, [0.375, 0.5, 1.5])


def test_load_matches_monte_carlo():
    rng = np.random.default_rng(0)
    logits = rng.normal(0, 0.3, size=(6, 4))
    noise = rng.normal(0, 0.25, size=(6, 4))
    stats = BatchGateStats(logits, noise, None)
    got = load(stats, 0.25).data
    ref = mc_load(logits, noise, 0.25, 200_000, rng)
    np.testing.assert_allclose(got, ref, atol=0.01)


def test_load_rejects_bad_std():
    stats = BatchGateStats(np.zeros((2, 3)), np.zeros((2, 3)), None)
    with pytest.raises(ValueError):
        load(stats, 0.0)


def test_stats_shape_validation():
    with pytest.raises(ShapeError):
        BatchGateStats(np.zeros((2, 3)), np.zeros((2, 4)), None)


def test_aux_loss_zero_when_balanced():
    stats = BatchGateStats(np.zeros((8, 4)), np.zeros((8, 4)), None)
    assert aux_loss(stats, uniform_bias(4), 0.25).data == 0.0


def test_aux_loss_averages_layers():
    rng = np.random.default_rng(1)
    s1 = BatchGateStats(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) * 0.3, None)
    s2 = BatchGateStats(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) * 0.3, None)
    b = uniform_bias(3)
    both = aux_loss([s1, s2], [b, b], 0.3).data
    assert both == pytest.approx(0.5 * (aux_loss(s1, b, 0.3).data + aux_loss(s2, b, 0.3).data))
    assert load_balance_loss([s1, s2], 0.3).data == pytest.approx(both)
    with pytest.raises(ValueError):
        aux_loss([s1, s2], [b], 0.3)


def test_aux_loss_gradient():
    rng = np.random.default_rng(2)
    noise = rng.normal(0, 0.25, size=(5, 4))
    b = complexity_bias([1, 2, 4, 8])

    def f(x):
        return aux_loss(BatchGateStats(x, noise, None), b, 0.25)

    assert grad_check(f, rng.normal(0, 0.5, size=(5, 4))) < 1e-6


def test_restoration_loss_zero_at_target():
    x = np.random.default_rng(3).uniform(size=(2, 8, 8, 3))
    assert restoration_loss(x, x).data == 0.0


def test_restoration_loss_l1_part():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.5)
    assert restoration_loss(a, b, fourier_weight=0.0).data == pytest.approx(0.5)
    # a constant offset puts all spectral energy in the DC bin: |F| = 16 * 0.5 there
    want = 0.5 + 0.1 * 3 * (8.0 / 16)
    assert restoration_loss(a, b, fourier_weight=0.1).data == pytest.approx(want)


def test_restoration_loss_gradient():
    rng = np.random.default_rng(4)
    target = rng.uniform(size=(1, 4, 4, 2))
    assert grad_check(lambda p: restoration_loss(p, target), rng.uniform(size=(1, 4, 4, 2))) < 1e-6


def test_restoration_loss_shape_checks():
    with pytest.raises(ShapeError):
        restoration_loss(np.zeros((4, 4, 3)), np.zeros((4, 4, 2)))


def test_total_loss():
    assert total_loss(Tensor(1.0), Tensor(2.0), 0.5).data == 2.0
    assert total_loss(Tensor(1.0), Tensor(2.0), 0.0).data == 1.0
    assert ops.sum(Tensor(np.ones(2))).data == 2.0
