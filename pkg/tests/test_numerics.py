import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moce_ir.numerics import (
    FFTSizeError,
    GraphError,
    MacCounter,
    NonFiniteError,
    ShapeError,
    Tensor,
    detect_anomaly,
    fft2,
    grad_check,
    ifft2,
    no_grad,
    ops,
    parameter,
)

from oracles import naive_circular_correlation, naive_conv3x3, naive_dft2, naive_matmul, naive_sobel_magnitude


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
def test_fft2_matches_direct_sum(n):
    x = np.random.default_rng(n).normal(size=(n, n))
    np.testing.assert_allclose(fft2(x).to_complex(), naive_dft2(x), atol=1e-10)


def test_fft2_rectangular_and_batched():
    x = np.random.default_rng(0).normal(size=(3, 4, 8))
    got = fft2(x).to_complex()
    for i in range(3):
        np.testing.assert_allclose(got[i], naive_dft2(x[i]), atol=1e-10)


def test_ifft2_inverts():
    x = np.random.default_rng(1).normal(size=(2, 16, 8))
    np.testing.assert_allclose(ifft2(fft2(x)).data, x, atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(FFTSizeError):
        fft2(np.zeros((6, 8)))


def test_fft_counts_macs():
    with MacCounter() as c:
        fft2(np.zeros((8, 8)))
    assert c.count > 0


@given(arrays(np.float64, (4, 4), elements=st.floats(-10, 10)))
@settings(max_examples=25, deadline=None)
def test_parseval(x):
    X = fft2(x).to_complex()
    assert np.isclose((np.abs(X) ** 2).sum(), x.size * (x**2).sum(), rtol=1e-9, atol=1e-9)


def test_circular_correlation_matches_loops():
    rng = np.random.default_rng(2)
    q = rng.normal(size=(8, 4, 1))
    k = rng.normal(size=(8, 4, 1))
    got = ops.circular_correlate2d(q, k).data[..., 0]
    np.testing.assert_allclose(got, naive_circular_correlation(q[..., 0], k[..., 0]), atol=1e-10)


def test_circular_correlation_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.circular_correlate2d(np.zeros((4, 4, 1)), np.zeros((4, 8, 1)))


def test_matmul_matches_loops():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(ops.matmul(a, b).data, naive_matmul(a, b), atol=1e-12)


def test_matmul_counts_macs():
    with MacCounter() as c:
        ops.matmul(np.ones((2, 5, 7)), np.ones((7, 3)))
    assert c.count == 2 * 5 * 7 * 3


def test_conv3x3_matches_loops():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 6, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    b = rng.normal(size=3)
    got = ops.conv2d_3x3(x[None], w, b).data[0]
    np.testing.assert_allclose(got, naive_conv3x3(x, w, b), atol=1e-12)


def test_sobel_matches_loops():
    x = np.random.default_rng(5).normal(size=(6, 7, 1))
    np.testing.assert_allclose(ops.sobel_magnitude(x).data[..., 0], naive_sobel_magnitude(x[..., 0]), atol=1e-12)


def test_sobel_of_constant_is_zero_with_zero_grad():
    x = Tensor(np.full((5, 5, 2), 0.3), requires_grad=True)
    out = ops.sum(ops.sobel_magnitude(x))
    out.backward()
    assert out.data == 0.0
    assert np.all(x.grad == 0.0)


def test_sobel_too_small():
    with pytest.raises(ShapeError):
        ops.sobel_magnitude(np.zeros((2, 5, 1)))


def test_softmax_rows_sum_to_one_and_stable():
    x = np.array([[1000.0, 1000.0, -1000.0], [0.0, 1.0, 2.0]])
    p = ops.softmax(x).data
    np.testing.assert_allclose(p.sum(-1), 1.0)
    np.testing.assert_allclose(p[0], [0.5, 0.5, 0.0])


def test_standardize_moments():
    x = np.random.default_rng(6).normal(3.0, 2.0, size=(4, 8, 8, 2))
    y = ops.standardize(x, axis=(-3, -2)).data
    np.testing.assert_allclose(y.mean(axis=(-3, -2)), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=(-3, -2)), 1.0, atol=1e-5)


def test_broadcast_gradient_unbroadcasts():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    ops.sum(a * b).backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3.0)


def test_gradient_accumulates_through_shared_node():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x
    ops.sum(y).backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        (x * 2).backward()


def test_no_grad_records_nothing():
    x = parameter(np.ones(3))
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_detect_anomaly_names_op():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    with pytest.raises(NonFiniteError) as err, detect_anomaly(), np.errstate(invalid="ignore"):
        ops.log(x)
    assert "log" in str(err.value)


@pytest.mark.parametrize(
    "fn",
    [
        lambda x: ops.sum(ops.gelu(x) * ops.tanh(x)),
        lambda x: ops.sum(ops.softmax(x) ** 2),
        lambda x: ops.sum(ops.l2_normalize(x, axis=-1) * np.arange(4.0)),
        lambda x: ops.sum(ops.standardize(x, axis=-1) * np.arange(4.0)),
        lambda x: ops.sum(ops.normal_cdf(x)),
    ],
)
def test_grad_check_small_ops(fn):
    x = np.random.default_rng(7).normal(size=(3, 4))
    assert grad_check(fn, x) < 1e-6


def test_grad_check_detects_wrong_gradient():
    from moce_ir.numerics.tensor import make_result

    def bad_square(a):
        return make_result(a.data**2, (a,), lambda g: (g * a.data,), "bad_square")

    err = grad_check(lambda x: ops.sum(bad_square(x)), np.array([1.0, 2.0]))
    assert err > 0.1


@given(
    arrays(np.float64, (2, 3), elements=st.floats(-3, 3)),
    arrays(np.float64, (3,), elements=st.floats(-3, 3)),
)
@settings(max_examples=30, deadline=None)
def test_linear_is_affine(x, w_col):
    w = np.stack([w_col, 2 * w_col], axis=1)
    b = np.array([0.5, -0.5])
    np.testing.assert_allclose(ops.linear(x, w, b).data, x @ w + b, atol=1e-12)
