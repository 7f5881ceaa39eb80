import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from moce_ir.degradations import make_dataset
from moce_ir.estimator import MoceRestorer


def _data(n=6):
    ds = make_dataset(("noise",), n, seed=3, size=16)
    return np.stack([s.degraded for s in ds]), np.stack([s.clean for s in ds])


def _small(**kw):
    base = dict(encoder_blocks=(1, 1), decoder_blocks=(1,), n_experts=2, steps=3, batch_size=2)
    base.update(kw)
    return MoceRestorer(**base)


def test_fit_predict_score():
    X, y = _data()
    est = _small().fit(X, y)
    pred = est.predict(X)
    assert pred.shape == X.shape
    assert len(est.log_) == 3
    assert np.isfinite(est.score(X, y))
    r = est.routing(X)
    assert r.shape == (6, 1) and r.min() >= 1 and r.max() <= 2


def test_fit_is_deterministic():
    X, y = _data()
    a = _small().fit(X, y).predict(X)
    b = _small().fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)


def test_params_and_clone():
    est = _small(lr=5e-4)
    assert clone(est).get_params()["lr"] == 5e-4


def test_not_fitted():
    with pytest.raises(NotFittedError):
        _small().predict(np.zeros((1, 16, 16, 3)))


def test_input_validation():
    X, y = _data(2)
    with pytest.raises(ValueError):
        _small().fit(X[..., :2], y[..., :2])
    with pytest.raises(ValueError):
        _small().fit(X * 2, y)
    with pytest.raises(ValueError):
        _small().fit(X, y[:1])
