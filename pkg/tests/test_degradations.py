import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moce_ir import ConfigError
from moce_ir import degradations as dg
from moce_ir.metrics import psnr


@given(st.integers(0, 2**32), st.sampled_from(dg.TASKS))
@settings(max_examples=25, deadline=None)
def test_samples_in_range_and_reproducible(seed, task):
    a = dg.make_sample(task, seed, 16)
    b = dg.make_sample(task, seed, 16)
    assert a.clean.shape == a.degraded.shape == (16, 16, 3)
    assert 0.0 <= a.degraded.min() and a.degraded.max() <= 1.0
    np.testing.assert_array_equal(a.degraded, b.degraded)


def test_noise_statistics():
    clean = np.full((128, 128, 3), 0.5)
    out = dg.add_gaussian_noise(clean, 25 / 255, seed=0)
    assert (out - clean).std() == pytest.approx(25 / 255, rel=0.02)
    assert abs((out - clean).mean()) < 1e-3


def test_nonstandard_noise_level_warns():
    with pytest.warns(dg.NonstandardParameterWarning):
        dg.add_gaussian_noise(np.zeros((4, 4, 3)), 0.2, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        dg.add_gaussian_noise(np.zeros((4, 4, 3)), 15 / 255, 0)


def test_haze_follows_scattering_model():
    clean = np.full((4, 5, 3), 0.2)
    out = dg.synthesize_haze(clean, beta=1.0, airlight=0.9)
    # depth 0 on the left column leaves the image untouched
    np.testing.assert_allclose(out[:, 0], 0.2)
    t = np.exp(-1.0)
    np.testing.assert_allclose(out[:, -1], 0.2 * t + 0.9 * (1 - t))


def test_rain_only_brightens():
    clean = dg.make_clean(1, 32)
    out = dg.synthesize_rain(clean, 20, 15.0, seed=1)
    assert np.all(out >= clean)
    assert (out > clean).any()


def test_blur_preserves_constant_and_smooths():
    np.testing.assert_allclose(dg.synthesize_blur(np.full((8, 8, 3), 0.3), 2.0), 0.3)
    clean = dg.make_clean(2, 32)
    out = dg.synthesize_blur(clean, 1.5)
    assert np.abs(np.diff(out, axis=0)).mean() < np.abs(np.diff(clean, axis=0)).mean()


def test_lowlight_darkens():
    clean = dg.make_clean(3, 16)
    out = dg.synthesize_lowlight(clean, 2.0, 0.4)
    np.testing.assert_allclose(out, 0.4 * clean**2)


@pytest.mark.parametrize(
    "fn,args",
    [
        (dg.add_gaussian_noise, (1.5, 0)),
        (dg.synthesize_haze, (-1.0, 0.5)),
        (dg.synthesize_rain, (10, 80.0, 0)),
        (dg.synthesize_blur, (20.0,)),
        (dg.synthesize_lowlight, (0.5, 0.5)),
    ],
)
def test_parameter_ranges(fn, args):
    with pytest.raises(ConfigError):
        fn(np.zeros((8, 8, 3)), *args)


def test_bad_image_rejected():
    with pytest.raises(ValueError):
        dg.synthesize_blur(np.zeros((8, 8)), 1.0)


def test_every_task_degrades():
    for task in dg.TASKS:
        s = dg.make_sample(task, 5, 32)
        assert psnr(s.degraded, s.clean) < 35, task


def test_unknown_task_and_param():
    with pytest.raises(ConfigError):
        dg.make_sample("snow", 0)
    with pytest.raises(ConfigError):
        dg.make_sample("noise", 0, params={"beta": 1.0})


def test_dataset_cycles_tasks_and_seeds_differ():
    a = dg.make_dataset(["noise", "rain"], 4, seed=0, size=16)
    b = dg.make_dataset(["noise", "rain"], 4, seed=1, size=16)
    assert [s.task for s in a] == ["noise", "rain", "noise", "rain"]
    assert not set(s.seed for s in a) & set(s.seed for s in b)


def test_export_round_trip(tmp_path):
    samples = dg.make_dataset(["haze", "blur"], 3, seed=0, size=8)
    bin_path, manifest = dg.export_samples(samples, tmp_path / "set")
    assert bin_path.stat().st_size == 3 * 2 * 8 * 8 * 3 * 4
    back = dg.load_samples(tmp_path / "set")
    for s, r in zip(samples, back):
        assert r.task == s.task and r.seed == s.seed and r.params == s.params
        np.testing.assert_array_equal(r.clean, s.clean.astype(np.float32))
        np.testing.assert_array_equal(r.degraded, s.degraded.astype(np.float32))
