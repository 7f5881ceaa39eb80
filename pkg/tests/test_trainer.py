import math

import numpy as np
import pytest

from moce_ir import ConfigError, build
from moce_ir.gradcheck_suite import tiny_model_config
from moce_ir.trainer import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    cosine_lr,
    init_state,
    layer_biases,
    make_batch,
    restore,
    train,
)


def tiny_train(**kw):
    base = dict(steps=4, batch_size=2, crop=16, task_mix=("noise", "rain"), snapshot_every=2)
    base.update(kw)
    return TrainConfig(**base)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3) == 1e-3
    assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4)
    assert cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-18)
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 1e-3)


def test_adam_matches_hand_computation():
    p = [np.array([1.0, -2.0])]
    g = [np.array([0.5, 0.1])]
    state = AdamState.zeros_like(p)
    adam_step(p, g, state, lr=0.1)
    # first step: m_hat = g, v_hat = g^2 -> update = lr * sign(g) (up to eps)
    np.testing.assert_allclose(p[0], [0.9, -2.1], atol=1e-6)
    adam_step(p, g, state, lr=0.1)
    np.testing.assert_allclose(p[0], [0.8, -2.2], atol=1e-6)
    assert state.t == 2


def test_adam_none_grad_and_shape_check():
    p = [np.ones(2)]
    state = AdamState.zeros_like(p)
    adam_step(p, [None], state, lr=0.1)
    np.testing.assert_array_equal(p[0], 1.0)
    with pytest.raises(ValueError):
        adam_step(p, [np.ones(3)], state, lr=0.1)


@pytest.mark.parametrize(
    "kw",
    [{"steps": 0}, {"batch_size": 0}, {"lr": -1}, {"betas": (1.0, 0.9)}, {"task_mix": ("fog",)}, {"balance": "x"}, {"aux_weight": -1}],
)
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        tiny_train(**kw)


def test_batches_are_keyed_and_in_mix():
    cfg = tiny_train(batch_size=6)
    a, b = make_batch(cfg, 3), make_batch(cfg, 3)
    np.testing.assert_array_equal(a.degraded, b.degraded)
    assert set(a.tasks) <= {"noise", "rain"}
    assert a.keys == [(0, 3, i) for i in range(6)]
    c = make_batch(tiny_train(batch_size=3), 3)
    # sample i depends only on (seed, step, i), not on the batch size
    np.testing.assert_array_equal(c.degraded, a.degraded[:3])


def test_layer_biases():
    model = build(tiny_model_config(), 0)
    comp = layer_biases(model, "complexity")
    assert comp[0].values[-1] == 1.0 and np.all(np.diff(comp[0].values) > 0)
    np.testing.assert_array_equal(layer_biases(model, "uniform")[0].values, 1.0)


def test_training_logs_and_snapshots():
    model = build(tiny_model_config(), 0)
    state = train(model, tiny_train())
    assert [r["step"] for r in state.log] == [0, 1, 2, 3]
    assert all(math.isfinite(r["loss"]) for r in state.log)
    assert [s["step"] for s in state.snapshots] == [2, 4]
    assert np.array(state.snapshots[0]["counts"]).sum() == 2 * 2 * model.config.num_moce_layers
    assert state.log[0]["lr"] == 1e-3


def test_training_reduces_loss():
    model = build(tiny_model_config(), 0)
    state = train(model, tiny_train(steps=30, lr=2e-3))
    first = np.mean([r["restoration"] for r in state.log[:5]])
    last = np.mean([r["restoration"] for r in state.log[-5:]])
    assert last < first


def test_stop_at_then_continue_matches():
    cfg = tiny_train()
    full = train(build(tiny_model_config(), 0), cfg)
    model = build(tiny_model_config(), 0)
    part = train(model, cfg, stop_at=2)
    assert part.step == 2
    part = train(model, cfg, state=part)
    assert [r["loss"] for r in part.log] == [r["loss"] for r in full.log]


def test_state_must_match_model():
    model = build(tiny_model_config(), 0)
    state = init_state(model)
    state.adam.m.pop()
    with pytest.raises(ValueError):
        train(model, tiny_train(), state=state)


def test_divergence_names_the_op():
    model = build(tiny_model_config(), 0)
    model.output.weight.data[...] = np.inf
    with pytest.raises(TrainingDiverged) as err, np.errstate(all="ignore"):
        train(model, tiny_train())
    assert err.value.step == 0
    assert err.value.op is not None


def test_restore_clips_and_strips_tapes():
    model = build(tiny_model_config(), 0)
    x = np.random.default_rng(0).uniform(size=(5, 16, 16, 3))
    out, records = restore(model, x, batch_size=2)
    assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1
    assert len(records) == 3
    assert all(t.logits_tensor is None for r in records for t in r.traces)
