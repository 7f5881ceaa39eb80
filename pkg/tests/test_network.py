import numpy as np
import pytest

from moce_ir import ConfigError, ModelConfig, build, count_flops, forward
from moce_ir.gradcheck_suite import tiny_model_config
from moce_ir.numerics import ShapeError

from oracles import moce_layer_params


def desk_config(**kw):
    base = dict(base_channels=8, encoder_blocks=(2, 2), decoder_blocks=(2,), refinement_blocks=1, n_experts=4, crop_size=32)
    base.update(kw)
    return ModelConfig(**base)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"encoder_blocks": ()},
        {"decoder_blocks": (2, 2)},
        {"decoder_blocks": (0,)},
        {"crop_size": 31},
        {"base_channels": 0},
    ],
)
def test_model_config_validation(kwargs):
    with pytest.raises(ConfigError):
        desk_config(**kwargs)


def test_moce_layers_live_in_decoder():
    model = build(desk_config(), 0)
    layers = model.moce_layers()
    assert len(layers) == 2
    assert [layer.layer_id for layer in layers] == [0, 1]
    assert all(layer.config.channels == 8 for layer in layers)


def test_decoder_param_count():
    cfg = desk_config()
    model = build(cfg, 0)
    total = sum(layer.num_parameters() for layer in model.moce_layers())
    from moce_ir import embed_widths

    assert total == 2 * moce_layer_params(8, embed_widths(8, 4), 4)


def test_forward_shapes_and_records():
    model = build(desk_config(), 0)
    x = np.random.default_rng(0).uniform(size=(3, 32, 32, 3))
    rec = forward(model, x)
    assert rec.restored.shape == x.shape
    assert rec.selections().shape == (3, 2)
    assert count_flops(rec).shape == (3,)


def test_single_image_promoted():
    model = build(desk_config(), 0)
    rec = forward(model, np.zeros((32, 32, 3)))
    assert rec.batch_size == 1


def test_bad_input_shapes():
    model = build(desk_config(), 0)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 32, 32, 4)))
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 31, 32, 3)))


def test_build_is_deterministic():
    a = build(desk_config(), 5)
    b = build(desk_config(), 5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_batch_composition_does_not_change_outputs():
    model = build(tiny_model_config(), 1)
    x = np.random.default_rng(1).uniform(size=(4, 16, 16, 3))
    full = forward(model, x)
    for i in range(4):
        one = forward(model, x[i:i + 1])
        np.testing.assert_allclose(one.restored.data[0], full.restored.data[i], atol=1e-10)
        assert one.macs[0] == full.macs[i]


def test_forced_paths_monotone_macs():
    model = build(desk_config(), 0)
    x = np.zeros((1, 32, 32, 3))
    macs = [int(forward(model, x, force=e).macs[0]) for e in range(4)]
    assert all(a < b for a, b in zip(macs, macs[1:]))


def test_per_layer_force():
    model = build(desk_config(), 0)
    rec = forward(model, np.zeros((2, 32, 32, 3)), force=[0, None])
    assert np.all(rec.selections()[:, 0] == 0)
    with pytest.raises(ConfigError):
        forward(model, np.zeros((1, 32, 32, 3)), force=[0])


def test_macs_scale_with_area():
    model = build(desk_config(), 0)
    small = forward(model, np.zeros((1, 32, 32, 3)), force=0).macs[0]
    big = forward(model, np.zeros((1, 64, 64, 3)), force=0).macs[0]
    assert 3.5 * small < big < 4.6 * small
