import pytest

from moce_ir import runconfig
from moce_ir.runconfig import RunConfigError


def test_defaults_build_desk_model():
    cfg = runconfig.RunConfig.defaults()
    mc = cfg.model_config()
    assert (mc.base_channels, mc.encoder_blocks, mc.decoder_blocks, mc.n_experts) == (8, (2, 2), (2,), 4)
    assert cfg.train_config().batch_size == 8


def test_parse_overrides_and_comments():
    cfg = runconfig.parse("# desk run\nsteps = 10  # short\ntask_mix=noise, rain\nnoise_variance=auto\n")
    assert cfg["steps"] == 10
    assert cfg["task_mix"] == ("noise", "rain")
    assert cfg["noise_variance"] is None


@pytest.mark.parametrize(
    "text,line",
    [
        ("steps=10\nfoo=1\n", 2),
        ("steps=10\nsteps=11\n", 2),
        ("\n\nlr=fast\n", 3),
        ("steps\n", 1),
    ],
)
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(RunConfigError) as err:
        runconfig.parse(text, "run.cfg")
    assert err.value.line == line
    assert f"run.cfg:{line}:" in str(err.value)


def test_semantic_validation():
    with pytest.raises(RunConfigError):
        runconfig.parse("balance=sometimes\n")
    with pytest.raises(RunConfigError):
        runconfig.parse("task_mix=noise,snow\n")


def test_string_round_trip():
    cfg = runconfig.parse("lr=0.0005\nencoder_blocks=1,2\ndecoder_blocks=3\nseed=4\n")
    back = runconfig.from_strings(cfg.to_strings())
    assert back.values == cfg.values
    assert runconfig.parse(runconfig.render(cfg)).values == cfg.values


def test_load_missing_file(tmp_path):
    with pytest.raises(RunConfigError) as err:
        runconfig.load(tmp_path / "nope.cfg")
    assert "nope.cfg" in str(err.value)


def test_reference_lists_every_key_and_parses():
    text = runconfig.reference()
    for key in runconfig.KEYS:
        assert f"\n{key.name}=" in text
    assert runconfig.parse(text).values == runconfig.RunConfig.defaults().values
