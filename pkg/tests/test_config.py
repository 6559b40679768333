import pytest

from coapt.config import ExperimentConfig, load_config, parse_config_text
from coapt.errors import ConfigurationError


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.soft_prompts == 4
    assert cfg.ctx_len == 77
    assert cfg.temperature == 0.01
    assert cfg.momentum == 0.9
    assert cfg.base_lr == 2e-3
    assert cfg.batch_size == 4
    assert cfg.shots == 16
    assert cfg.seeds == [0, 1, 2]
    assert cfg.k_ensemble == 3


def test_parse_key_value_with_comments():
    cfg = parse_config_text(
        """
        # toy run
        classes = 4
        base_lr = 5e-3   # fast
        seeds = 7,8
        bias_mode = affine_on_feature
        domain_rotations = 0.1,0.2
        """
    )
    assert cfg.classes == 4
    assert cfg.base_lr == pytest.approx(5e-3)
    assert cfg.seeds == [7, 8]
    assert cfg.bias_mode == "affine_on_feature"
    assert cfg.domain_rotations == [0.1, 0.2]


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_config_text("not_a_key = 3")


def test_bad_value_rejected():
    with pytest.raises(ConfigurationError, match="classes"):
        parse_config_text("classes = many")


def test_line_without_assignment_rejected():
    with pytest.raises(ConfigurationError, match="line 1"):
        parse_config_text("just words")


def test_file_round_trip(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("classes = 3\nsteps = 10\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.classes == 3 and cfg.steps == 10


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/run.cfg")


def test_echo_round_trips_through_parser():
    cfg = ExperimentConfig(classes=5, seeds=[3, 4], base_lr=0.01)
    text = "\n".join(f"{k} = {v}" for k, v in cfg.echo().items())
    again = parse_config_text(text)
    assert again == cfg
