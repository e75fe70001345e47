import pytest

from fsglab.config import (
    RunConfig,
    config_hash,
    dumps_config,
    load_config,
    loads_config,
    save_config,
)
from fsglab.errors import ConfigError


def test_empty_file_gives_full_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = load_config(path)
    assert cfg["beta"] == 0.3
    assert cfg["l"] == 6
    assert cfg["hyper_lr"] == 1e-3
    assert cfg["lr_decay.every"] == 30
    assert cfg["lr_decay.factor"] == 0.1
    assert cfg["base_optimizer.kind"] == "adam"


def test_invalid_l_names_field():
    with pytest.raises(ConfigError, match="'l'"):
        loads_config("l = 0\n")


def test_round_trip_structural_equality(tmp_path):
    text = "\n".join([
        "# experiment",
        "beta = 0.5",
        "l = 4",
        "base_optimizer.kind = sgd",
        "base_optimizer.lr = 0.01",
        "model.layers = dense:2:4, bias:4, relu, dense:4:2:bin",
        "record_timing = false",
    ])
    cfg = loads_config(text)
    path = tmp_path / "a.cfg"
    save_config(cfg, path)
    again = load_config(path)
    assert again.values == cfg.values


def test_canonical_form_is_byte_stable(tmp_path):
    cfg = loads_config("beta = 0.5\n")
    first = dumps_config(cfg)
    second = dumps_config(loads_config(first))
    assert first == second
    assert config_hash(cfg) == config_hash(loads_config(first))


def test_unknown_key_rejected_with_location():
    with pytest.raises(ConfigError, match="line 2.*mystery"):
        loads_config("beta = 0.5\nmystery = 1\n")


def test_parse_error_reports_line_and_col():
    with pytest.raises(ConfigError, match="line 3"):
        loads_config("beta = 0.5\n\njust some words\n")


def test_type_errors_name_key():
    with pytest.raises(ConfigError, match="'epochs'"):
        loads_config("epochs = soon\n")
    with pytest.raises(ConfigError, match="'record_timing'"):
        loads_config("record_timing = yes\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        loads_config("beta = 0.5\nbeta = 0.6\n")


def test_enum_validation():
    with pytest.raises(ConfigError, match="slow_kind"):
        loads_config("slow_kind = transformer\n")


def test_comments_and_blanks_ignored():
    cfg = loads_config("# header\n\nbeta = 0.7  # inline\n")
    assert cfg["beta"] == 0.7


def test_to_train_config_carries_fields():
    cfg = loads_config("alpha = 0.4\nbeta = 0.2\nl = 5\nhyper_lr = 0.01\n")
    tc = cfg.to_train_config()
    assert tc.alpha == 0.4
    assert tc.beta == 0.2
    assert tc.l == 5
    assert tc.hyper_lr == 0.01
    tc.validate()


def test_runconfig_defaults_are_isolated():
    a = RunConfig({"beta": 0.9})
    b = RunConfig({})
    assert a["beta"] == 0.9
    assert b["beta"] == 0.3
