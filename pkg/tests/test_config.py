import json
import math

import pytest

from obnonuniq.config import ConfigError, default_config, load_config, parse_config


def test_defaults_are_the_reference_exponents():
    cfg = default_config()
    p = cfg.exponents()
    assert (p.a, p.delta, p.beta, p.gamma, p.b) == (2.0, 0.1, 2.5, 3.0, 1.5)
    assert p.tau0 == pytest.approx(math.log(0.1))
    assert cfg.mode == "auto"


def test_partial_blocks_merge_into_defaults():
    cfg = parse_config('{"grid": {"n": 16}, "mode": "synthetic"}')
    assert cfg["grid"] == {"n": 16, "box_side": 12.0}
    assert cfg.mode == "synthetic"


def test_syntax_error_names_line_and_column():
    with pytest.raises(ConfigError, match=r"line 3, column \d+"):
        parse_config('{\n  "grid": {"n": 16},\n  "mode" "synthetic"\n}', "x.json")


def test_unknown_field_names_line_and_path():
    text = '{\n  "grid": {\n    "bogus": 1\n  }\n}'
    with pytest.raises(ConfigError, match=r"line 3, field grid\.bogus"):
        parse_config(text)


def test_wrong_type_names_field():
    with pytest.raises(ConfigError, match=r"field stepper\.dt"):
        parse_config('{"stepper": {"dt": "fast"}}')


def test_odd_grid_rejected():
    with pytest.raises(ConfigError, match=r"grid\.n"):
        parse_config('{"grid": {"n": 17}}')


def test_b_must_agree_between_blocks():
    with pytest.raises(ConfigError, match="exponents.b"):
        parse_config('{"profile": {"b": 1.5}, "exponents": {"b": 1.0}}')


def test_tau_window_must_be_nonempty():
    with pytest.raises(ConfigError, match="tau_min"):
        parse_config('{"stepper": {"tau0": -3, "tau_min": -2}}')


def test_overrides_do_not_mutate(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"spectra": {"seed": 3}}))
    cfg = load_config(path)
    new = cfg.with_overrides("synthetic", 2**64 - 1)
    assert new.mode == "synthetic" and new["spectra"]["seed"] == 2**64 - 1
    assert cfg.mode == "auto" and cfg["spectra"]["seed"] == 3


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.json")
