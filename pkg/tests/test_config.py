import pytest

from svhdr.config import SCHEMA, ConfigError, RunConfig, env_overrides, parse_lines


def test_parse_comments_and_blank_lines():
    text = "# header\n\nseed = 7   # trailing\ntrain.lr=0.001\nbracket.read_sigmas = 0.1, 0.2, 0.3\n"
    assert parse_lines(text) == {"seed": "7", "train.lr": "0.001", "bracket.read_sigmas": "0.1, 0.2, 0.3"}
    cfg = RunConfig.resolve(text)
    assert cfg["seed"] == 7 and cfg["train.lr"] == 0.001
    assert cfg.bracket.read_sigmas == (0.1, 0.2, 0.3)


@pytest.mark.parametrize("text,where", [("seed 7", ":1:"), ("x\n= 3", ":1:"), ("nope = 1", "unknown key")])
def test_malformed_lines(text, where):
    with pytest.raises(ConfigError, match=where):
        RunConfig.resolve(text)


def test_bad_values_are_config_errors():
    for text in ("seed = abc", "deterministic = maybe", "method = magic", "seed = -1", "seed = 18446744073709551616",
                 "train.preset = huge", "lux_levels = 0.1, -1", "network.window = 0"):
        with pytest.raises(ConfigError):
            RunConfig.resolve(text)


def test_seed_accepts_full_u64_range():
    assert RunConfig.resolve("seed = 0xFFFFFFFFFFFFFFFF")["seed"] == 2 ** 64 - 1


def test_precedence_file_env_flags():
    text = "seed = 1\ntrain.lr = 0.5\nout = from-file\n"
    env = {"SVHDR_SEED": "2", "SVHDR_TRAIN__LR": "0.25", "UNRELATED": "x"}
    cfg = RunConfig.resolve(text, env, {"seed": 3})
    assert cfg["seed"] == 3 and cfg["train.lr"] == 0.25 and cfg["out"] == "from-file"
    assert env_overrides(env) == {"seed": "2", "train.lr": "0.25"}


def test_presets():
    desk = RunConfig.resolve("", {})
    assert desk["train.steps"] == 2000 and desk.network.base_channels == 8
    full = RunConfig.resolve("train.preset = full\nnetwork.preset = default", {})
    assert full["train.steps"] == 1184 * 300 == 355200
    assert full["train.batch_size"] == 3 and full.network.base_channels == 48
    assert RunConfig.resolve("train.steps = 12", {})["train.steps"] == 12
    with pytest.raises(ConfigError, match="desk"):
        RunConfig.resolve("train.steps = 100000", {})


def test_resolved_echo_reproduces(tmp_path):
    cfg = RunConfig.resolve("seed = 9\nlux_levels = 0.3, 0.03\nsensor.shot_noise = false", {"SVHDR_TRAIN__LR": "3e-4"})
    path = cfg.write_resolved(tmp_path)
    again = RunConfig.from_file(path, environ={})
    assert again.values == cfg.values
    assert set(again.values) == set(SCHEMA)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.from_file(tmp_path / "absent.cfg", environ={})
