"""Unit tests for run configuration parsing, presets and validation."""

from dataclasses import replace

import pytest

from aevb_data import PRESETS, RunConfig
from config import ConfigError, build_config, config_from_text, format_config, parse_config_text, validate


class TestParsing:
    """Tests for flat key = value text."""

    def test_typed_values(self):
        overrides = parse_config_text(
            "# a comment\n"
            "latent_dim = 4\n"
            "hidden = 32, 16\n"
            "learning_rate = 0.001  # trailing comment\n"
            "train_size = none\n"
            "\n"
            "model = vae\n"
        )
        assert overrides == {
            "latent_dim": 4,
            "hidden": (32, 16),
            "learning_rate": 0.001,
            "train_size": None,
            "model": "vae",
        }

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config_text("latent_dims = 4\n")
        assert excinfo.value.field == "latent_dims"

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("seed = 1\nsteps 10\n")

    @pytest.mark.parametrize("line", ["steps = ten", "hidden = 3,x", "learning_rate = fast"])
    def test_bad_values(self, line):
        with pytest.raises(ConfigError):
            parse_config_text(line)

    def test_resolved_config_reads_back(self):
        config = build_config("gmvae-desk", seed=7, out="runs/x")
        text = format_config(config)
        assert text.startswith("# resolved run configuration\n")
        assert config_from_text(text) == config


class TestBuildConfig:
    """Tests for preset, file and command-line precedence."""

    def test_defaults_are_valid(self):
        assert build_config() == RunConfig()

    def test_file_overrides_preset(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("steps = 12\nlatent_dim = 3\n")
        config = build_config("vae-desk", path)
        assert config.steps == 12 and config.latent_dim == 3
        assert config.hidden == PRESETS["vae-desk"]["hidden"]

    def test_command_line_overrides_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 3\nout = runs/file\n")
        config = build_config(None, path, seed=5, out="runs/cli")
        assert (config.seed, config.out) == (5, "runs/cli")

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            build_config("vae-huge")

    @pytest.mark.parametrize("preset", sorted(PRESETS))
    def test_presets_validate(self, preset):
        assert build_config(preset).model == PRESETS[preset]["model"]


class TestValidate:
    """Tests for value checks that name the offending field."""

    @pytest.mark.parametrize(
        "overrides,field",
        [
            ({"model": "rbm"}, "model"),
            ({"latent_dim": 0}, "latent_dim"),
            ({"dropout": 1.0}, "dropout"),
            ({"temperature": 0.0}, "temperature"),
            ({"learning_rate": -1.0}, "learning_rate"),
            ({"hidden": (8, 0)}, "hidden"),
            ({"model": "fa", "data": "mnist"}, "data"),
            ({"model": "vae", "data": "synthetic"}, "data"),
            ({"model": "gmvae", "data": "mnist", "kl": "sampled"}, "kl"),
            ({"train_size": 0}, "train_size"),
            ({"eval_draws": 0}, "eval_draws"),
            ({"decay_every": -1}, "decay_every"),
            ({"lr_decay": 0.0}, "lr_decay"),
            ({"lr_decay": 1.5}, "lr_decay"),
        ],
    )
    def test_rejects(self, overrides, field):
        with pytest.raises(ConfigError) as excinfo:
            validate(replace(RunConfig(), **overrides))
        assert excinfo.value.field == field
