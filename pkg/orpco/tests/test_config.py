"""Tests for configuration loading and validation."""

import pytest

from orpco import ConfigError, ExperimentConfig, load_config
from orpco.config import apply_overrides, apply_smoke, betas_tuple, validate_config


def write(tmp_path, text: str):
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadConfigValidation:
    def test_file_not_found(self):
        with pytest.raises(ConfigError, match="Configuration file not found"):
            load_config("nonexistent.yaml")

    def test_empty_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Configuration file is empty"):
            load_config(write(tmp_path, ""))

    def test_invalid_yaml(self, tmp_path):
        with pytest.raises(ConfigError, match="Invalid YAML"):
            load_config(write(tmp_path, "ensemble: [unclosed"))

    def test_not_a_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="must be a YAML mapping"):
            load_config(write(tmp_path, "- a\n- b\n"))

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="config: unknown key"):
            load_config(write(tmp_path, "ensembel: {}\n"))

    def test_unknown_nested_key_names_path(self, tmp_path):
        with pytest.raises(ConfigError, match="ensemble.cgan: unknown key"):
            load_config(write(tmp_path, "ensemble:\n  cgan:\n    epoch: 3\n"))

    def test_section_must_be_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="penalty: section must be a mapping"):
            load_config(write(tmp_path, "penalty: 3\n"))


class TestRangeValidation:
    @pytest.mark.parametrize(
        "text, message",
        [
            ("ensemble:\n  members: 1\n", "M >= 2"),
            ("ensemble:\n  samples: 1\n", "N must be >= 2"),
            ("ensemble:\n  kind: vae\n", "ensemble.kind"),
            ("penalty:\n  epsilon: 0\n", "penalty.epsilon"),
            ("continuous:\n  penalty:\n    epsilon: -1\n", "continuous.penalty.epsilon"),
            ("ddpg:\n  gamma: 1.0\n", "ddpg.gamma"),
            ("bo:\n  n_init: 1\n", "bo.n_init"),
            ("ope:\n  n_repeats: 1\n", "ope.n_repeats"),
            ("data:\n  split_ratios: [0.5, 0.6]\n", "sum to 1"),
            ("data:\n  split_ratios: [1.0]\n", "at least two ratios"),
            ("evaluator: f2\n", "evaluator"),
            ("continuous:\n  behaviors: [greedy]\n", "continuous.behaviors"),
            ("seeds: []\n", "at least one seed"),
            ("reward:\n  kind: box\n", "needs 'lower' and 'upper'"),
            ("reward:\n  kind: box\n  lower: [1.0]\n  upper: [0.0]\n", "lower bound"),
        ],
    )
    def test_out_of_range(self, tmp_path, text, message):
        with pytest.raises(ConfigError, match=message):
            load_config(write(tmp_path, text))

    def test_defaults_are_valid(self):
        config = validate_config(ExperimentConfig())
        assert config.ensemble.members == 5
        assert config.ensemble.samples == 1000
        assert config.ensemble.cgan.gp_lambda == 10.0
        assert config.ensemble.cgan.hidden_dims == [64, 64]

    def test_continuous_penalty_defaults(self):
        config = ExperimentConfig()
        assert config.continuous.penalty.c == -2000.0
        assert config.continuous.penalty.mopo_lambda == 1000.0

    def test_partial_continuous_penalty_keeps_defaults(self, tmp_path):
        config = load_config(write(tmp_path, "continuous:\n  penalty:\n    c: -50.0\n"))
        assert config.continuous.penalty.c == -50.0
        assert config.continuous.penalty.mopo_lambda == 1000.0


class TestValidConfigLoading:
    def test_minimal_config(self, tmp_path):
        config = load_config(write(tmp_path, "name: tiny\nseeds: [3]\n"))
        assert config.name == "tiny"
        assert config.seeds == [3]
        assert config.ensemble.kind == "cgan"

    def test_nested_sections(self, tmp_path):
        config = load_config(
            write(
                tmp_path,
                "ensemble:\n  kind: gpn\n  members: 3\n  gpn:\n    grid_search: false\n"
                "penalty:\n  c: -5.0\n  epsilon: 0.2\n",
            )
        )
        assert config.ensemble.kind == "gpn"
        assert config.ensemble.members == 3
        assert config.ensemble.gpn.grid_search is False
        assert config.penalty.c == -5.0
        assert config.penalty.epsilon == 0.2

    def test_defaults_without_file(self):
        config = load_config(None)
        assert config.name == "experiment"

    def test_overrides_applied(self, tmp_path):
        config = load_config(
            write(tmp_path, "name: base\n"),
            ["ensemble.members=3", "penalty.epsilon=0.5", "seeds=[1, 2]"],
        )
        assert config.ensemble.members == 3
        assert config.penalty.epsilon == 0.5
        assert config.seeds == [1, 2]

    def test_smoke_scales_down(self, tmp_path):
        config = load_config(write(tmp_path, "smoke: true\n"))
        assert config.smoke is True
        assert config.ensemble.members == 2
        assert config.ensemble.samples == 50
        assert config.ddpg.episodes == 20
        assert config.ope.n_repeats == 3


class TestOverrides:
    def test_yaml_scalars(self):
        data = apply_overrides({}, ["ensemble.members=2", "penalty.epsilon=null", "name=abc"])
        assert data == {"ensemble": {"members": 2}, "penalty": {"epsilon": None}, "name": "abc"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="expected key=value"):
            apply_overrides({}, ["ensemble.members"])

    def test_scalar_is_not_a_section(self):
        with pytest.raises(ConfigError, match="is not a section"):
            apply_overrides({"name": "x"}, ["name.sub=1"])


class TestConfigHash:
    def test_stable_for_equal_configs(self):
        assert ExperimentConfig().config_hash() == ExperimentConfig().config_hash()

    def test_changes_with_content(self):
        a = ExperimentConfig()
        b = ExperimentConfig(seeds=[1])
        assert a.config_hash() != b.config_hash()

    def test_runs_dir_env_override(self, monkeypatch):
        monkeypatch.setenv("ORPCO_RUNS_DIR", "/tmp/elsewhere")
        assert ExperimentConfig().resolve_runs_dir() == "/tmp/elsewhere"

    def test_runs_dir_default(self, monkeypatch):
        monkeypatch.delenv("ORPCO_RUNS_DIR", raising=False)
        assert ExperimentConfig(runs_dir="out").resolve_runs_dir() == "out"


class TestHelpers:
    def test_apply_smoke_does_not_mutate(self):
        config = ExperimentConfig()
        smoke = apply_smoke(config)
        assert config.ensemble.members == 5
        assert smoke.ensemble.members == 2

    def test_betas_tuple(self):
        assert betas_tuple([0.5, 0.9]) == (0.5, 0.9)
        with pytest.raises(ConfigError, match="two moment decays"):
            betas_tuple([0.5])
