"""Configuration validation, loading and override precedence."""

import pytest

from core.config import RunConfig, apply_env_overrides
from core.errors import ConfigError
from core.experiment_loader import (list_available_experiments, load_run_config, resolve_config_path,
                                    validate_experiment_name)
from core.federation import Algorithm, BackwardMode, LayerStrategy
from core.feedback import FeedbackMode
from core.validators import ConfigValidator
from tests.conftest import write_settings


def _validate(raw):
    return ConfigValidator().validate_run_config(raw)


class TestValidateConfig:
    def test_empty_config_uses_defaults(self):
        is_valid, errors, _ = _validate({})
        assert is_valid and errors == []

    def test_zero_client_fraction_names_field(self):
        is_valid, errors, _ = _validate({"train": {"client_fraction": 0.0}})
        assert not is_valid
        assert any(e.startswith("train.client_fraction:") for e in errors)

    def test_unknown_keys(self):
        _, errors, _ = _validate({"rounds": 3, "train": {"epochs": 2}})
        assert "rounds: unknown key" in errors
        assert "train.epochs: unknown key" in errors

    def test_wrong_types(self):
        _, errors, _ = _validate({"train": {"lr": "fast"}, "partition": {"redraw_empty": 1}})
        assert "train.lr: expected float, got str" in errors
        assert "partition.redraw_empty: expected bool, got int" in errors

    def test_collects_every_error(self):
        _, errors, _ = _validate({"partition": {"beta": 0.0, "n_clients": 0},
                                        "train": {"backward_mode": "hebbian"},
                                        "compare": {"ablations": ["shuffle"]}})
        assert {e.split(":")[0] for e in errors} >= {"partition.beta", "partition.n_clients",
                                                     "train.backward_mode", "compare.ablations"}

    def test_fixed_layer_beyond_model(self):
        _, errors, _ = _validate({"model": {"hidden": [8]},
                                        "train": {"layer_strategy": "fixed", "fixed_layer": 3}})
        assert errors == ["train.fixed_layer: model has 2 layers, got 3"]

    def test_csv_needs_existing_path(self, tmp_path):
        _, errors, _ = _validate({"dataset": {"kind": "csv", "path": str(tmp_path / "none.csv")}})
        assert errors[0].startswith("dataset.path: file not found")

    def test_warnings(self):
        is_valid, _, warnings = _validate({"train": {"algorithm": "fedprox"}})
        assert is_valid
        assert any("prox_mu 0" in w for w in warnings)


class TestRunConfig:
    def test_from_dict(self, tiny_config):
        cfg = RunConfig.from_dict(tiny_config)
        assert cfg.model.layer_sizes(4, 3) == [4, 6, 3]
        assert cfg.train.backward_mode is BackwardMode.FLFA
        assert cfg.train.seed == 0 and cfg.partition.seed == 0
        assert cfg.train.workers == 1

    def test_invalid_raises_config_error(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict({"train": {"client_fraction": 0.0}}, source="x.json")
        assert info.value.source == "x.json"
        assert info.value.errors[0].startswith("train.client_fraction")

    def test_to_dict_reproduces_config(self, tiny_config):
        cfg = RunConfig.from_dict(tiny_config)
        assert RunConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()

    def test_with_seed_reaches_every_stream(self, tiny_config):
        cfg = RunConfig.from_dict(tiny_config).with_seed(7)
        assert (cfg.seed, cfg.train.seed, cfg.partition.seed) == (7, 7, 7)

    def test_compare_methods(self):
        cfg = RunConfig.from_dict({"compare": {"ablations": ["norescale", "random"]}})
        assert cfg.compare.methods() == [
            (BackwardMode.BP, FeedbackMode.GLOBAL_WEIGHTS),
            (BackwardMode.FLFA, FeedbackMode.GLOBAL_WEIGHTS),
            (BackwardMode.FLFA, FeedbackMode.GLOBAL_NO_RESCALE),
            (BackwardMode.FLFA, FeedbackMode.RANDOM_FIXED),
        ]

    def test_trace_mode(self, tiny_config):
        tiny_config["train"].update({"momentum": 0.9, "weight_decay": 0.01, "algorithm": "fedprox",
                                     "prox_mu": 0.1, "client_fraction": 0.5})
        cfg = RunConfig.from_dict(tiny_config).for_trace_mode()
        assert cfg.partition.n_clients == 2
        assert cfg.train.client_fraction == 1.0
        assert (cfg.train.momentum, cfg.train.weight_decay, cfg.train.prox_mu) == (0.0, 0.0, 0.0)
        assert cfg.train.algorithm is Algorithm.FEDAVG
        assert cfg.train.local_steps == 3
        assert cfg.train.layer_strategy is LayerStrategy.FIXED
        assert cfg.train.start_layers == (2,)
        assert cfg.metrics.trace_mode


class TestOverrides:
    def test_env_overrides(self):
        raw = apply_env_overrides({"seed": 1}, {"FEDALIGN_SEED": "9", "FEDALIGN_OUTPUT_DIR": "/tmp/x"})
        assert raw == {"seed": 9, "output_dir": "/tmp/x"}

    def test_env_seed_must_be_integer(self):
        with pytest.raises(ConfigError):
            apply_env_overrides({}, {"FEDALIGN_SEED": "abc"})

    def test_precedence(self, tmp_path, tiny_config, monkeypatch):
        path = write_settings(tmp_path / "run.json", {**tiny_config, "seed": 1})
        monkeypatch.delenv("FEDALIGN_OUTPUT_DIR", raising=False)
        monkeypatch.setenv("FEDALIGN_SEED", "2")
        assert load_run_config(str(path)).seed == 2
        assert load_run_config(str(path), seed=3).seed == 3
        monkeypatch.delenv("FEDALIGN_SEED")
        assert load_run_config(str(path)).seed == 1

    def test_default_output_dir(self, tmp_path, tiny_config, monkeypatch):
        monkeypatch.delenv("FEDALIGN_OUTPUT_DIR", raising=False)
        path = write_settings(tmp_path / "tiny.json", tiny_config)
        cfg = load_run_config(str(path))
        assert cfg.output_dir.endswith("tiny")
        assert load_run_config(str(path), output_dir=str(tmp_path / "out")).output_dir == str(tmp_path / "out")


class TestExperimentLoader:
    def test_settings_module(self, tmp_path, monkeypatch):
        monkeypatch.delenv("FEDALIGN_SEED", raising=False)
        folder = tmp_path / "mine"
        folder.mkdir()
        (folder / "settings.py").write_text('SEED = 4\nTRAIN = {"rounds": 1}\n_private = 1\n')
        cfg = load_run_config(str(folder))
        assert cfg.seed == 4 and cfg.train.rounds == 1

    def test_bundled_experiments(self):
        names = list_available_experiments()
        assert {"quickstart", "drift_demo", "boundcheck_tiny"} <= set(names)
        assert resolve_config_path("quickstart").name == "settings.py"

    def test_bundled_experiments_are_valid(self):
        for name in list_available_experiments():
            load_run_config(name, output_dir="unused")

    def test_unknown_name(self):
        with pytest.raises(ConfigError, match="config not found"):
            resolve_config_path("no_such_experiment")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_run_config(str(path))

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("seed: 1\n")
        with pytest.raises(ConfigError, match="unsupported"):
            load_run_config(str(path))

    @pytest.mark.parametrize("name, ok", [("drift_demo", True), ("../etc", False), ("Upper", False), ("", False)])
    def test_experiment_names(self, name, ok):
        assert validate_experiment_name(name) is ok
