import json

import pytest

from medrek.config import (
    BUILTIN_CONFIGS,
    EvalConfig,
    RunConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    read_config_file,
    save_config,
)
from medrek.errors import IoError, ValidationError


class TestLayering:
    def test_defaults_alone(self):
        cfg = load_config(env={})
        assert cfg.train.lr == 1e-5
        assert cfg.eval.batch_sizes == (1, 10, 50, 100)
        assert cfg.data.n_records == 50

    def test_file_beats_defaults(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"lr": 0.5}}))
        cfg = load_config(str(path), env={})
        assert cfg.train.lr == 0.5

    def test_env_beats_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"train": {"lr": 0.5, "epochs": 7}}))
        cfg = load_config(str(path), env={"MEDREK_TRAIN_LR": "0.25"})
        assert cfg.train.lr == 0.25
        assert cfg.train.epochs == 7  # untouched keys survive the merge

    def test_flags_beat_env(self, tmp_path):
        cfg = load_config(env={"MEDREK_TRAIN_LR": "0.25"}, overrides=["train.lr=0.125"])
        assert cfg.train.lr == 0.125

    def test_env_parses_json_values(self):
        cfg = load_config(env={
            "MEDREK_EVAL_BATCH_SIZES": "[1, 5]",
            "MEDREK_SYSTEM_SHARED_QK": "false",
            "MEDREK_SYSTEM_ATTENTION_MODE": "multihead",
        })
        assert cfg.eval.batch_sizes == (1, 5)
        assert cfg.system.shared_qk is False
        assert cfg.system.attention_mode == "multihead"

    def test_unrelated_env_ignored(self):
        cfg = load_config(env={"PATH": "/bin", "MEDREKX": "nope"})
        assert cfg == RunConfig().validate()


class TestSeedPropagation:
    def test_top_seed_fans_out(self):
        cfg = load_config(env={}, overrides=["seed=9"])
        assert cfg.seed == 9
        assert (cfg.data.seed, cfg.system.seed, cfg.train.seed, cfg.pretrain.seed) == (9, 9, 9, 9)

    def test_section_seed_pins(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 9, "data": {"seed": 3}}))
        cfg = load_config(str(path), env={})
        assert cfg.data.seed == 3
        assert cfg.train.seed == 9


class TestValidation:
    def test_unknown_section(self):
        with pytest.raises(ValidationError, match="unknown section 'trian'"):
            config_from_dict({"trian": {}})

    def test_unknown_key_names_path(self):
        with pytest.raises(ValidationError, match="unknown key 'train.lrr'"):
            config_from_dict({"train": {"lrr": 1}})

    def test_bad_env_key(self):
        with pytest.raises(ValidationError, match="MEDREK_TRIAN_LR"):
            load_config(env={"MEDREK_TRIAN_LR": "1"})

    def test_bad_override_shapes(self):
        with pytest.raises(ValidationError, match="not key=value"):
            load_config(env={}, overrides=["train.lr"])
        with pytest.raises(ValidationError, match="not seed or section.field"):
            load_config(env={}, overrides=["lr=1"])

    def test_semantic_validation_still_runs(self):
        with pytest.raises(ValidationError):
            load_config(env={}, overrides=["eval.batch_sizes=[1,1]"])
        with pytest.raises(ValidationError):
            load_config(env={}, overrides=["eval.split=nope"])

    def test_missing_file(self):
        with pytest.raises(IoError, match="not found"):
            load_config("/no/such/config.json", env={})

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{nope")
        with pytest.raises(ValidationError, match="not valid JSON"):
            load_config(str(path), env={})


class TestBuiltinsAndRoundTrip:
    def test_desk50_resolves_without_a_file(self):
        cfg = load_config("desk50", env={})
        assert cfg.train.lr == BUILTIN_CONFIGS["desk50"]["train"]["lr"]
        assert cfg.data.n_records == 50
        assert 50 in cfg.eval.batch_sizes

    def test_builtin_is_copied_not_shared(self):
        a = read_config_file("desk50")
        a["train"]["lr"] = 123
        assert BUILTIN_CONFIGS["desk50"]["train"]["lr"] != 123

    def test_save_load_round_trip(self, tmp_path):
        cfg = load_config("desk50", env={}, overrides=["train.temperature=0.5"])
        path = tmp_path / "saved.json"
        save_config(cfg, str(path))
        again = load_config(str(path), env={})
        assert again == cfg

    def test_to_dict_is_json_ready(self):
        payload = config_to_dict(RunConfig())
        json.dumps(payload)
        assert payload["eval"]["batch_sizes"] == [1, 10, 50, 100]

    def test_fluency_view(self):
        ec = EvalConfig(fluency_sign=-1.0, fluency_tokens=5)
        fc = ec.fluency()
        assert fc.sign == -1.0 and fc.tokens == 5
