import json

import pytest

from fairkd.config import (
    CONFIG_DIR_ENV,
    EvalConfig,
    RunConfig,
    apply_overrides,
    config_digest,
    from_dict,
    load_config,
    to_dict,
)
from fairkd.errors import ConfigError


def test_defaults_load_and_validate():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.teacher.input_dim == cfg.universe.feature_dim


def test_nested_file_values_land_in_sections(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "seed": 7,
        "train": {"epochs": 3, "lr_milestones": [], "batch_size": 16},
        "loss": {"kd_weight": 0.5, "margin": {"kind": "adaface", "m": 0.4}},
        "universe": {"n_groups": 2, "identities_per_source": 8,
                     "eval_identities": 6},
    }))
    cfg = load_config(str(path))
    assert cfg.seed == 7
    assert cfg.train.epochs == 3
    assert cfg.loss.kd_weight == 0.5
    assert cfg.loss.margin.kind == "adaface"
    assert cfg.loss.margin.m == 0.4
    assert cfg.universe.n_groups == 2


def test_lists_become_tuples():
    cfg = from_dict({"train": {"epochs": 30, "lr_milestones": [3, 9]},
                     "student": {"input_dim": 16, "hidden_widths": [8, 8],
                                 "embedding_dim": 12},
                     "universe": {"noise_scales": [0.1, 0.2, 0.3, 0.4]}})
    assert cfg.train.lr_milestones == (3, 9)
    assert cfg.student.hidden_widths == (8, 8)
    assert cfg.universe.noise_scales == (0.1, 0.2, 0.3, 0.4)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="config.train.epocs"):
        from_dict({"train": {"epocs": 3}})


def test_bad_value_names_section():
    with pytest.raises(ConfigError, match="config.train.*batch_size"):
        from_dict({"train": {"batch_size": 0, "lr_milestones": []}})


def test_cross_field_checks():
    with pytest.raises(ConfigError, match="teacher.input_dim"):
        from_dict({"teacher": {"input_dim": 9, "hidden_widths": [8],
                               "embedding_dim": 12}})
    with pytest.raises(ConfigError, match="student.embedding_dim"):
        from_dict({"student": {"input_dim": 16, "hidden_widths": [8],
                               "embedding_dim": 5}})


def test_eval_config_bounds():
    with pytest.raises(ValueError):
        EvalConfig(k=1)
    with pytest.raises(ValueError):
        EvalConfig(pairs_per_group=1)


def test_overrides_parse_json_then_fall_back_to_string():
    doc = apply_overrides({}, ["train.epochs=4", "paths.reports=out/r",
                               "train.lr_milestones=[1,2]",
                               "loss.kd_on_normalized=true"])
    assert doc["train"]["epochs"] == 4
    assert doc["paths"]["reports"] == "out/r"
    assert doc["train"]["lr_milestones"] == [1, 2]
    assert doc["loss"]["kd_on_normalized"] is True


def test_override_without_equals_rejected():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["train.epochs"])


def test_override_beats_file_value(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 1}))
    cfg = load_config(str(path), overrides=["seed=9"])
    assert cfg.seed == 9


def test_digest_is_stable_and_sensitive():
    base = load_config(None)
    assert config_digest(base) == config_digest(RunConfig())
    tweaked = from_dict({"seed": 1})
    assert config_digest(tweaked) != config_digest(base)
    assert len(config_digest(base)) == 12


def test_to_dict_round_trips():
    cfg = from_dict({"train": {"epochs": 5, "lr_milestones": [2]},
                     "seed": 3})
    again = from_dict(json.loads(json.dumps(to_dict(cfg))))
    assert again == cfg
    assert config_digest(again) == config_digest(cfg)


def test_config_dir_env_resolves_bare_names(tmp_path, monkeypatch):
    (tmp_path / "tiny.json").write_text(json.dumps({"seed": 4}))
    monkeypatch.setenv(CONFIG_DIR_ENV, str(tmp_path))
    assert load_config("tiny").seed == 4
    assert load_config("tiny.json").seed == 4


def test_missing_config_file_rejected(tmp_path, monkeypatch):
    monkeypatch.delenv(CONFIG_DIR_ENV, raising=False)
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "nope.json"))


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(path))


def test_non_object_top_level_rejected(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(str(path))
