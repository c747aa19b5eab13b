"""Tests for run configuration defaults, precedence and validation."""

import json

import pytest

from sega.config import RunConfig, load_config
from sega.errors import ConfigError

PUBLISHED_DEFAULTS = [
    ("pretrain.tau", 0.1),
    ("pretrain.k_neg", 100),
    ("pretrain.epochs", 100),
    ("pretrain.batch_size", 2048),
    ("pretrain.lr", 1e-3),
    ("pretrain.template", "default"),
    ("pretrain.objective", "contrastive"),
    ("finetune.lam", 3e-5),
    ("finetune.epochs", 150),
    ("finetune.lr", 1e-3),
    ("finetune.batch_size", 2048),
    ("model.d_text", 768),
    ("model.d_h", 32),
    ("model.d_out", 128),
    ("model.d_u", 64),
    ("model.d_a", 64),
    ("model.layers", 2),
    ("model.max_tweets", 20),
    ("model.dropout", 0.3),
    ("model.leaky_slope", 0.01),
    ("text_provider.max_words", 50),
    ("prompt_provider.max_words", 50),
    ("llm.temperature", 0.0),
    ("llm.posts_per_user", 10),
    ("ablation.no_list", False),
    ("ablation.no_pretrain", False),
]


@pytest.mark.parametrize("dotted, expected", PUBLISHED_DEFAULTS)
def test_defaults_match_published_values(dotted, expected):
    value = RunConfig()
    for part in dotted.split("."):
        value = getattr(value, part)
    assert value == expected


def test_provider_roles_and_seeds_are_filled_in():
    config = RunConfig.model_validate(
        {"text_provider": {"dim": 8}, "prompt_provider": {}}
    )
    assert (config.text_provider.role, config.text_provider.seed) == ("text", 0)
    assert (config.prompt_provider.role, config.prompt_provider.seed) == ("prompt", 1)


def test_flags_override_file_values(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 3, "pretrain": {"tau": 0.5, "epochs": 7}}))
    config = load_config(path, {"seed": 9, "pretrain": {"epochs": None, "k_neg": 5}})
    assert config.seed == 9
    assert config.pretrain.tau == 0.5
    assert config.pretrain.epochs == 7
    assert config.pretrain.k_neg == 5


def test_empty_flag_sections_leave_defaults_alone():
    config = load_config(None, {"text_provider": {"backend": None, "path": None}})
    assert config.text_provider.backend == "stub"


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"model": {"width": 12}}))
    with pytest.raises(ConfigError, match="width"):
        load_config(path)


def test_unreadable_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{broken")
    with pytest.raises(ConfigError):
        load_config(path)


def test_no_pretrain_contradicts_an_initial_checkpoint(tmp_path):
    overrides = {
        "ablation": {"no_pretrain": True},
        "finetune": {"init_checkpoint": str(tmp_path / "p.ckpt")},
    }
    with pytest.raises(ConfigError, match="no_pretrain"):
        load_config(None, overrides)


def test_file_provider_needs_a_path():
    with pytest.raises(ConfigError, match="path"):
        load_config(None, {"text_provider": {"backend": "file"}})


def test_http_provider_needs_an_endpoint(monkeypatch):
    monkeypatch.delenv("SEGA_EMB_ENDPOINT", raising=False)
    with pytest.raises(ConfigError, match="endpoint"):
        load_config(None, {"prompt_provider": {"backend": "http"}})
    monkeypatch.setenv("SEGA_EMB_ENDPOINT", "http://emb.test")
    assert load_config(None, {"prompt_provider": {"backend": "http"}}).prompt_provider


def test_heads_must_divide_output_width():
    with pytest.raises(ConfigError, match="heads"):
        load_config(None, {"model": {"heads": 3}})


def test_config_is_json_serialisable(tmp_path):
    config = load_config(None, {"dataset": tmp_path, "out": tmp_path / "o"})
    dumped = json.dumps(config.model_dump(mode="json"))
    assert RunConfig.model_validate_json(dumped) == config
