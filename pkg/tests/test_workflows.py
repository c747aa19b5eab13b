"""Tests for the LangGraph workflows and run-directory helpers."""

import json

import pytest

from sega.errors import ConfigError, DatasetError
from sega.utils.file_manager import (
    create_run_directory,
    find_latest_run,
    get_next_run_number,
    save_json,
    slugify,
)
from sega.workflows.prefs import preferences_path, run_prefs
from sega.workflows.train import run_slug, run_train

from conftest import small_config


def test_slugify():
    assert slugify("Contrastive Default no_list") == "contrastive-default-no-list"
    assert slugify("  !!  ") == ""


def test_run_directories_are_numbered(tmp_path):
    runs = tmp_path / "runs"
    assert get_next_run_number(runs) == 1
    assert find_latest_run(runs) is None
    first, n1 = create_run_directory("contrastive default", runs)
    (runs / "notes").mkdir()
    second, n2 = create_run_directory("???", runs)
    assert (n1, n2) == (1, 2)
    assert first.name == "001-contrastive-default"
    assert second.name == "002-run"
    assert find_latest_run(runs) == second


def test_save_json_sorts_keys(tmp_path):
    path = save_json({"b": 1, "a": [1, 2]}, tmp_path / "x" / "out.json")
    assert path.read_text().startswith('{\n  "a"')


def test_preferences_path_defaults_to_the_dataset(tmp_path):
    assert preferences_path(small_config(tmp_path)) == tmp_path / "prefs.jsonl"
    custom = small_config(tmp_path, pretrain={"prefs_path": tmp_path / "p.jsonl"})
    assert preferences_path(custom) == tmp_path / "p.jsonl"
    with pytest.raises(ConfigError):
        preferences_path(small_config())


def test_prefs_workflow_reports_cache_state(dataset_dir):
    result = run_prefs(small_config(dataset_dir))
    assert result["error"] is None
    assert result["cached_before"] == 9
    assert result["extracted"] == 0
    assert sorted(result["profiles"]) == [f"u{i:02d}" for i in range(1, 10)]


def test_prefs_workflow_surfaces_dataset_errors(tmp_path):
    result = run_prefs(small_config(tmp_path / "missing"))
    assert isinstance(result["exception"], DatasetError)


def test_run_slug_names_objective_template_and_ablations():
    config = small_config(pretrain={"template": "short"}, ablation={"no_list": True})
    assert run_slug(config) == "contrastive-short-no_list"


def test_train_creates_a_numbered_run_when_no_out_is_given(
    dataset_dir, tmp_path, monkeypatch
):
    monkeypatch.chdir(tmp_path)
    result = run_train(small_config(dataset_dir), ("finetune",))
    assert result["error"] is None
    assert result["run_dir"].name == "001-contrastive-default"
    manifest = json.loads((result["run_dir"] / "run.json").read_text())
    assert manifest["stages"] == ["finetune"]
    assert "pretrain" not in manifest
    assert manifest["finetune"]["eval_split"] == "test"


def test_train_with_list_ablation_pretrains_on_users_only(dataset_dir, tmp_path):
    config = small_config(dataset_dir, tmp_path / "run", ablation={"no_list": True})
    result = run_train(config)
    assert result["executed"] == ["pretrain", "finetune"]
    assert result["graph"].num_lists == 0
    assert result["pretrain_result"].anchors == 9


def test_text_prompt_encoder_shares_the_text_provider(dataset_dir, tmp_path):
    config = small_config(
        dataset_dir, tmp_path / "run", pretrain={"prompt_encoder": "text"}
    )
    result = run_train(config, ("pretrain",))
    assert result["providers"]["prompt"] is result["providers"]["text"]
    assert result["executed"] == ["pretrain"]


def test_unknown_stage_is_rejected(dataset_dir):
    with pytest.raises(ConfigError):
        run_train(small_config(dataset_dir), ("distill",))
