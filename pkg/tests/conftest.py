"""Shared fixtures: a hand-built 12-node graph, stub providers, small configs."""

from pathlib import Path

import numpy as np
import pytest

from sega.config import RunConfig
from sega.embeddings.providers import StubProvider
from sega.graph.io import save_dataset
from sega.graph.store import Edge, HeteroGraph, ListRecord, UserRecord
from sega.graph.synth import PREFS_FILE
from sega.preferences.cache import write_preferences
from sega.preferences.oracle import PreferenceProfile
from sega.preferences.taxonomy import Emotion, Topic

D_TEXT = 16

SMALL_MODEL = {
    "d_text": D_TEXT,
    "d_h": 4,
    "d_out": 8,
    "d_u": 6,
    "d_a": 5,
    "layers": 2,
    "heads": 2,
}

NEWS_ANGER = (Topic.NEWS, Emotion.ANGER)
NEWS_FEAR = (Topic.NEWS, Emotion.FEAR)
SPORTS_JOY = (Topic.SPORTS, Emotion.JOY)
MUSIC_JOY = (Topic.MUSIC, Emotion.JOY)
TECH_TRUST = (Topic.TECHNOLOGY, Emotion.TRUST)
FINANCE_ANTICIPATION = (Topic.BUSINESS_FINANCE, Emotion.ANTICIPATION)

PLANTED = {
    "u01": [SPORTS_JOY, SPORTS_JOY, MUSIC_JOY],
    "u02": [MUSIC_JOY, MUSIC_JOY, SPORTS_JOY],
    "u03": [SPORTS_JOY, MUSIC_JOY, MUSIC_JOY],
    "u04": [TECH_TRUST, TECH_TRUST, FINANCE_ANTICIPATION],
    "u05": [FINANCE_ANTICIPATION, TECH_TRUST, FINANCE_ANTICIPATION],
    "u06": [TECH_TRUST, FINANCE_ANTICIPATION, TECH_TRUST],
    "u07": [NEWS_ANGER, NEWS_ANGER, NEWS_FEAR],
    "u08": [NEWS_FEAR, NEWS_ANGER, NEWS_FEAR],
    "u09": [NEWS_ANGER, NEWS_FEAR, NEWS_ANGER],
}


def _user(index: int, label: str, split: str) -> UserRecord:
    uid = f"u{index:02d}"
    tweets = tuple(
        f"{t.value} {e.value} take {k}" for k, (t, e) in enumerate(PLANTED[uid])
    )
    return UserRecord(
        uid,
        (index % 2 == 0, False, label == "normal"),
        (1.6e9 + index * 1e6, 8.0 + index, 100.0 * index, 50.0 + index, 10.0 * index),
        f"{label} account number {index}",
        tweets,
        label,
        split,
    )


def build_tiny_graph() -> HeteroGraph:
    splits = ("train", "valid", "test")
    users = [
        _user(i + 1, label, splits[i % 3])
        for i, label in enumerate(["normal"] * 3 + ["bot"] * 3 + ["troll"] * 3)
    ]
    lists = [
        ListRecord("l1", (False,), (1.5e9, 10.0, 3.0, 2.0), "fans of the game"),
        ListRecord("l2", (True,), (1.55e9, 12.0, 0.0, 2.0), "market signals"),
        ListRecord("l3", (False,), (1.58e9, 9.0, 1.0, 1.0), "breaking news"),
    ]
    edges = [
        Edge("u01", "following", "u02"),
        Edge("u04", "following", "u05"),
        Edge("u07", "following", "u08"),
        Edge("u02", "followers", "u03"),
        Edge("u05", "followers", "u06"),
        Edge("u08", "followers", "u09"),
        Edge("l1", "membership", "u01"),
        Edge("l1", "membership", "u03"),
        Edge("l2", "membership", "u04"),
        Edge("l2", "membership", "u06"),
        Edge("l3", "membership", "u09"),
        Edge("u02", "followed", "l1"),
        Edge("u05", "followed", "l2"),
        Edge("u07", "own", "l3"),
    ]
    return HeteroGraph(users, lists, edges)


@pytest.fixture
def tiny_graph() -> HeteroGraph:
    return build_tiny_graph()


@pytest.fixture
def profiles() -> dict[str, PreferenceProfile]:
    return {
        uid: PreferenceProfile.from_pairs(uid, pairs) for uid, pairs in PLANTED.items()
    }


@pytest.fixture
def text_provider() -> StubProvider:
    return StubProvider(seed=0, role="text", dim=D_TEXT)


@pytest.fixture
def prompt_provider() -> StubProvider:
    return StubProvider(seed=1, role="prompt", dim=D_TEXT)


@pytest.fixture
def dataset_dir(tmp_path: Path, tiny_graph: HeteroGraph) -> Path:
    directory = save_dataset(tiny_graph, tmp_path / "data")
    write_preferences(directory / PREFS_FILE, PLANTED)
    return directory


def small_config(dataset: Path | None = None, out: Path | None = None, **sections):
    """RunConfig sized for the tiny graph; keyword sections override defaults."""
    data = {
        "dataset": dataset,
        "out": out,
        "text_provider": {"dim": D_TEXT},
        "prompt_provider": {"dim": D_TEXT},
        "model": dict(SMALL_MODEL),
        "pretrain": {"epochs": 2, "batch_size": 4, "k_neg": 3},
        "finetune": {"epochs": 2, "batch_size": 4},
    }
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return RunConfig.model_validate(data)


@pytest.fixture
def run_config(dataset_dir: Path, tmp_path: Path) -> RunConfig:
    return small_config(dataset_dir, tmp_path / "run")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
