"""Seeded synthetic user/list benchmark.

Edges follow a planted-partition scheme per relation: two endpoints of the
same class connect with probability ``p_intra``, others with ``p_inter``.
Lists carry a hidden class, so class signal can also travel through list
membership. Trolls copy the metadata distribution of normal users and differ
only in what they post; bots differ in both.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sega.errors import ConfigError
from sega.graph.io import save_dataset
from sega.graph.store import (
    LABELS,
    LIST,
    MAX_TWEETS,
    RELATION_ENDPOINTS,
    RELATIONS,
    Edge,
    HeteroGraph,
    ListRecord,
    UserRecord,
)
from sega.preferences.cache import write_preferences
from sega.preferences.taxonomy import PAIR_SPACE, Emotion, Pair, Topic, parse_pair

logger = logging.getLogger(__name__)

PREFS_FILE = "prefs.jsonl"
CONFIG_FILE = "synth.json"
PLANTED_POSTS = 10

Probability = Annotated[float, Field(ge=0.0, le=1.0)]


class SynthConfig(BaseModel):
    """Generator settings; defaults give the 300-user / 40-list desk benchmark."""

    model_config = ConfigDict(extra="forbid")

    n_normal: int = Field(250, ge=0)
    n_bot: int = Field(30, ge=0)
    n_troll: int = Field(20, ge=0)
    n_lists: int = Field(40, ge=0)
    p_intra: dict[str, Probability] = Field(
        default_factory=lambda: {
            "following": 0.05,
            "followers": 0.05,
            "membership": 0.12,
            "followed": 0.08,
            "own": 0.02,
        }
    )
    p_inter: dict[str, Probability] = Field(
        default_factory=lambda: {
            "following": 0.004,
            "followers": 0.004,
            "membership": 0.01,
            "followed": 0.01,
            "own": 0.002,
        }
    )
    preferences: dict[str, list[str]] = Field(
        default_factory=lambda: {
            "normal": [
                "sports - joy",
                "music - joy",
                "food - joy",
                "travel - anticipation",
                "movies & TV - surprise",
                "gaming - joy",
                "arts & culture - trust",
                "outdoors - joy",
            ],
            "bot": [
                "business & finance - anticipation",
                "technology - trust",
                "business & finance - trust",
                "careers - anticipation",
            ],
            "troll": ["news - anger", "news - disgust", "news - fear"],
        }
    )
    preference_strength: Probability = 0.7
    zero_tweet_rate: Probability = 0.02
    min_tweets: int = Field(3, ge=1)
    max_tweets: int = Field(MAX_TWEETS, ge=1)
    phrase_variants: int = Field(3, ge=1)
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = Field(7, ge=0)

    @field_validator("p_intra", "p_inter")
    @classmethod
    def _relations(cls, value: dict[str, float]) -> dict[str, float]:
        unknown = set(value) - set(RELATIONS)
        if unknown:
            raise ValueError(f"unknown relations {sorted(unknown)}")
        return value

    @field_validator("preferences")
    @classmethod
    def _pairs(cls, value: dict[str, list[str]]) -> dict[str, list[str]]:
        missing = [label for label in LABELS if not value.get(label)]
        if missing:
            raise ValueError(f"no preference pairs for classes {missing}")
        for label, entries in value.items():
            if label not in LABELS:
                raise ValueError(f"unknown class {label!r}")
            for entry in entries:
                if " - " not in entry:
                    raise ValueError(f"preference {entry!r} is not 'topic - emotion'")
        return value

    @model_validator(mode="after")
    def _ranges(self) -> "SynthConfig":
        if self.min_tweets > self.max_tweets:
            raise ValueError("min_tweets exceeds max_tweets")
        fractions = self.split_fractions
        if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
            raise ValueError("split_fractions must be non-negative and sum to 1")
        return self

    @property
    def class_counts(self) -> dict[str, int]:
        return {"normal": self.n_normal, "bot": self.n_bot, "troll": self.n_troll}

    def planted_pairs(self, label: str) -> list[Pair]:
        return [parse_pair(*entry.split(" - ", 1)) for entry in self.preferences[label]]


@dataclass(frozen=True)
class _Metadata:
    """Indicator probabilities and (mean, std, log-scale) per numerical feature."""

    indicator_p: tuple[float, ...]
    numericals: tuple[tuple[float, float, bool], ...]


_NORMAL_META = _Metadata(
    (0.9, 0.1, 0.05),
    (
        (1.40e9, 8.0e7, False),
        (11.0, 3.0, False),
        (5.5, 1.5, True),
        (5.5, 1.0, True),
        (7.0, 1.2, True),
    ),
)
_BOT_META = _Metadata(
    (0.45, 0.02, 0.0),
    (
        (1.58e9, 4.0e7, False),
        (15.0, 4.0, False),
        (3.5, 1.2, True),
        (6.8, 1.0, True),
        (8.8, 1.0, True),
    ),
)
# trolls mimic normal users
USER_METADATA = {"normal": _NORMAL_META, "bot": _BOT_META, "troll": _NORMAL_META}
LIST_METADATA = _Metadata(
    (0.1,),
    ((1.45e9, 6.0e7, False), (14.0, 4.0, False), (3.0, 1.5, True), (0.0, 0.0, False)),
)

_RANDOM_PAIRS = [
    p for p in PAIR_SPACE if Topic.OTHERS not in p and Emotion.OTHERS not in p
]

USER_DESCRIPTIONS = {
    "normal": (
        "coffee lover and weekend hiker",
        "dad, runner, part-time guitarist",
        "student who reads too much",
        "photographer chasing sunsets",
        "",
    ),
    "bot": (
        "automated market updates every hour",
        "follow for daily crypto signals",
        "news aggregator account",
    ),
}
USER_DESCRIPTIONS["troll"] = USER_DESCRIPTIONS["normal"]
LIST_DESCRIPTIONS = {
    "normal": "friends and hobbies",
    "bot": "market signal feeds",
    "troll": "outrage and hot takes",
}


def _numericals(meta: _Metadata, rng: np.random.Generator) -> tuple[float, ...]:
    values = []
    for mean, std, log_scale in meta.numericals:
        value = rng.normal(mean, std) if std else mean
        values.append(float(round(math.exp(value) if log_scale else max(value, 1.0))))
    return tuple(values)


def _indicators(meta: _Metadata, rng: np.random.Generator) -> tuple[bool, ...]:
    return tuple(bool(rng.random() < p) for p in meta.indicator_p)


def _tweet(pair: Pair, variant: int) -> str:
    return f"{pair[0].value} {pair[1].value} take {variant}"


def _posts(
    favourites: list[Pair], config: SynthConfig, rng: np.random.Generator
) -> tuple[tuple[str, ...], list[Pair]]:
    if rng.random() < config.zero_tweet_rate:
        return (), []
    primary, secondary = rng.choice(
        len(favourites), size=2, replace=len(favourites) < 2
    )
    count = int(rng.integers(config.min_tweets, config.max_tweets + 1))
    pairs = []
    for _ in range(count):
        draw = rng.random()
        if draw < config.preference_strength:
            pair = favourites[primary]
        elif draw < config.preference_strength + (1 - config.preference_strength) / 2:
            pair = favourites[secondary]
        else:
            pair = _RANDOM_PAIRS[int(rng.integers(len(_RANDOM_PAIRS)))]
        pairs.append(pair)
    texts = tuple(_tweet(p, int(rng.integers(config.phrase_variants))) for p in pairs)
    return texts, pairs


def _planted_edges(
    relation: str,
    src_ids: list[str],
    src_classes: np.ndarray,
    dst_ids: list[str],
    dst_classes: np.ndarray,
    config: SynthConfig,
    rng: np.random.Generator,
) -> list[Edge]:
    if not src_ids or not dst_ids:
        return []
    same = src_classes[:, None] == dst_classes[None, :]
    intra, inter = config.p_intra.get(relation, 0.0), config.p_inter.get(relation, 0.0)
    probs = np.where(same, intra, inter)
    hits = rng.random(probs.shape) < probs
    if src_ids is dst_ids:
        np.fill_diagonal(hits, False)
    rows, cols = np.nonzero(hits)
    return [Edge(src_ids[i], relation, dst_ids[j]) for i, j in zip(rows, cols)]


def _split_assignment(
    labels: dict[str, str],
    fractions: tuple[float, float, float],
    rng: np.random.Generator,
) -> dict[str, str]:
    splits: dict[str, str] = {}
    for label in LABELS:
        ids = sorted(uid for uid, lab in labels.items() if lab == label)
        order = rng.permutation(len(ids))
        n_train = int(math.floor(fractions[0] * len(ids)))
        n_valid = int(math.floor(fractions[1] * len(ids)))
        for rank, index in enumerate(order):
            if rank < n_train:
                splits[ids[index]] = "train"
            elif rank < n_train + n_valid:
                splits[ids[index]] = "valid"
            else:
                splits[ids[index]] = "test"
    return splits


def generate_graph(config: SynthConfig) -> tuple[HeteroGraph, dict[str, list[Pair]]]:
    """Build the synthetic graph and the planted pairs of each user's recent posts.

    Raises:
        ConfigError: The configuration requests zero users.
    """
    total = sum(config.class_counts.values())
    if total == 0:
        raise ConfigError("synthetic config requests zero users")
    rng = np.random.default_rng(config.seed)
    width = len(str(total))

    labels: dict[str, str] = {}
    for label, count in config.class_counts.items():
        for _ in range(count):
            labels[f"u{len(labels) + 1:0{width}d}"] = label
    user_ids = list(labels)
    user_classes = np.array([LABELS.index(labels[uid]) for uid in user_ids])
    list_ids = [f"l{i + 1:0{len(str(config.n_lists))}d}" for i in range(config.n_lists)]
    list_classes = np.array([i % len(LABELS) for i in range(config.n_lists)])

    splits = _split_assignment(labels, config.split_fractions, rng)

    users: list[UserRecord] = []
    planted: dict[str, list[Pair]] = {}
    for uid in user_ids:
        label = labels[uid]
        meta = USER_METADATA[label]
        descriptions = USER_DESCRIPTIONS[label]
        tweets, pairs = _posts(config.planted_pairs(label), config, rng)
        users.append(
            UserRecord(
                uid,
                _indicators(meta, rng),
                _numericals(meta, rng),
                descriptions[int(rng.integers(len(descriptions)))],
                tweets,
                label,
                splits[uid],
            )
        )
        if pairs:
            planted[uid] = pairs[-PLANTED_POSTS:]

    ids_by_kind = {"user": (user_ids, user_classes), LIST: (list_ids, list_classes)}
    edges: list[Edge] = []
    for relation in RELATIONS:
        src_kind, dst_kind = RELATION_ENDPOINTS[relation]
        edges.extend(
            _planted_edges(
                relation, *ids_by_kind[src_kind], *ids_by_kind[dst_kind], config, rng
            )
        )

    members = {lid: 0 for lid in list_ids}
    for edge in edges:
        if edge.relation == "membership":
            members[edge.src] += 1
    lists = []
    for lid, cls in zip(list_ids, list_classes):
        numericals = _numericals(LIST_METADATA, rng)[:-1] + (float(members[lid]),)
        lists.append(
            ListRecord(
                lid,
                _indicators(LIST_METADATA, rng),
                numericals,
                LIST_DESCRIPTIONS[LABELS[cls]],
            )
        )
    return HeteroGraph(users, lists, edges), planted


def synth_generate(config: SynthConfig, out_dir: Path | str) -> Path:
    """Write a synthetic dataset directory plus planted ``prefs.jsonl``.

    Args:
        config: Generator settings.
        out_dir: Target directory, created if needed.

    Returns:
        The dataset directory.
    """
    graph, planted = generate_graph(config)
    out_dir = save_dataset(graph, out_dir)
    write_preferences(out_dir / PREFS_FILE, planted)
    (out_dir / CONFIG_FILE).write_text(
        json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info("synthesized %s into %s", graph.stats(), out_dir)
    return out_dir
