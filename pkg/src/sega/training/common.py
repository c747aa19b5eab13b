"""Pieces shared by the pre-training and fine-tuning loops."""

import csv
import logging
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from sega.autodiff.checkpoint import load_checkpoint
from sega.config import RunConfig
from sega.embeddings.providers import EmbeddingProvider
from sega.errors import ConfigError
from sega.graph.io import load_dataset
from sega.graph.store import LIST, RELATIONS, USER_RELATIONS, HeteroGraph
from sega.model.features import GraphInputs, prepare_inputs
from sega.model.rgt import GraphStructure, HeteroEncoder, build_relation_masks

logger = logging.getLogger(__name__)

ENCODER_PREFIX = "encoder."
HEAD_PREFIX = "head."
META_EPOCH = "meta.epoch"

# seed-sequence keys; fixed so resumed runs draw the same streams
INIT_STREAM = 0
PRETRAIN_STREAM = 1
FINETUNE_STREAM = 2


def init_rng(seed: int, part: int) -> np.random.Generator:
    return np.random.default_rng([seed, INIT_STREAM, part])


def epoch_rng(seed: int, stage: int, epoch: int) -> np.random.Generator:
    """Independent stream per (stage, epoch), so a resumed epoch replays exactly."""
    return np.random.default_rng([seed, stage, epoch])


def active_relations(config: RunConfig) -> tuple[str, ...]:
    return USER_RELATIONS if config.ablation.no_list else RELATIONS


def ablated_graph(graph: HeteroGraph, config: RunConfig) -> HeteroGraph:
    """The graph the encoder actually sees under the configured ablations."""
    if config.ablation.no_list:
        logger.info("list ablation: dropping %d list nodes", graph.num_lists)
        return graph.without_lists()
    return graph


def build_encoder(
    config: RunConfig, relations: Sequence[str] | None = None
) -> HeteroEncoder:
    relations = tuple(relations or active_relations(config))
    return HeteroEncoder(config.model, init_rng(config.seed, 0), relations)


def build_structure(graph: HeteroGraph, encoder: HeteroEncoder) -> GraphStructure:
    return build_relation_masks(graph, encoder.relations)


def relations_in_state(state: Mapping[str, np.ndarray]) -> tuple[str, ...]:
    """Relations an encoder checkpoint was trained with."""
    list_features = any(
        name.startswith(f"{ENCODER_PREFIX}features.{LIST}.") for name in state
    )
    return RELATIONS if list_features else USER_RELATIONS


def load_encoder_state(
    encoder: HeteroEncoder, path: Path | str
) -> dict[str, np.ndarray]:
    entries = load_checkpoint(path)
    encoder.load_state(entries, ENCODER_PREFIX)
    logger.info("initialised encoder from %s", path)
    return entries


def batches(
    rows: np.ndarray, batch_size: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    """Shuffled mini-batches covering ``rows`` once."""
    order = rows[rng.permutation(len(rows))]
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


class EpochLog:
    """Append-only CSV with one row per epoch."""

    def __init__(self, path: Path | str, header: Sequence[str], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not (append and self.path.exists()):
            with self.path.open("w", newline="", encoding="utf-8") as handle:
                csv.writer(handle).writerow(header)

    def write(self, *values) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(
                [f"{v:.8g}" if isinstance(v, float) else v for v in values]
            )


def checkpoint_view(
    config: RunConfig, relations: Sequence[str], provider: EmbeddingProvider
) -> tuple[HeteroGraph, GraphInputs]:
    """Dataset graph and encoded inputs as seen by an encoder over ``relations``."""
    if config.dataset is None:
        raise ConfigError("no dataset configured")
    graph = load_dataset(config.dataset, config.model.max_tweets)
    if tuple(relations) == USER_RELATIONS:
        graph = graph.without_lists()
    return graph, prepare_inputs(graph, provider)
