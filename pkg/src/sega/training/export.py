"""User embedding export, optional 2-D PCA projection and user filters."""

import csv
import logging
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from sklearn.decomposition import PCA

from sega.config import RunConfig
from sega.embeddings.providers import EmbeddingProvider
from sega.errors import ConfigError, GraphError
from sega.graph.store import HeteroGraph
from sega.model.features import GraphInputs
from sega.model.rgt import GraphStructure, HeteroEncoder
from sega.preferences.oracle import PreferenceProfile, preference_summary
from sega.preferences.taxonomy import format_pair
from sega.training.common import build_structure, checkpoint_view
from sega.training.finetune import load_encoder

logger = logging.getLogger(__name__)

FILTER_FIELDS = ("majority_pair", "majority_topic", "majority_emotion", "label")


def user_embeddings(
    encoder: HeteroEncoder, inputs: GraphInputs, structure: GraphStructure
) -> np.ndarray:
    """Inference-mode user embeddings, [num_users, d_u]."""
    return encoder(inputs, structure).numpy().astype(np.float64)


def _normalize(value: str) -> str:
    return " ".join(value.replace("-", " - ").split()).lower()


def parse_filter(
    expression: str, profiles: Mapping[str, PreferenceProfile]
) -> Callable[[str, str | None], bool]:
    """Predicate over (user id, label) from a ``field=value`` expression.

    Majority fields come from the user's preference profile; users without
    one never match them. Values compare case-insensitively, and
    ``news-anger`` matches ``news - anger``.

    Raises:
        ConfigError: Malformed expression or unknown field.
    """
    name, sep, value = expression.partition("=")
    name = name.strip()
    if not sep or not value.strip():
        raise ConfigError(f"filter {expression!r} is not 'field=value'")
    if name not in FILTER_FIELDS:
        raise ConfigError(
            f"unknown filter field {name!r}; expected one of {', '.join(FILTER_FIELDS)}"
        )
    wanted = _normalize(value)
    if name == "label":
        return lambda uid, label: label is not None and label.lower() == wanted

    def majority(uid: str) -> str | None:
        profile = profiles.get(uid)
        if not profile:
            return None
        topic, emotion = preference_summary(profile).max_pair
        if name == "majority_pair":
            return format_pair((topic, emotion))
        return topic.value if name == "majority_topic" else emotion.value

    def matches(uid: str, label: str | None) -> bool:
        found = majority(uid)
        return found is not None and _normalize(found) == wanted

    return matches


def select_users(
    graph: HeteroGraph,
    expression: str | None,
    profiles: Mapping[str, PreferenceProfile] | None = None,
) -> np.ndarray:
    """User rows (id order) that pass the filter; all users without one."""
    if expression is None:
        return np.arange(graph.num_users)
    keep = parse_filter(expression, profiles or {})
    return np.array(
        [row for row, user in enumerate(graph.users) if keep(user.id, user.label)],
        dtype=np.int64,
    )


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Exact (full SVD) projection onto the first two principal components."""
    if vectors.shape[0] < 2:
        raise GraphError(f"PCA needs at least two users, got {vectors.shape[0]}")
    components = min(2, vectors.shape[1])
    projected = PCA(n_components=components, svd_solver="full").fit_transform(vectors)
    if components < 2:
        projected = np.hstack([projected, np.zeros((len(projected), 1))])
    return projected


def _write_rows(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def export_embeddings(
    graph: HeteroGraph,
    embeddings: np.ndarray,
    path: Path | str,
    rows: np.ndarray | None = None,
    pca_path: Path | str | None = None,
) -> list[Path]:
    """Write ``user_id,label,e0..`` rows, plus ``user_id,label,pc1,pc2`` if asked.

    Args:
        graph: Graph whose users row-align with ``embeddings``.
        embeddings: [num_users, d] user embeddings.
        path: Embedding CSV.
        rows: Selected user rows; all users when omitted.
        pca_path: Destination of the 2-D projection of the selected users.

    Returns:
        Written files.
    """
    rows = np.arange(graph.num_users) if rows is None else rows
    users = [graph.users[r] for r in rows]
    selected = embeddings[rows]
    header = ["user_id", "label"] + [f"e{i}" for i in range(embeddings.shape[1])]
    written = [
        _write_rows(
            Path(path),
            header,
            (
                [u.id, u.label or ""] + [f"{v:.8g}" for v in vec]
                for u, vec in zip(users, selected)
            ),
        )
    ]
    if pca_path is not None:
        projected = pca_2d(selected)
        written.append(
            _write_rows(
                Path(pca_path),
                ["user_id", "label", "pc1", "pc2"],
                (
                    [u.id, u.label or "", f"{p[0]:.8g}", f"{p[1]:.8g}"]
                    for u, p in zip(users, projected)
                ),
            )
        )
    logger.info("exported %d user embeddings to %s", len(users), path)
    return written


def embeddings_from_checkpoint(
    config: RunConfig, checkpoint: Path | str, provider: EmbeddingProvider
) -> tuple[HeteroGraph, np.ndarray]:
    """User embeddings of the configured dataset under a saved encoder."""
    encoder = load_encoder(config, checkpoint)
    graph, inputs = checkpoint_view(config, encoder.relations, provider)
    return graph, user_embeddings(encoder, inputs, build_structure(graph, encoder))
