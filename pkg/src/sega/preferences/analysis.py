"""How separable rendered pseudo-labels are under a prompt encoder."""

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from sega.embeddings.providers import EmbeddingProvider
from sega.errors import PreferenceError
from sega.preferences.oracle import PreferenceProfile, pseudo_label_for


@dataclass(frozen=True)
class SimilarityReport:
    template: str
    labels: int
    pairs: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    def to_dict(self) -> dict:
        return asdict(self)


def pairwise_cosine(vectors: np.ndarray) -> np.ndarray:
    """Cosine similarity of every unordered pair of rows (upper triangle)."""
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise PreferenceError("cosine similarity is undefined for a zero embedding")
    unit = vectors / norms[:, None]
    sims = unit @ unit.T
    rows, cols = np.triu_indices(len(vectors), k=1)
    return sims[rows, cols]


def prompt_similarity(
    profiles: Iterable[PreferenceProfile],
    template: str,
    provider: EmbeddingProvider,
) -> SimilarityReport:
    """Quartiles of pairwise cosine similarity between distinct pseudo-labels.

    Args:
        profiles: User preference profiles; empty ones are skipped.
        template: Template kind used to render each profile.
        provider: Prompt encoder.

    Returns:
        Similarity distribution over all pairs of distinct rendered labels.
    """
    labels = sorted({pseudo_label_for(p, template).text for p in profiles if p})
    if len(labels) < 2:
        raise PreferenceError(
            f"need at least two distinct pseudo-labels, got {len(labels)}"
        )
    sims = pairwise_cosine(provider.embed_batch(labels).astype(np.float64))
    q1, median, q3 = np.quantile(sims, [0.25, 0.5, 0.75])
    return SimilarityReport(
        template=template,
        labels=len(labels),
        pairs=int(sims.size),
        minimum=float(sims.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        maximum=float(sims.max()),
    )
