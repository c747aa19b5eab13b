"""Embedding backends: deterministic stub, precomputed file, HTTP service.

Every backend truncates text to the first ``max_words`` whitespace tokens
before hashing or lookup, and maps empty text to the zero vector.
"""

import logging
import os
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Iterable, Sequence

import httpx
import numpy as np
from diskcache import Cache

from sega.config import EMB_ENDPOINT_ENV, ProviderConfig
from sega.embeddings.store import (
    fnv1a_64,
    load_embeddings,
    save_embeddings,
    truncate_words,
)
from sega.errors import ProviderError

logger = logging.getLogger(__name__)

DIM = 768
MAX_WORDS = 50
ATTEMPTS = 3


class EmbeddingProvider(ABC):
    """Maps text to fixed-width float32 vectors."""

    backend = "abstract"

    def __init__(self, role: str = "text", dim: int = DIM, max_words: int = MAX_WORDS):
        self.role = role
        self.dim = dim
        self.max_words = max_words

    def prepare(self, text: str) -> str:
        return truncate_words(text, self.max_words)

    def embed_text(self, text: str) -> np.ndarray:
        prepared = self.prepare(text)
        if not prepared:
            return np.zeros(self.dim, dtype=np.float32)
        return self._embed(prepared)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        """Embed ``texts`` in order; returns an array of shape [len(texts), dim]."""
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            try:
                out[i] = self.embed_text(text)
            except ProviderError as e:
                raise ProviderError(f"batch element {i}: {e}", e.retryable) from e
        return out

    @abstractmethod
    def _embed(self, text: str) -> np.ndarray:
        """Embed already-truncated, non-empty text."""


class StubProvider(EmbeddingProvider):
    """Unit-norm Gaussian vectors keyed by the text hash XOR ``seed``.

    A Philox counter-based generator makes the vector a pure function of the
    truncated text and the seed, identical across processes.
    """

    backend = "stub"

    def __init__(
        self,
        seed: int = 0,
        role: str = "text",
        dim: int = DIM,
        max_words: int = MAX_WORDS,
    ):
        super().__init__(role, dim, max_words)
        self.seed = seed

    def _embed(self, text: str) -> np.ndarray:
        key = fnv1a_64(text) ^ (self.seed & 0xFFFFFFFFFFFFFFFF)
        rng = np.random.Generator(np.random.Philox(key=key))
        vector = rng.standard_normal(self.dim)
        return (vector / np.linalg.norm(vector)).astype(np.float32)


class FileProvider(EmbeddingProvider):
    """Lookup in a precomputed SEGAEMB1 file."""

    backend = "file"

    def __init__(
        self,
        path: Path | str,
        role: str = "text",
        dim: int = DIM,
        max_words: int = MAX_WORDS,
    ):
        super().__init__(role, dim, max_words)
        self.path = Path(path)
        self._vectors, file_dim = load_embeddings(self.path)
        if file_dim != dim:
            raise ProviderError(
                f"{self.path}: vectors have width {file_dim}, expected {dim}"
            )
        logger.debug("loaded %d embeddings from %s", len(self._vectors), self.path)

    def _embed(self, text: str) -> np.ndarray:
        key = fnv1a_64(text)
        try:
            return self._vectors[key]
        except KeyError:
            raise ProviderError(
                f"{self.path}: no embedding for text hash {key:016x}"
            ) from None


class HttpProvider(EmbeddingProvider):
    """``POST /embed`` with ``{"texts", "role"}``, expecting ``{"vectors"}``."""

    backend = "http"

    def __init__(
        self,
        endpoint: str | None = None,
        role: str = "text",
        dim: int = DIM,
        max_words: int = MAX_WORDS,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__(role, dim, max_words)
        base = endpoint or os.getenv(EMB_ENDPOINT_ENV)
        if not base:
            raise ProviderError(
                f"http embedding backend needs an endpoint or {EMB_ENDPOINT_ENV}"
            )
        self.url = base.rstrip("/") + "/embed"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _post(self, texts: list[str]) -> np.ndarray:
        last_error: Exception | None = None
        for attempt in range(1, ATTEMPTS + 1):
            try:
                payload = {"texts": texts, "role": self.role}
                response = self._client.post(self.url, json=payload)
                response.raise_for_status()
                vectors = np.asarray(response.json()["vectors"], dtype=np.float32)
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as e:
                last_error = e
                logger.warning(
                    "embedding request attempt %d/%d failed: %s", attempt, ATTEMPTS, e
                )
                continue
            if vectors.shape != (len(texts), self.dim):
                raise ProviderError(
                    f"embedding service returned shape {vectors.shape}, "
                    f"expected {(len(texts), self.dim)}"
                )
            return vectors
        raise ProviderError(
            f"embedding service failed after {ATTEMPTS} attempts: {last_error}",
            retryable=True,
        )

    def _embed(self, text: str) -> np.ndarray:
        return self._post([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        prepared = [self.prepare(t) for t in texts]
        rows = [i for i, t in enumerate(prepared) if t]
        if rows:
            out[rows] = self._post([prepared[i] for i in rows])
        return out


class CachedProvider(EmbeddingProvider):
    """In-process memo plus an optional ``diskcache`` store in front of a backend."""

    def __init__(self, inner: EmbeddingProvider, cache_path: Path | str | None = None):
        super().__init__(inner.role, inner.dim, inner.max_words)
        self.inner = inner
        self.backend = inner.backend
        self._memory: dict[str, np.ndarray] = {}
        self._disk = Cache(str(cache_path)) if cache_path else None
        self._namespace = f"{inner.backend}:{inner.role}:{getattr(inner, 'seed', '')}"

    def _embed(self, text: str) -> np.ndarray:
        vector = self._memory.get(text)
        if vector is not None:
            return vector
        key = f"{self._namespace}:{text}"
        if self._disk is not None:
            vector = self._disk.get(key)
        if vector is None:
            vector = self.inner.embed_text(text)
            if self._disk is not None:
                self._disk.set(key, vector)
        self._memory[text] = vector
        return vector

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        prepared = [self.prepare(t) for t in texts]
        if isinstance(self.inner, HttpProvider):
            self._prefetch(prepared)
        return super().embed_batch(prepared)

    def _prefetch(self, prepared: list[str]) -> None:
        # one request for every text that is in neither cache layer
        missing = []
        for text in sorted({t for t in prepared if t and t not in self._memory}):
            key = f"{self._namespace}:{text}"
            cached = self._disk.get(key) if self._disk is not None else None
            if cached is None:
                missing.append(text)
            else:
                self._memory[text] = cached
        if not missing:
            return
        vectors = self.inner.embed_batch(missing)
        for text, vector in zip(missing, vectors):
            self._memory[text] = vector
            if self._disk is not None:
                self._disk.set(f"{self._namespace}:{text}", vector)

    def close(self) -> None:
        if self._disk is not None:
            self._disk.close()


def make_provider(config: ProviderConfig) -> EmbeddingProvider:
    """Build the configured backend wrapped in a cache."""
    if config.backend == "stub":
        inner: EmbeddingProvider = StubProvider(
            config.seed, config.role, config.dim, config.max_words
        )
    elif config.backend == "file":
        inner = FileProvider(config.path, config.role, config.dim, config.max_words)
    else:
        inner = HttpProvider(config.endpoint, config.role, config.dim, config.max_words)
    return CachedProvider(inner, config.cache_path)


def write_embedding_file(
    path: Path | str, texts: Iterable[str], provider: EmbeddingProvider
) -> Path:
    """Materialise a SEGAEMB1 file holding ``provider``'s vector for every text."""
    by_key: dict[int, str] = {}
    for text in texts:
        prepared = provider.prepare(text)
        if not prepared:
            continue
        key = fnv1a_64(prepared)
        previous = by_key.setdefault(key, prepared)
        if previous != prepared:
            logger.warning(
                "hash collision between %r and %r; keeping the first",
                previous,
                prepared,
            )
    keys = sorted(by_key)
    vectors = provider.embed_batch([by_key[k] for k in keys])
    logger.info("writing %d embeddings to %s", len(keys), path)
    return save_embeddings(path, dict(zip(keys, vectors)), provider.dim)
