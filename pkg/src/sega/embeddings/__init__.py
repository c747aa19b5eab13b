"""Text embedding providers for descriptions, tweets and pseudo-label prompts."""

from sega.embeddings.providers import (
    CachedProvider,
    EmbeddingProvider,
    FileProvider,
    HttpProvider,
    StubProvider,
    make_provider,
    write_embedding_file,
)

__all__ = [
    "CachedProvider",
    "EmbeddingProvider",
    "FileProvider",
    "HttpProvider",
    "StubProvider",
    "make_provider",
    "write_embedding_file",
]
