"""SEGAEMB1 embedding files and the text keys they are indexed by.

Layout: magic ``SEGAEMB1``, u32 count, u32 dim, then ``count`` entries of a
u64 key followed by ``dim`` float32 values, all little-endian. Keys are the
64-bit FNV-1a hash of the truncated UTF-8 text.
"""

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from sega.errors import ProviderError

MAGIC = b"SEGAEMB1"
_HEADER = struct.Struct("<II")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def truncate_words(text: str, max_words: int) -> str:
    """First ``max_words`` whitespace tokens, single-space joined."""
    return " ".join(text.split()[:max_words])


def _entry_dtype(dim: int) -> np.dtype:
    return np.dtype([("key", "<u8"), ("vec", "<f4", (dim,))])


def save_embeddings(
    path: Path | str, vectors: Mapping[int, np.ndarray], dim: int
) -> Path:
    """Write ``vectors`` (key -> [dim]) sorted by key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.zeros(len(vectors), dtype=_entry_dtype(dim))
    for row, key in enumerate(sorted(vectors)):
        vector = np.asarray(vectors[key], dtype=np.float32)
        if vector.shape != (dim,):
            raise ProviderError(
                f"embedding for key {key:016x} has shape {vector.shape}"
            )
        table[row] = (key, vector)
    with path.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(_HEADER.pack(len(vectors), dim))
        handle.write(table.tobytes())
    return path


def load_embeddings(path: Path | str) -> tuple[dict[int, np.ndarray], int]:
    """Read an embedding file.

    Returns:
        Mapping from key to float32 vector, and the vector width.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ProviderError(f"cannot read embedding file {path}: {e}") from e
    if raw[: len(MAGIC)] != MAGIC:
        raise ProviderError(f"{path}: not a SEGAEMB1 embedding file")
    offset = len(MAGIC)
    if len(raw) < offset + _HEADER.size:
        raise ProviderError(f"{path}: truncated header")
    count, dim = _HEADER.unpack_from(raw, offset)
    offset += _HEADER.size
    dtype = _entry_dtype(dim)
    if len(raw) - offset != count * dtype.itemsize:
        raise ProviderError(
            f"{path}: expected {count} entries of width {dim}, "
            f"found {len(raw) - offset} payload bytes"
        )
    table = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    pairs = zip(table["key"], table["vec"])
    return {int(k): v.astype(np.float32) for k, v in pairs}, dim
