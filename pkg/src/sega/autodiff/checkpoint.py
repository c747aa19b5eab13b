"""Binary parameter checkpoints.

Layout (little-endian): magic ``SEGACKPT``, u32 format version, then per
entry: u16 name length, UTF-8 name, u8 rank, u32 per dimension, f32 data.
Entries run to end of file.
"""

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from sega.errors import CheckpointError

MAGIC = b"SEGACKPT"
VERSION = 1


def save_checkpoint(path: Path | str, entries: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, array in entries.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        array = np.asarray(array)
        if array.ndim > 0xFF:
            raise CheckpointError(f"parameter {name} has rank {array.ndim}")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: Path | str) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a sega checkpoint (bad magic)")
    if len(blob) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    entries: dict[str, np.ndarray] = {}
    offset = 12
    try:
        while offset < len(blob):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            end = offset + 4 * count
            if end > len(blob):
                raise CheckpointError(f"{path}: truncated data for {name}")
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            entries[name] = data.reshape(shape).astype(np.float32)
            offset = end
    except (struct.error, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    return entries
