"""On-disk cache of extracted topic-emotion pairs (``prefs.jsonl``).

One JSON object per line: ``{"id": user-id, "pairs": [["news", "anger"], ...]}``.
New entries are appended under a lock; later lines win on reload.
"""

import json
import logging
import threading
from pathlib import Path
from typing import Iterable, Mapping

from sega.errors import DatasetError
from sega.preferences.taxonomy import Pair, parse_pair

logger = logging.getLogger(__name__)


def _encode(user_id: str, pairs: Iterable[Pair]) -> str:
    payload = {"id": user_id, "pairs": [[t.value, e.value] for t, e in pairs]}
    return json.dumps(payload, ensure_ascii=False)


class PreferenceCache:
    """Read-your-writes cache of per-user pairs backed by a JSONL file."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._pairs: dict[str, list[Pair]] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    user_id = obj["id"]
                    raw_pairs = obj["pairs"]
                    if not isinstance(user_id, str) or not isinstance(raw_pairs, list):
                        raise TypeError("'id' must be a string and 'pairs' a list")
                    pairs = [parse_pair(str(t), str(e)) for t, e in raw_pairs]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise DatasetError(
                        self.path, lineno, f"malformed preference line: {e}"
                    ) from e
                self._pairs[user_id] = pairs
        logger.debug("loaded %d cached preference entries", len(self._pairs))

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._pairs

    def __len__(self) -> int:
        return len(self._pairs)

    def get(self, user_id: str) -> list[Pair] | None:
        pairs = self._pairs.get(user_id)
        return list(pairs) if pairs is not None else None

    def ids(self) -> list[str]:
        return sorted(self._pairs)

    def put(self, user_id: str, pairs: Iterable[Pair]) -> None:
        pairs = list(pairs)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(_encode(user_id, pairs) + "\n")
            self._pairs[user_id] = pairs


def write_preferences(
    path: Path | str, pairs_by_user: Mapping[str, Iterable[Pair]]
) -> Path:
    """Write a complete cache file, one line per user in id order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_encode(uid, pairs_by_user[uid]) for uid in sorted(pairs_by_user)]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path
