"""Dataset directory reader and writer.

Layout (UTF-8): ``nodes.jsonl``, ``tweets.jsonl``, ``edges.csv``,
``labels.csv`` and ``splits.csv``. Every malformed line is reported with its
file and line number.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterator

from sega.errors import DatasetError, GraphError
from sega.graph.store import (
    LABELS,
    LIST,
    MAX_TWEETS,
    RELATION_ENDPOINTS,
    SPLITS,
    USER,
    Edge,
    HeteroGraph,
    ListRecord,
    UserRecord,
    validate,
)

logger = logging.getLogger(__name__)

NODES_FILE = "nodes.jsonl"
TWEETS_FILE = "tweets.jsonl"
EDGES_FILE = "edges.csv"
LABELS_FILE = "labels.csv"
SPLITS_FILE = "splits.csv"
DATASET_FILES = (NODES_FILE, TWEETS_FILE, EDGES_FILE, LABELS_FILE, SPLITS_FILE)

_ARITY = {
    USER: (UserRecord.n_indicators, UserRecord.n_numericals),
    LIST: (ListRecord.n_indicators, ListRecord.n_numericals),
}


def _jsonl(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(path, lineno, f"invalid JSON: {e.msg}") from e
            if not isinstance(obj, dict):
                raise DatasetError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _csv(path: Path, header: tuple[str, ...]) -> Iterator[tuple[int, list[str]]]:
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        first = next(reader, None)
        if first is None:
            return
        if tuple(c.strip() for c in first) != header:
            raise DatasetError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != len(header):
                message = f"expected {len(header)} columns, got {len(row)}"
                raise DatasetError(path, reader.line_num, message)
            yield reader.line_num, [c.strip() for c in row]


def _node_fields(path: Path, lineno: int, obj: dict[str, Any]) -> tuple:
    try:
        node_id, kind = obj["id"], obj["kind"]
        indicators, numericals = obj["indicators"], obj["numericals"]
    except KeyError as e:
        raise DatasetError(path, lineno, f"missing field {e.args[0]!r}") from None
    description = obj.get("description", "") or ""
    if not isinstance(node_id, str) or not node_id:
        raise DatasetError(path, lineno, "'id' must be a non-empty string")
    if kind not in _ARITY:
        raise DatasetError(path, lineno, f"unknown node kind {kind!r}")
    n_ind, n_num = _ARITY[kind]
    if not isinstance(indicators, list) or not all(
        isinstance(v, bool) for v in indicators
    ):
        raise DatasetError(path, lineno, "'indicators' must be a list of booleans")
    if len(indicators) != n_ind:
        raise DatasetError(
            path, lineno, f"{kind} needs {n_ind} indicators, got {len(indicators)}"
        )
    if not isinstance(numericals, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in numericals
    ):
        raise DatasetError(path, lineno, "'numericals' must be a list of numbers")
    if len(numericals) != n_num:
        raise DatasetError(
            path, lineno, f"{kind} needs {n_num} numericals, got {len(numericals)}"
        )
    if not all(math.isfinite(v) for v in numericals):
        raise DatasetError(path, lineno, "non-finite numerical feature")
    if not isinstance(description, str):
        raise DatasetError(path, lineno, "'description' must be a string")
    values = tuple(float(v) for v in numericals)
    return node_id, kind, tuple(indicators), values, description


def _require(directory: Path, name: str) -> Path:
    path = directory / name
    if not path.is_file():
        raise DatasetError(path, None, "missing dataset file")
    return path


def load_dataset(directory: Path | str, max_tweets: int = MAX_TWEETS) -> HeteroGraph:
    """Read and validate a dataset directory.

    Args:
        directory: Directory holding the five dataset files.
        max_tweets: Keep only the last ``max_tweets`` tweets per node.

    Returns:
        The validated graph, with labels and splits attached to user records.

    Raises:
        DatasetError: Malformed line, duplicate id, unknown relation or dangling edge.
        GraphError: Cross-file invariant violations (e.g. split member without label).
    """
    directory = Path(directory)
    nodes_path = _require(directory, NODES_FILE)

    nodes: dict[str, tuple] = {}
    for lineno, obj in _jsonl(nodes_path):
        fields = _node_fields(nodes_path, lineno, obj)
        if fields[0] in nodes:
            raise DatasetError(nodes_path, lineno, f"duplicate node id {fields[0]!r}")
        nodes[fields[0]] = fields

    tweets_path = _require(directory, TWEETS_FILE)
    tweets: dict[str, tuple[str, ...]] = {}
    for lineno, obj in _jsonl(tweets_path):
        node_id, posts = obj.get("id"), obj.get("tweets")
        if node_id not in nodes:
            raise DatasetError(tweets_path, lineno, f"unknown node id {node_id!r}")
        if not isinstance(posts, list) or not all(isinstance(t, str) for t in posts):
            raise DatasetError(
                tweets_path, lineno, "'tweets' must be a list of strings"
            )
        if node_id in tweets:
            raise DatasetError(
                tweets_path, lineno, f"duplicate tweets for node id {node_id!r}"
            )
        tweets[node_id] = tuple(posts[-max_tweets:]) if max_tweets else ()

    labels = _keyed_column(directory, LABELS_FILE, "label", LABELS, nodes)
    splits = _keyed_column(directory, SPLITS_FILE, "split", SPLITS, nodes)

    edges_path = _require(directory, EDGES_FILE)
    edges: set[Edge] = set()
    for lineno, (src, relation, dst) in _csv(edges_path, ("src", "relation", "dst")):
        if relation not in RELATION_ENDPOINTS:
            raise DatasetError(edges_path, lineno, f"unknown relation {relation!r}")
        for endpoint in (src, dst):
            if endpoint not in nodes:
                raise DatasetError(
                    edges_path, lineno, f"dangling endpoint {endpoint!r}"
                )
        expected = RELATION_ENDPOINTS[relation]
        actual = (nodes[src][1], nodes[dst][1])
        if actual != expected:
            raise DatasetError(
                edges_path,
                lineno,
                f"{relation} must connect {expected[0]}->{expected[1]}, "
                f"got {actual[0]}->{actual[1]}",
            )
        edge = Edge(src, relation, dst)
        if edge in edges:
            raise DatasetError(
                edges_path, lineno, f"duplicate edge {src},{relation},{dst}"
            )
        edges.add(edge)

    users, lists = [], []
    for node_id, kind, indicators, numericals, description in nodes.values():
        posts = tweets.get(node_id, ())
        if kind == USER:
            users.append(
                UserRecord(
                    node_id,
                    indicators,
                    numericals,
                    description,
                    posts,
                    labels.get(node_id),
                    splits.get(node_id),
                )
            )
        else:
            if node_id in labels or node_id in splits:
                raise DatasetError(
                    directory, None, f"list {node_id} cannot carry a label or split"
                )
            lists.append(
                ListRecord(node_id, indicators, numericals, description, posts)
            )

    graph = HeteroGraph(users, lists, edges)
    violations = validate(graph, max_tweets)
    if violations:
        raise GraphError(
            f"{directory}: {len(violations)} invariant violations: {violations[0]}",
            violations,
        )
    logger.info("loaded %s: %s", directory, graph.stats())
    return graph


def _keyed_column(
    directory: Path, name: str, column: str, allowed: tuple[str, ...], nodes: dict
) -> dict[str, str]:
    path = _require(directory, name)
    values: dict[str, str] = {}
    for lineno, (node_id, value) in _csv(path, ("id", column)):
        if node_id not in nodes:
            raise DatasetError(path, lineno, f"unknown node id {node_id!r}")
        if value not in allowed:
            raise DatasetError(path, lineno, f"unknown {column} {value!r}")
        if node_id in values:
            raise DatasetError(path, lineno, f"duplicate {column} for {node_id!r}")
        values[node_id] = value
    return values


def _write_csv(path: Path, header: tuple[str, ...], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def save_dataset(graph: HeteroGraph, directory: Path | str) -> Path:
    """Write ``graph`` in the layout :func:`load_dataset` reads, in canonical order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = graph.users + graph.lists

    with (directory / NODES_FILE).open("w", encoding="utf-8") as handle:
        for record in records:
            obj = {
                "id": record.id,
                "kind": record.kind,
                "indicators": list(record.indicators),
                "numericals": list(record.numericals),
                "description": record.description,
            }
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")

    with (directory / TWEETS_FILE).open("w", encoding="utf-8") as handle:
        for record in records:
            if record.tweets:
                obj = {"id": record.id, "tweets": list(record.tweets)}
                handle.write(json.dumps(obj, ensure_ascii=False) + "\n")

    _write_csv(
        directory / EDGES_FILE,
        ("src", "relation", "dst"),
        ((e.src, e.relation, e.dst) for e in graph.edges),
    )
    _write_csv(
        directory / LABELS_FILE,
        ("id", "label"),
        ((u.id, u.label) for u in graph.users if u.label is not None),
    )
    _write_csv(
        directory / SPLITS_FILE,
        ("id", "split"),
        ((u.id, u.split) for u in graph.users if u.split is not None),
    )
    return directory
