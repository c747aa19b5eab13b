"""Typed heterogeneous user/list graph.

Edge directions: ``following``/``followers`` user -> user, ``own`` and
``followed`` user -> list, ``membership`` list -> user. Nodes are ordered by
id, users first, then lists; that order is the row order of every node
matrix built from the graph.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import ClassVar, Iterable

from sega.errors import GraphError

USER = "user"
LIST = "list"

RELATIONS = ("following", "followers", "membership", "followed", "own")
RELATION_ENDPOINTS = {
    "following": (USER, USER),
    "followers": (USER, USER),
    "membership": (LIST, USER),
    "followed": (USER, LIST),
    "own": (USER, LIST),
}
USER_RELATIONS = ("following", "followers")

LABELS = ("normal", "bot", "troll")
SPLITS = ("train", "valid", "test")

USER_INDICATORS = 3
USER_NUMERICALS = 5
LIST_INDICATORS = 1
LIST_NUMERICALS = 4
MAX_TWEETS = 20


@dataclass(frozen=True)
class UserRecord:
    """A user node.

    Indicators: profile image, protected, verified. Numericals: creation
    timestamp, name length, followers, followings, tweet count.
    """

    id: str
    indicators: tuple[bool, ...]
    numericals: tuple[float, ...]
    description: str = ""
    tweets: tuple[str, ...] = ()
    label: str | None = None
    split: str | None = None

    kind: ClassVar[str] = USER
    n_indicators: ClassVar[int] = USER_INDICATORS
    n_numericals: ClassVar[int] = USER_NUMERICALS


@dataclass(frozen=True)
class ListRecord:
    """A list node.

    Indicator: private. Numericals: creation timestamp, name length,
    follower count, member count.
    """

    id: str
    indicators: tuple[bool, ...]
    numericals: tuple[float, ...]
    description: str = ""
    tweets: tuple[str, ...] = ()

    kind: ClassVar[str] = LIST
    n_indicators: ClassVar[int] = LIST_INDICATORS
    n_numericals: ClassVar[int] = LIST_NUMERICALS


NodeRecord = UserRecord | ListRecord


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    relation: str
    dst: str


@dataclass
class HeteroGraph:
    """Immutable-after-construction user/list graph."""

    users: tuple[UserRecord, ...]
    lists: tuple[ListRecord, ...]
    edges: tuple[Edge, ...]
    _index: dict[str, tuple[str, int]] = field(init=False, repr=False, compare=False)
    _adjacency: dict[tuple[str, str], list[str]] = field(
        init=False, repr=False, compare=False
    )

    def __init__(
        self,
        users: Iterable[UserRecord] = (),
        lists: Iterable[ListRecord] = (),
        edges: Iterable[Edge] = (),
    ):
        self.users = tuple(sorted(users, key=lambda r: r.id))
        self.lists = tuple(sorted(lists, key=lambda r: r.id))
        self.edges = tuple(sorted(edges))
        self._index = {}
        for position, record in enumerate(self.users + self.lists):
            self._index.setdefault(record.id, (record.kind, position))
        adjacency: dict[tuple[str, str], set[str]] = defaultdict(set)
        for edge in self.edges:
            adjacency[(edge.src, edge.relation)].add(edge.dst)
        self._adjacency = {key: sorted(dsts) for key, dsts in adjacency.items()}

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_lists(self) -> int:
        return len(self.lists)

    @property
    def num_nodes(self) -> int:
        return len(self.users) + len(self.lists)

    @property
    def node_ids(self) -> list[str]:
        return [r.id for r in self.users] + [r.id for r in self.lists]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def kind_of(self, node_id: str) -> str:
        return self._lookup(node_id)[0]

    def position(self, node_id: str) -> int:
        """Row of ``node_id`` in node matrices (users first, then lists)."""
        return self._lookup(node_id)[1]

    def node(self, node_id: str) -> NodeRecord:
        _, position = self._lookup(node_id)
        nodes = self.users + self.lists
        return nodes[position]

    def _lookup(self, node_id: str) -> tuple[str, int]:
        try:
            return self._index[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id!r}") from None

    def neighbors(self, node_id: str, relation: str) -> list[str]:
        """Out-neighbours of ``node_id`` under ``relation``, sorted by id."""
        self._lookup(node_id)
        if relation not in RELATION_ENDPOINTS:
            raise GraphError(f"unknown relation {relation!r}")
        return list(self._adjacency.get((node_id, relation), ()))

    def stats(self) -> dict[str, int]:
        return {
            "users": self.num_users,
            "lists": self.num_lists,
            "edges": len(self.edges),
        }

    def labels(self) -> dict[str, str]:
        return {u.id: u.label for u in self.users if u.label is not None}

    def users_in_split(self, split: str) -> list[UserRecord]:
        return [u for u in self.users if u.split == split]

    def without_lists(self) -> "HeteroGraph":
        """Drop list nodes and every list-touching relation."""
        return HeteroGraph(
            self.users, (), (e for e in self.edges if e.relation in USER_RELATIONS)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (self.users, self.lists, self.edges) == (
            other.users,
            other.lists,
            other.edges,
        )

    __hash__ = None


def _record_violations(record: NodeRecord, max_tweets: int) -> list[str]:
    found = []
    if len(record.indicators) != record.n_indicators:
        found.append(
            f"{record.kind} {record.id}: expected {record.n_indicators} indicators, "
            f"got {len(record.indicators)}"
        )
    if len(record.numericals) != record.n_numericals:
        found.append(
            f"{record.kind} {record.id}: expected {record.n_numericals} numericals, "
            f"got {len(record.numericals)}"
        )
    if not all(
        isinstance(v, (int, float)) and math.isfinite(v) for v in record.numericals
    ):
        found.append(f"{record.kind} {record.id}: non-finite numerical feature")
    if len(record.tweets) > max_tweets:
        found.append(
            f"{record.kind} {record.id}: {len(record.tweets)} tweets "
            f"exceeds {max_tweets}"
        )
    if isinstance(record, UserRecord):
        if record.label is not None and record.label not in LABELS:
            found.append(f"user {record.id}: unknown label {record.label!r}")
        if record.split is not None and record.split not in SPLITS:
            found.append(f"user {record.id}: unknown split {record.split!r}")
        if record.split is not None and record.label is None:
            found.append(f"user {record.id}: in split {record.split!r} but unlabeled")
    return found


def validate(graph: HeteroGraph, max_tweets: int = MAX_TWEETS) -> list[str]:
    """Return every invariant violation; an empty list means the graph is valid."""
    violations: list[str] = []
    seen: set[str] = set()
    for record in graph.users + graph.lists:
        if record.id in seen:
            violations.append(f"duplicate node id {record.id!r}")
        seen.add(record.id)
        violations.extend(_record_violations(record, max_tweets))

    previous: Edge | None = None
    for edge in graph.edges:
        label = f"edge ({edge.src}, {edge.relation}, {edge.dst})"
        if edge == previous:
            violations.append(f"duplicate {label}")
        previous = edge
        if edge.relation not in RELATION_ENDPOINTS:
            violations.append(f"{label}: unknown relation")
            continue
        missing = [n for n in (edge.src, edge.dst) if n not in graph]
        if missing:
            violations.append(f"{label}: missing node {', '.join(missing)}")
            continue
        src_kind, dst_kind = RELATION_ENDPOINTS[edge.relation]
        actual = (graph.kind_of(edge.src), graph.kind_of(edge.dst))
        if actual != (src_kind, dst_kind):
            violations.append(
                f"{label}: {edge.relation} must connect {src_kind}->{dst_kind}, "
                f"got {actual[0]}->{actual[1]}"
            )
    return violations
