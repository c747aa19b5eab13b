"""Raw node features to initial node embeddings.

Each node kind has its own indicator, numerical, description and tweet
projections to ``d_h``; the four outputs are concatenated and mixed by one
more affine map. Users come first in every matrix, then lists.
"""

import logging
from dataclasses import dataclass

import numpy as np

from sega.autodiff import ops
from sega.autodiff.nn import Linear, Module
from sega.autodiff.tensor import Tensor
from sega.config import ModelConfig
from sega.embeddings.providers import EmbeddingProvider
from sega.errors import GraphError, NumericError
from sega.graph.store import LIST, USER, HeteroGraph, ListRecord, NodeRecord, UserRecord

logger = logging.getLogger(__name__)

FEATURE_TYPES = ("ind", "num", "des", "twe")
_ARITY = {
    USER: (UserRecord.n_indicators, UserRecord.n_numericals),
    LIST: (ListRecord.n_indicators, ListRecord.n_numericals),
}


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormStats":
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NumericError("cannot fit z-score statistics on non-finite values")
        if values.shape[0] == 0:
            zeros = np.zeros(values.shape[1])
            return cls(zeros, zeros.copy())
        return cls(values.mean(axis=0), values.std(axis=0))

    @property
    def degenerate(self) -> np.ndarray:
        return self.std == 0

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NumericError("non-finite numerical feature")
        safe = np.where(self.degenerate, 1.0, self.std)
        return np.where(self.degenerate, 0.0, (values - self.mean) / safe)


def encode_indicators(record: NodeRecord) -> np.ndarray:
    expected = _ARITY[record.kind][0]
    if len(record.indicators) != expected:
        raise GraphError(
            f"{record.kind} {record.id}: expected {expected} indicators, "
            f"got {len(record.indicators)}"
        )
    return np.array([1.0 if v else 0.0 for v in record.indicators], dtype=np.float32)


def zscore_numericals(records: list[NodeRecord], stats: NormStats) -> np.ndarray:
    """Standardize the numericals of ``records`` with already-fitted stats."""
    width = stats.mean.shape[0]
    values = np.array([r.numericals for r in records], dtype=np.float64)
    values = values.reshape(-1, width)
    return stats.apply(values).astype(np.float32)


def fit_norm_stats(graph: HeteroGraph) -> dict[str, NormStats]:
    """User stats come from the train split (all users if none), list stats from
    all lists."""
    train = [u for u in graph.users if u.split == "train"]
    if not train:
        logger.warning("no train split; fitting user z-score statistics on all users")
        train = list(graph.users)
    user_values = np.array([u.numericals for u in train], dtype=np.float64)
    list_values = np.array([lst.numericals for lst in graph.lists], dtype=np.float64)
    return {
        USER: NormStats.fit(user_values.reshape(-1, UserRecord.n_numericals)),
        LIST: NormStats.fit(list_values.reshape(-1, ListRecord.n_numericals)),
    }


def encode_texts(
    record: NodeRecord, provider: EmbeddingProvider
) -> tuple[np.ndarray, np.ndarray]:
    """Description embedding and the mean embedding of the stored tweets."""
    description = provider.embed_text(record.description)
    if not record.tweets:
        return description, np.zeros(provider.dim, dtype=np.float32)
    tweets = provider.embed_batch(list(record.tweets))
    return description, tweets.mean(axis=0).astype(np.float32)


@dataclass
class NodeInputs:
    """Encoded raw features of one node kind, row-aligned with ``ids``."""

    kind: str
    ids: list[str]
    indicators: np.ndarray
    numericals: np.ndarray
    descriptions: np.ndarray
    tweets: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "ind": self.indicators,
            "num": self.numericals,
            "des": self.descriptions,
            "twe": self.tweets,
        }


@dataclass
class GraphInputs:
    users: NodeInputs
    lists: NodeInputs
    stats: dict[str, NormStats]

    @property
    def num_nodes(self) -> int:
        return len(self.users) + len(self.lists)


def _text_arrays(
    records: tuple[NodeRecord, ...], provider: EmbeddingProvider
) -> tuple[np.ndarray, np.ndarray]:
    descriptions = provider.embed_batch([r.description for r in records])
    tweets = np.zeros((len(records), provider.dim), dtype=np.float32)
    distinct = sorted({t for r in records for t in r.tweets})
    if distinct:
        table = dict(zip(distinct, provider.embed_batch(distinct)))
        for row, record in enumerate(records):
            if record.tweets:
                tweets[row] = np.mean([table[t] for t in record.tweets], axis=0)
    return descriptions, tweets


def _node_inputs(
    kind: str,
    records: tuple[NodeRecord, ...],
    stats: NormStats,
    provider: EmbeddingProvider,
) -> NodeInputs:
    n_ind = _ARITY[kind][0]
    indicators = np.array([encode_indicators(r) for r in records], dtype=np.float32)
    descriptions, tweets = _text_arrays(records, provider)
    return NodeInputs(
        kind=kind,
        ids=[r.id for r in records],
        indicators=indicators.reshape(-1, n_ind),
        numericals=zscore_numericals(list(records), stats),
        descriptions=descriptions,
        tweets=tweets,
    )


def prepare_inputs(
    graph: HeteroGraph,
    provider: EmbeddingProvider,
    stats: dict[str, NormStats] | None = None,
) -> GraphInputs:
    """Encode every node's raw features once per run.

    Args:
        graph: Source graph.
        provider: Text-role embedding provider.
        stats: Pre-fitted z-score statistics; fitted from ``graph`` when omitted.
    """
    stats = stats or fit_norm_stats(graph)
    inputs = GraphInputs(
        users=_node_inputs(USER, graph.users, stats[USER], provider),
        lists=_node_inputs(LIST, graph.lists, stats[LIST], provider),
        stats=stats,
    )
    logger.debug("prepared inputs for %d nodes", inputs.num_nodes)
    return inputs


class _KindEncoder(Module):
    def __init__(self, kind: str, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        n_ind, n_num = _ARITY[kind]
        widths = {
            "ind": n_ind, "num": n_num, "des": config.d_text, "twe": config.d_text
        }
        self.projections = {
            name: self.add_module(name, Linear(widths[name], config.d_h, rng))
            for name in FEATURE_TYPES
        }
        width = len(FEATURE_TYPES) * config.d_h
        self.out = self.add_module("out", Linear(width, width, rng))


class FeatureEncoder(Module):
    """Per-kind, per-feature-type projections followed by a mixing map."""

    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator,
        kinds: tuple[str, ...] = (USER, LIST),
    ):
        super().__init__()
        self.config = config
        self.kinds = {
            kind: self.add_module(kind, _KindEncoder(kind, config, rng))
            for kind in kinds
        }

    @property
    def out_features(self) -> int:
        return len(FEATURE_TYPES) * self.config.d_h

    def encode(
        self,
        nodes: NodeInputs,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        if nodes.kind not in self.kinds:
            raise GraphError(f"encoder has no parameters for {nodes.kind} nodes")
        encoder = self.kinds[nodes.kind]
        slope, rate = self.config.leaky_slope, self.config.dropout
        parts = []
        for name, array in nodes.arrays().items():
            linear = encoder.projections[name]
            if array.shape[1] != linear.in_features:
                raise GraphError(
                    f"{nodes.kind} {name} features have width {array.shape[1]}, "
                    f"expected {linear.in_features}"
                )
            h = ops.leaky_relu(linear(Tensor(array)), slope)
            parts.append(ops.dropout(h, rate, rng, train))
        return ops.leaky_relu(encoder.out(ops.concat(parts, axis=1)), slope)

    def __call__(
        self,
        inputs: GraphInputs,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Initial embeddings for all nodes, users first, shape [N, 4 * d_h]."""
        if not len(inputs.users):
            raise GraphError("cannot encode a graph without users")
        blocks = [
            self.encode(nodes, train, rng)
            for nodes in (inputs.users, inputs.lists)
            if len(nodes)
        ]
        return blocks[0] if len(blocks) == 1 else ops.concat(blocks, axis=0)
