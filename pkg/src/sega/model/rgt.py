"""Relational graph transformer encoder.

Each layer runs masked multi-head attention separately per relation, every
node attending over its in- and out-neighbours under that relation plus
itself. A per-node semantic attention then weighs the relation-specific
outputs, restricted to the relations the node actually takes part in.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from sega.autodiff import ops
from sega.autodiff.nn import Linear, Module, kaiming_uniform
from sega.autodiff.tensor import Tensor
from sega.config import ModelConfig
from sega.graph.store import LIST, RELATIONS, USER, USER_RELATIONS, HeteroGraph
from sega.model.features import FeatureEncoder, GraphInputs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphStructure:
    """Dense per-relation attention masks over the global node order."""

    relations: tuple[str, ...]
    masks: dict[str, np.ndarray]
    present: np.ndarray
    num_users: int

    @property
    def num_nodes(self) -> int:
        return self.present.shape[0]


def build_relation_masks(
    graph: HeteroGraph, relations: tuple[str, ...] = RELATIONS
) -> GraphStructure:
    """Symmetric neighbourhood masks with self-loops, one [N, N] array per relation.

    ``present[i, r]`` marks relations in which node ``i`` has at least one
    neighbour other than itself; a node with none has every relation marked.
    """
    n = graph.num_nodes
    masks = {}
    present = np.zeros((n, len(relations)), dtype=bool)
    for r, relation in enumerate(relations):
        mask = np.zeros((n, n), dtype=bool)
        for edge in graph.edges:
            if edge.relation != relation:
                continue
            i, j = graph.position(edge.src), graph.position(edge.dst)
            mask[i, j] = mask[j, i] = True
        present[:, r] = mask.any(axis=1)
        np.fill_diagonal(mask, True)
        masks[relation] = mask
    present[~present.any(axis=1)] = True
    return GraphStructure(tuple(relations), masks, present, graph.num_users)


class RelationAttention(Module):
    """Query, key and value maps of one relation."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.query = self.add_module("query", Linear(in_features, out_features, rng))
        self.key = self.add_module("key", Linear(in_features, out_features, rng))
        self.value = self.add_module("value", Linear(in_features, out_features, rng))


class RGTLayer(Module):
    """One relational graph transformer layer.

    Args:
        in_features: Input width.
        out_features: Output width; split evenly across ``heads``.
        relations: Relation names, in mask order.
        heads: Attention heads per relation.
        dropout: Rate applied to attention weights in training mode.
        slope: LeakyReLU negative slope.
        rng: Initialisation stream.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        relations: tuple[str, ...],
        heads: int,
        dropout: float,
        slope: float,
        rng: np.random.Generator,
    ):
        super().__init__()
        if out_features % heads:
            raise ValueError(
                f"heads ({heads}) must divide out_features ({out_features})"
            )
        self.relations = relations
        self.heads = heads
        self.head_dim = out_features // heads
        self.dropout = dropout
        self.slope = slope
        self.attention = {
            r: self.add_module(r, RelationAttention(in_features, out_features, rng))
            for r in relations
        }
        self.semantic = self.add_module(
            "semantic", Linear(out_features, out_features, rng)
        )
        self.semantic_query = self.add_parameter(
            "semantic_query", kaiming_uniform(rng, out_features, 1, slope=1.0)
        )
        self.residual = self.add_module(
            "residual", Linear(in_features, out_features, rng)
        )
        self.last_attention: dict[str, list[np.ndarray]] = {}

    def _relation_output(
        self,
        h: Tensor,
        relation: str,
        mask: np.ndarray,
        train: bool,
        rng: np.random.Generator | None,
    ) -> Tensor:
        attention = self.attention[relation]
        q, k, v = attention.query(h), attention.key(h), attention.value(h)
        scale = 1.0 / math.sqrt(self.head_dim)
        outputs, weights = [], []
        for head in range(self.heads):
            lo, hi = head * self.head_dim, (head + 1) * self.head_dim
            qh, kh, vh = (ops.slice_cols(t, lo, hi) for t in (q, k, v))
            scores = ops.scale(ops.matmul(qh, ops.transpose(kh)), scale)
            alpha = ops.row_softmax(scores, mask)
            weights.append(alpha.data)
            alpha = ops.dropout(alpha, self.dropout, rng, train)
            outputs.append(ops.matmul(alpha, vh))
        self.last_attention[relation] = weights
        return ops.concat(outputs, axis=1)

    def __call__(
        self,
        h: Tensor,
        structure: GraphStructure,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        per_relation = [
            self._relation_output(h, r, structure.masks[r], train, rng)
            for r in self.relations
        ]
        scores = ops.concat(
            [
                ops.matmul(ops.tanh(self.semantic(out)), self.semantic_query)
                for out in per_relation
            ],
            axis=1,
        )
        beta = ops.row_softmax(scores, structure.present)
        combined = self.residual(h)
        for r, out in enumerate(per_relation):
            weight = ops.slice_cols(beta, r, r + 1)
            combined = ops.add(combined, ops.mul_cols(out, weight))
        return ops.leaky_relu(combined, self.slope)


class HeteroEncoder(Module):
    """Feature encoder, stacked RGT layers and the user projection."""

    def __init__(
        self,
        config: ModelConfig,
        rng: np.random.Generator,
        relations: tuple[str, ...] = RELATIONS,
    ):
        super().__init__()
        self.config = config
        self.relations = tuple(relations)
        kinds = (USER, LIST) if set(self.relations) - set(USER_RELATIONS) else (USER,)
        self.features = self.add_module("features", FeatureEncoder(config, rng, kinds))
        width = self.features.out_features
        self.layers = []
        for index in range(config.layers):
            layer = RGTLayer(
                width,
                config.d_out,
                self.relations,
                config.heads,
                config.dropout,
                config.leaky_slope,
                rng,
            )
            self.layers.append(self.add_module(f"rgt.{index}", layer))
            width = config.d_out
        self.user_projection = self.add_module(
            "user_projection", Linear(width, config.d_u, rng)
        )

    def node_embeddings(
        self,
        inputs: GraphInputs,
        structure: GraphStructure,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        h = self.features(inputs, train, rng)
        for layer in self.layers:
            h = layer(h, structure, train, rng)
        return h

    def __call__(
        self,
        inputs: GraphInputs,
        structure: GraphStructure,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """User embeddings, shape [num_users, d_u], in user-id order."""
        h = self.node_embeddings(inputs, structure, train, rng)
        users = ops.take_rows(h, np.arange(structure.num_users))
        z = ops.leaky_relu(self.user_projection(users), self.config.leaky_slope)
        return ops.dropout(z, self.config.dropout, rng, train)
