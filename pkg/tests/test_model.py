"""Tests for feature encoding, the relational graph transformer and the heads."""

import numpy as np
import pytest

from sega.autodiff import ops
from sega.autodiff.gradcheck import grad_check
from sega.autodiff.tensor import Tensor, float64_mode
from sega.config import ModelConfig
from sega.embeddings.providers import StubProvider
from sega.errors import AutodiffError, GraphError, NumericError
from sega.graph.store import RELATIONS, USER_RELATIONS, HeteroGraph, UserRecord
from sega.model.features import NormStats, prepare_inputs
from sega.model.heads import ContrastiveHead, DetectionHead, MultiLabelHead
from sega.model.rgt import GraphStructure, HeteroEncoder, RGTLayer, build_relation_masks
from sega.training.pretrain import infonce_loss

from conftest import D_TEXT, SMALL_MODEL


@pytest.fixture
def model_config() -> ModelConfig:
    return ModelConfig(**SMALL_MODEL)


@pytest.fixture
def inputs(tiny_graph, text_provider):
    return prepare_inputs(tiny_graph, text_provider)


def test_inputs_have_per_kind_widths(inputs):
    assert inputs.users.indicators.shape == (9, 3)
    assert inputs.users.numericals.shape == (9, 5)
    assert inputs.users.descriptions.shape == (9, D_TEXT)
    assert inputs.lists.indicators.shape == (3, 1)
    assert inputs.lists.numericals.shape == (3, 4)
    assert inputs.num_nodes == 12


def test_user_zscore_is_fitted_on_the_train_split(tiny_graph, inputs):
    train = [i for i, u in enumerate(tiny_graph.users) if u.split == "train"]
    train_mean = inputs.users.numericals[train].mean(axis=0)
    np.testing.assert_allclose(train_mean, 0, atol=1e-5)
    np.testing.assert_allclose(inputs.lists.numericals.mean(axis=0), 0, atol=1e-5)


def test_constant_feature_standardizes_to_zero():
    stats = NormStats.fit(np.array([[1.0, 5.0], [3.0, 5.0]]))
    np.testing.assert_array_equal(stats.apply(np.array([[2.0, 5.0]])), [[0.0, 0.0]])


def test_non_finite_numerical_is_rejected():
    stats = NormStats.fit(np.array([[1.0], [2.0]]))
    with pytest.raises(NumericError):
        stats.apply(np.array([[np.inf]]))


def test_tweet_feature_is_the_mean_of_tweet_embeddings(
    tiny_graph, inputs, text_provider
):
    user = tiny_graph.node("u05")
    expected = np.mean([text_provider.embed_text(t) for t in user.tweets], axis=0)
    np.testing.assert_allclose(inputs.users.tweets[4], expected, atol=1e-6)


def test_relation_masks_are_symmetric_with_self_loops(tiny_graph):
    structure = build_relation_masks(tiny_graph)
    for mask in structure.masks.values():
        np.testing.assert_array_equal(mask, mask.T)
        assert mask.diagonal().all()
    l1, u01 = tiny_graph.position("l1"), tiny_graph.position("u01")
    assert structure.masks["membership"][u01, l1]
    assert list(structure.present[u01]) == [True, False, True, False, False]


def test_node_without_neighbours_attends_over_every_relation():
    alone = HeteroGraph([UserRecord("u1", (False,) * 3, (0.0,) * 5)])
    assert build_relation_masks(alone).present.all()


def test_encoder_produces_user_embeddings(model_config, inputs, tiny_graph, rng):
    encoder = HeteroEncoder(model_config, rng)
    z = encoder(inputs, build_relation_masks(tiny_graph))
    assert z.shape == (9, model_config.d_u)
    assert np.all(np.isfinite(z.numpy()))


def test_encoder_without_list_relations_has_no_list_parameters(
    model_config, tiny_graph, text_provider, rng
):
    graph = tiny_graph.without_lists()
    encoder = HeteroEncoder(model_config, rng, relations=USER_RELATIONS)
    assert not any(".list." in f".{name}" for name in encoder.state())
    structure = build_relation_masks(graph, USER_RELATIONS)
    z = encoder(prepare_inputs(graph, text_provider), structure)
    assert z.shape == (9, model_config.d_u)


def test_wrong_text_width_is_reported(tiny_graph, rng):
    encoder = HeteroEncoder(ModelConfig(**{**SMALL_MODEL, "d_text": 8}), rng)
    inputs = prepare_inputs(tiny_graph, StubProvider(dim=D_TEXT))
    with pytest.raises(GraphError, match="width"):
        encoder(inputs, build_relation_masks(tiny_graph))


def _path_structure(n: int) -> GraphStructure:
    mask = np.eye(n, dtype=bool)
    for i in range(n - 1):
        mask[i, i + 1] = mask[i + 1, i] = True
    return GraphStructure(("following",), {"following": mask}, np.ones((n, 1), bool), n)


def _layers(rng, width=6, depth=2):
    return [
        RGTLayer(
            width, width, ("following",), heads=2, dropout=0.0, slope=0.01, rng=rng
        )
        for _ in range(depth)
    ]


def _forward(layers, h, structure):
    out = Tensor(h)
    for layer in layers:
        out = layer(out, structure)
    return out.numpy()


def test_attention_rows_are_distributions_over_neighbours(rng):
    structure = _path_structure(5)
    layer = _layers(rng, depth=1)[0]
    layer(Tensor(rng.standard_normal((5, 6))), structure)
    for alpha in layer.last_attention["following"]:
        np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-6)
        assert alpha[0, 3] == 0.0
        assert alpha[0, 1] > 0.0


def test_two_layers_only_see_two_hops(rng):
    structure = _path_structure(5)
    layers = _layers(rng)
    h = rng.standard_normal((5, 6))
    base = _forward(layers, h, structure)
    far = h.copy()
    far[3] += 5.0
    np.testing.assert_allclose(_forward(layers, far, structure)[0], base[0], atol=1e-6)
    near = h.copy()
    near[2] += 5.0
    assert not np.allclose(_forward(layers, near, structure)[0], base[0])


def test_layers_are_permutation_equivariant():
    rng = np.random.default_rng(7)
    with float64_mode():
        layers = _layers(rng)
        structure = _path_structure(6)
        h = rng.standard_normal((6, 6))
        perm = rng.permutation(6)
        mask = structure.masks["following"][np.ix_(perm, perm)]
        permuted = GraphStructure(
            ("following",), {"following": mask}, structure.present, 6
        )
        base = _forward(layers, h, structure)
        moved = _forward(layers, h[perm], permuted)
    np.testing.assert_allclose(moved, base[perm], atol=1e-10)


def test_heads_divide_output_width(rng):
    with pytest.raises(ValueError):
        RGTLayer(4, 6, RELATIONS, heads=4, dropout=0.0, slope=0.01, rng=rng)


def test_contrastive_head_projects_both_sides(model_config, rng):
    head = ContrastiveHead(model_config, rng)
    a, p = head.project_pair(
        Tensor(rng.standard_normal((3, model_config.d_u))),
        Tensor(rng.standard_normal((3, model_config.d_text))),
    )
    assert a.shape == p.shape == (3, model_config.d_a)
    zero_a, _ = head.project_pair(
        Tensor(np.zeros((1, model_config.d_u))),
        Tensor(np.zeros((1, model_config.d_text))),
    )
    np.testing.assert_array_equal(zero_a.numpy(), head.user.bias.numpy()[None, :])


def test_contrastive_head_rejects_wrong_widths(model_config, rng):
    head = ContrastiveHead(model_config, rng)
    with pytest.raises(AutodiffError, match="prompt"):
        head.project_pair(
            Tensor(np.zeros((2, model_config.d_u))), Tensor(np.zeros((2, 3)))
        )


def test_multilabel_head_covers_the_pair_space(model_config, rng):
    logits = MultiLabelHead(model_config, rng)(Tensor(np.ones((2, model_config.d_u))))
    assert logits.shape == (2, 153)


def test_zero_detection_head_is_uniform(model_config, rng):
    head = DetectionHead(model_config, rng)
    head.linear.weight.data[:] = 0.0
    probs = head.classify(Tensor(rng.standard_normal((4, model_config.d_u)))).numpy()
    np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-6)


def test_end_to_end_gradients_match_finite_differences(
    model_config, inputs, tiny_graph
):
    rng = np.random.default_rng(11)
    encoder = HeteroEncoder(model_config, rng)
    head = DetectionHead(model_config, rng)
    structure = build_relation_masks(tiny_graph)
    targets = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    params = {**encoder.named_parameters("encoder."), **head.named_parameters("head.")}

    def loss():
        logits = head.logits(encoder(inputs, structure))
        return ops.cross_entropy_with_softmax(logits, targets)

    assert grad_check(loss, params, eps=1e-6, max_coords=3) < 1e-3


def test_contrastive_gradients_match_finite_differences(
    model_config, inputs, tiny_graph
):
    rng = np.random.default_rng(12)
    encoder = HeteroEncoder(model_config, rng)
    head = ContrastiveHead(model_config, rng)
    structure = build_relation_masks(tiny_graph)
    pool = Tensor(rng.standard_normal((4, model_config.d_text)))
    anchors, positives = np.array([0, 4, 8]), np.array([0, 1, 2])
    negatives = np.array([1, 3, 0, 2, 3, 1])
    params = {**encoder.named_parameters("encoder."), **head.named_parameters("head.")}

    def loss():
        z = encoder(inputs, structure)
        users, prompts = head.project_pair(ops.take_rows(z, anchors), pool)
        return infonce_loss(
            users,
            ops.take_rows(prompts, positives),
            ops.take_rows(prompts, negatives),
            tau=0.1,
        )

    assert grad_check(loss, params, eps=1e-6, max_coords=3) < 1e-3
