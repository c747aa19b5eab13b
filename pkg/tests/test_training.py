"""Tests for the pre-training and fine-tuning loops and embedding export."""

import csv
import dataclasses
import math

import numpy as np
import pytest

from sega.autodiff import ops
from sega.autodiff.checkpoint import load_checkpoint
from sega.autodiff.tensor import Tensor, float64_mode
from sega.errors import CheckpointError, ConfigError, GraphError, PreferenceError
from sega.graph.store import RELATIONS, USER_RELATIONS, HeteroGraph
from sega.model.features import prepare_inputs
from sega.preferences.oracle import PreferenceProfile
from sega.preferences.taxonomy import PAIR_INDEX
from sega.training.common import (
    EpochLog,
    ablated_graph,
    batches,
    build_encoder,
    relations_in_state,
)
from sega.training.export import (
    embeddings_from_checkpoint,
    export_embeddings,
    parse_filter,
    pca_2d,
    select_users,
)
from sega.training.finetune import (
    CHECKPOINT_FILE as FINETUNE_CKPT,
    detection_loss,
    evaluate_checkpoint,
    finetune,
    load_detector,
)
from sega.training.pretrain import (
    CHECKPOINT_FILE as PRETRAIN_CKPT,
    LOG_FILE as PRETRAIN_LOG,
    build_anchor_set,
    infonce_loss,
    multi_hot,
    multilabel_loss,
    pretrain,
    sample_negatives,
)

from conftest import NEWS_ANGER, NEWS_FEAR, SPORTS_JOY, small_config


def _rows(*vectors):
    return Tensor(np.array(vectors, dtype=np.float64))


def test_infonce_without_negatives_is_zero():
    empty = Tensor(np.zeros((0, 2)))
    loss = infonce_loss(_rows([1.0, 0.0]), _rows([0.3, 0.7]), empty, 0.1)
    assert loss.item() == 0.0


def test_infonce_closed_forms():
    with float64_mode():
        anchor, positive = _rows([1.0, 0.0]), _rows([2.0, 0.0])
        orthogonal = infonce_loss(anchor, positive, _rows([0.0, 3.0]), tau=0.1)
        tie = infonce_loss(anchor, positive, _rows([5.0, 0.0]), tau=0.1)
    assert orthogonal.item() == pytest.approx(math.log1p(math.exp(-10.0)), rel=1e-8)
    assert tie.item() == pytest.approx(math.log(2.0), rel=1e-9)


def test_infonce_sums_over_anchors_and_falls_with_alignment():
    negative = _rows([0.0, 1.0], [0.0, 1.0])
    anchors = _rows([1.0, 0.0], [1.0, 0.0])
    losses = []
    for angle in (1.2, 0.8, 0.4, 0.0):
        point = [math.cos(angle), math.sin(angle)]
        positive = _rows(point, point)
        losses.append(infonce_loss(anchors, positive, negative, tau=0.5).item())
    assert all(loss >= 0 for loss in losses)
    assert losses == sorted(losses, reverse=True)
    single = infonce_loss(_rows([1.0, 0.0]), _rows([1.0, 0.0]), _rows([0.0, 1.0]), 0.5)
    assert losses[-1] == pytest.approx(2 * single.item(), rel=1e-6)


def test_infonce_is_non_negative_and_monotone_on_random_instances():
    rng = np.random.default_rng(3)
    with float64_mode():
        for trial in range(1000):
            b, k, d = rng.integers(1, 4), rng.integers(0, 5), rng.integers(2, 6)
            anchors = Tensor(rng.standard_normal((b, d)))
            positives = rng.standard_normal((b, d))
            negatives = Tensor(rng.standard_normal((b * k, d)))
            tau = rng.uniform(0.05, 1.0)
            loss = infonce_loss(anchors, Tensor(positives), negatives, tau).item()
            assert loss >= 0.0
            if trial % 10 or k == 0:
                continue
            # moving every positive towards its anchor cannot raise the loss
            closer = positives + 0.5 * (anchors.numpy() - positives)
            moved = infonce_loss(anchors, Tensor(closer), negatives, tau).item()
            assert moved <= loss + 1e-12


def test_infonce_rejects_non_positive_temperature():
    with pytest.raises(ValueError):
        infonce_loss(_rows([1.0]), _rows([1.0]), _rows([1.0]), tau=0.0)


def test_negatives_exclude_the_anchor_label(rng):
    drawn = sample_negatives(2, pool_size=5, k_neg=100, rng=rng)
    assert sorted(drawn.tolist()) == [0, 1, 3, 4]
    assert len(sample_negatives(0, pool_size=1, k_neg=100, rng=rng)) == 0
    few = sample_negatives(0, pool_size=50, k_neg=3, rng=rng)
    assert len(set(few.tolist())) == 3 and 0 not in few


def test_negative_sampling_is_seeded():
    a = sample_negatives(1, 40, 10, np.random.default_rng(5))
    b = sample_negatives(1, 40, 10, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_multilabel_loss_of_zero_logits_is_log_two():
    targets = np.zeros((2, 153))
    targets[0, 4] = 1.0
    loss = multilabel_loss(Tensor(np.zeros((2, 153))), targets)
    assert loss.item() == pytest.approx(0.6931, abs=1e-4)


def test_multi_hot_marks_each_distinct_pair():
    pairs = [NEWS_ANGER] * 3 + [NEWS_FEAR, SPORTS_JOY]
    profile = PreferenceProfile.from_pairs("u", pairs)
    target = multi_hot(profile)
    assert target.sum() == 3
    assert target[PAIR_INDEX[NEWS_ANGER]] == 1.0


def test_anchor_set_skips_users_without_profiles(tiny_graph, profiles):
    subset = {uid: p for uid, p in profiles.items() if uid != "u05"}
    anchors = build_anchor_set(tiny_graph, subset)
    assert "u05" not in anchors.user_ids
    assert len(anchors) == 8
    assert anchors.pool == sorted(set(anchors.pool))
    assert anchors.targets.shape == (8, 153)
    with pytest.raises(PreferenceError):
        build_anchor_set(tiny_graph, {})


def test_batches_cover_every_row_once(rng):
    seen = np.concatenate(list(batches(np.arange(10), 4, rng)))
    assert sorted(seen.tolist()) == list(range(10))


def test_epoch_log_formats_floats(tmp_path):
    log = EpochLog(tmp_path / "log.csv", ("epoch", "loss"))
    log.write(1, 0.1234567891234)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines == ["epoch,loss", "1,0.12345679"]


@pytest.fixture
def inputs(tiny_graph, text_provider):
    return prepare_inputs(tiny_graph, text_provider)


def test_pretrain_writes_checkpoint_and_log(
    tiny_graph, inputs, profiles, prompt_provider, tmp_path
):
    config = small_config()
    result = pretrain(config, tiny_graph, inputs, profiles, prompt_provider, tmp_path)
    assert result.checkpoint == tmp_path / PRETRAIN_CKPT
    assert result.anchors == 9
    assert len(result.losses) == 2
    assert all(loss >= 0 and math.isfinite(loss) for loss in result.losses)
    rows = list(csv.reader((tmp_path / PRETRAIN_LOG).open()))
    assert rows[0] == ["epoch", "objective", "loss"]
    assert [r[:2] for r in rows[1:]] == [["1", "contrastive"], ["2", "contrastive"]]
    state = load_checkpoint(result.checkpoint)
    assert any(name.startswith("head.user.") for name in state)


def test_pretrain_resume_matches_an_uninterrupted_run(
    tiny_graph, inputs, profiles, prompt_provider, tmp_path
):
    straight = pretrain(
        small_config(), tiny_graph, inputs, profiles, prompt_provider, tmp_path / "a"
    )
    half = small_config(pretrain={"epochs": 1})
    first = pretrain(
        half, tiny_graph, inputs, profiles, prompt_provider, tmp_path / "b"
    )
    resumed = pretrain(
        small_config(),
        tiny_graph,
        inputs,
        profiles,
        prompt_provider,
        tmp_path / "b",
        resume_from=first.checkpoint,
    )
    assert resumed.losses == straight.losses[1:]
    assert resumed.checkpoint.read_bytes() == straight.checkpoint.read_bytes()


def test_multilabel_pretraining_runs(
    tiny_graph, inputs, profiles, prompt_provider, tmp_path
):
    config = small_config(pretrain={"objective": "multilabel"})
    result = pretrain(config, tiny_graph, inputs, profiles, prompt_provider, tmp_path)
    state = load_checkpoint(result.checkpoint)
    assert state["head.linear.weight"].shape == (6, 153)
    assert all(loss > 0 and math.isfinite(loss) for loss in result.losses)


def test_finetune_selects_an_epoch_and_scores_test(tiny_graph, inputs, tmp_path):
    result = finetune(small_config(), tiny_graph, inputs, tmp_path)
    assert result.eval_split == "test"
    assert 0 <= result.best_epoch <= 2
    assert result.checkpoint == tmp_path / FINETUNE_CKPT
    assert result.metrics_path.exists()
    per_class = result.metrics.per_class
    assert sum(scores["support"] for scores in per_class.values()) == 3
    lines = result.log.read_text().splitlines()
    assert lines[0] == "epoch,loss,valid_macro_f1"
    assert lines[1].startswith("0,,")
    assert len(lines) == 4


def test_finetune_is_deterministic(tiny_graph, inputs, tmp_path):
    a = finetune(small_config(), tiny_graph, inputs, tmp_path / "a")
    b = finetune(small_config(), tiny_graph, inputs, tmp_path / "b")
    assert a.losses == b.losses
    assert a.metrics == b.metrics
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()


def test_zero_learning_rate_keeps_the_loss_constant(tiny_graph, inputs, tmp_path):
    config = small_config(
        model={"dropout": 0.0}, finetune={"lr": 0.0, "epochs": 3, "lam": 0.0}
    )
    result = finetune(config, tiny_graph, inputs, tmp_path)
    assert result.losses[0] == pytest.approx(result.losses[1], rel=1e-6)
    assert result.losses[1] == pytest.approx(result.losses[2], rel=1e-6)
    assert result.best_epoch == 0


def test_detection_loss_adds_the_weight_penalty(rng):
    logits = Tensor(rng.standard_normal((4, 3)))
    targets = np.array([0, 1, 2, 1])
    params = [Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal(2))]
    plain = ops.cross_entropy_with_softmax(logits, targets, reduction="sum").item()
    assert detection_loss(logits, targets, params, 0.0).item() == pytest.approx(plain)
    norm = sum(float((p.numpy() ** 2).sum()) for p in params)
    penalised = detection_loss(logits, targets, params, 0.5).item()
    assert penalised == pytest.approx(plain + 0.5 * norm, rel=1e-5)


def test_finetune_without_train_users_fails(tiny_graph, inputs, tmp_path):
    moved = [
        dataclasses.replace(u, split="valid" if u.split == "train" else u.split)
        for u in tiny_graph.users
    ]
    graph = HeteroGraph(moved, tiny_graph.lists, tiny_graph.edges)
    with pytest.raises(GraphError, match="train"):
        finetune(small_config(), graph, inputs, tmp_path)


def test_finetune_starts_from_the_pretrained_encoder(
    tiny_graph, inputs, profiles, prompt_provider, tmp_path
):
    pre = pretrain(
        small_config(), tiny_graph, inputs, profiles, prompt_provider, tmp_path
    )
    config = small_config(finetune={"epochs": 0})
    result = finetune(config, tiny_graph, inputs, tmp_path / "ft", pre.checkpoint)
    pretrained = load_checkpoint(pre.checkpoint)
    tuned = load_checkpoint(result.checkpoint)
    encoder_keys = [k for k in tuned if k.startswith("encoder.")]
    assert encoder_keys
    for key in encoder_keys:
        np.testing.assert_array_equal(tuned[key], pretrained[key])


def test_saved_detector_reproduces_its_metrics(
    dataset_dir, tiny_graph, inputs, text_provider, tmp_path
):
    config = small_config(dataset_dir, tmp_path)
    result = finetune(config, tiny_graph, inputs, tmp_path)
    report = evaluate_checkpoint(config, result.checkpoint, text_provider, "test")
    assert report == result.metrics


def test_pretrain_checkpoint_is_not_a_detector(
    tiny_graph, inputs, profiles, prompt_provider, tmp_path
):
    config = small_config(pretrain={"objective": "multilabel", "epochs": 0})
    pre = pretrain(config, tiny_graph, inputs, profiles, prompt_provider, tmp_path)
    with pytest.raises(CheckpointError):
        load_detector(config, pre.checkpoint)


def test_list_ablation_round_trips_through_checkpoints(
    dataset_dir, tiny_graph, text_provider, tmp_path
):
    config = small_config(dataset_dir, tmp_path, ablation={"no_list": True})
    graph = ablated_graph(tiny_graph, config)
    assert graph.num_lists == 0
    result = finetune(config, graph, prepare_inputs(graph, text_provider), tmp_path)
    state = load_checkpoint(result.checkpoint)
    assert relations_in_state(state) == USER_RELATIONS
    # a plain config still loads the ablated model
    report = evaluate_checkpoint(
        small_config(dataset_dir), result.checkpoint, text_provider, "test"
    )
    assert report == result.metrics


def test_pca_preserves_distances_of_planar_points(rng):
    plane = rng.standard_normal((2, 6))
    coords = rng.standard_normal((12, 2)) * [5.0, 1.0]
    points = coords @ plane + 3.0
    projected = pca_2d(points)
    original = np.linalg.norm(points[:, None] - points[None], axis=-1)
    flat = np.linalg.norm(projected[:, None] - projected[None], axis=-1)
    np.testing.assert_allclose(flat, original, atol=1e-8)


def test_pca_needs_two_users():
    with pytest.raises(GraphError):
        pca_2d(np.ones((1, 4)))


def test_filters_select_users(tiny_graph, profiles):
    assert select_users(tiny_graph, "label=bot").tolist() == [3, 4, 5]
    news_anger = select_users(tiny_graph, "majority_pair=News-Anger", profiles)
    assert news_anger.tolist() == [6, 8]
    assert select_users(tiny_graph, "majority_emotion=fear", profiles).tolist() == [7]
    assert select_users(tiny_graph, "majority_topic=news").tolist() == []
    assert len(select_users(tiny_graph, None)) == 9


@pytest.mark.parametrize("expression", ["colour=red", "label", "label="])
def test_bad_filters_are_config_errors(expression, profiles):
    with pytest.raises(ConfigError):
        parse_filter(expression, profiles)


def test_export_writes_embeddings_and_projection(tiny_graph, rng, tmp_path):
    embeddings = rng.standard_normal((9, 4))
    rows = np.array([0, 3, 6])
    written = export_embeddings(
        tiny_graph, embeddings, tmp_path / "e.csv", rows, tmp_path / "p.csv"
    )
    assert written == [tmp_path / "e.csv", tmp_path / "p.csv"]
    table = list(csv.reader((tmp_path / "e.csv").open()))
    assert table[0] == ["user_id", "label", "e0", "e1", "e2", "e3"]
    assert [r[:2] for r in table[1:]] == [
        ["u01", "normal"],
        ["u04", "bot"],
        ["u07", "troll"],
    ]
    assert float(table[2][3]) == pytest.approx(embeddings[3, 1], rel=1e-6)
    projection = list(csv.reader((tmp_path / "p.csv").open()))
    assert projection[0] == ["user_id", "label", "pc1", "pc2"]
    assert len(projection) == 4


def test_embeddings_from_checkpoint_match_the_encoder(
    dataset_dir, tiny_graph, inputs, text_provider, tmp_path
):
    config = small_config(dataset_dir, tmp_path)
    result = finetune(config, tiny_graph, inputs, tmp_path)
    graph, embeddings = embeddings_from_checkpoint(
        config, result.checkpoint, text_provider
    )
    assert graph.num_users == 9
    assert embeddings.shape == (9, config.model.d_u)
    assert build_encoder(config).relations == RELATIONS
