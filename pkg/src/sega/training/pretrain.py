"""Preference-aware self-contrastive pre-training.

Each user with a preference profile is an anchor. Its positive is the
embedding of its own pseudo-label sentence; negatives are pseudo-labels of
other users whose rendered text differs. The multi-label objective replaces
the contrastive head with a 153-way sigmoid classifier over the pairs the
user posted about. Neither objective reads detection labels.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from sega.autodiff import ops
from sega.autodiff.checkpoint import load_checkpoint, save_checkpoint
from sega.autodiff.optim import AdamW
from sega.autodiff.tensor import Tape, Tensor
from sega.config import RunConfig
from sega.embeddings.providers import EmbeddingProvider
from sega.errors import CheckpointError, PreferenceError
from sega.graph.store import HeteroGraph
from sega.model.features import GraphInputs
from sega.model.heads import ContrastiveHead, MultiLabelHead
from sega.preferences.oracle import PreferenceProfile, pseudo_label_for
from sega.preferences.taxonomy import PAIR_INDEX, PAIR_SPACE
from sega.training.common import (
    ENCODER_PREFIX,
    HEAD_PREFIX,
    META_EPOCH,
    PRETRAIN_STREAM,
    EpochLog,
    batches,
    build_encoder,
    build_structure,
    epoch_rng,
    init_rng,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "pretrain.ckpt"
LOG_FILE = "pretrain_log.csv"
LOG_HEADER = ("epoch", "objective", "loss")


@dataclass
class AnchorSet:
    """Users that take part in pre-training, with their pseudo-label targets.

    ``rows`` index users in id order; ``label_index[i]`` points into ``pool``,
    the sorted distinct rendered pseudo-labels.
    """

    user_ids: list[str]
    rows: np.ndarray
    label_index: np.ndarray
    pool: list[str]
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.user_ids)


def multi_hot(profile: PreferenceProfile) -> np.ndarray:
    """153-bit target with a one for every pair present in the profile."""
    target = np.zeros(len(PAIR_SPACE), dtype=np.float32)
    for pair in profile.counts:
        target[PAIR_INDEX[pair]] = 1.0
    return target


def build_anchor_set(
    graph: HeteroGraph,
    profiles: Mapping[str, PreferenceProfile],
    template: str = "default",
) -> AnchorSet:
    """Collect anchors: users of ``graph`` with a non-empty profile.

    Raises:
        PreferenceError: No user has a pseudo-label.
    """
    user_ids, rows, texts, targets = [], [], [], []
    for row, user in enumerate(graph.users):
        profile = profiles.get(user.id)
        if not profile:
            continue
        user_ids.append(user.id)
        rows.append(row)
        texts.append(pseudo_label_for(profile, template).text)
        targets.append(multi_hot(profile))
    if not user_ids:
        raise PreferenceError("no user has a pseudo-label; nothing to pre-train on")
    pool = sorted(set(texts))
    position = {text: i for i, text in enumerate(pool)}
    return AnchorSet(
        user_ids=user_ids,
        rows=np.array(rows, dtype=np.int64),
        label_index=np.array([position[t] for t in texts], dtype=np.int64),
        pool=pool,
        targets=np.stack(targets),
    )


def sample_negatives(
    anchor_label: int, pool_size: int, k_neg: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draw without replacement from pool entries other than the anchor's.

    Returns ``min(k_neg, pool_size - 1)`` pool indices; empty when the anchor
    has no eligible negative.
    """
    eligible = np.delete(np.arange(pool_size), anchor_label)
    k = min(k_neg, len(eligible))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(eligible, size=k, replace=False)


def infonce_loss(
    anchors: Tensor, positives: Tensor, negatives: Tensor, tau: float
) -> Tensor:
    """InfoNCE with cosine similarity, summed over anchors.

    Args:
        anchors: Projected user embeddings, [B, d].
        positives: Projected positive pseudo-labels, [B, d].
        negatives: Projected negatives, [B * K, d], anchor-major.
        tau: Temperature.

    Returns:
        Scalar loss; exactly zero when K is zero.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    b = anchors.shape[0]
    k = negatives.shape[0] // b if b else 0
    if negatives.shape[0] != b * k:
        raise ValueError(
            f"{negatives.shape[0]} negatives do not split over {b} anchors"
        )
    pos = ops.reshape(ops.cosine_similarity(anchors, positives), (b, 1))
    if k:
        repeated = ops.take_rows(anchors, np.repeat(np.arange(b), k))
        neg = ops.reshape(ops.cosine_similarity(repeated, negatives), (b, k))
        logits = ops.concat([pos, neg], axis=1)
    else:
        logits = pos
    logits = ops.scale(logits, 1.0 / tau)
    return ops.cross_entropy_with_softmax(logits, np.zeros(b, dtype=np.int64))


def multilabel_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over the 153 pair labels and the batch."""
    return ops.sigmoid_bce(logits, targets)


@dataclass
class PretrainResult:
    checkpoint: Path
    log: Path
    anchors: int
    losses: list[float] = field(default_factory=list)


class Pretrainer:
    """Encoder plus the active objective head, trained over the anchor set."""

    def __init__(
        self,
        config: RunConfig,
        graph: HeteroGraph,
        inputs: GraphInputs,
        anchors: AnchorSet,
        prompt_provider: EmbeddingProvider,
    ):
        self.config = config
        self.settings = config.pretrain
        self.graph = graph
        self.inputs = inputs
        self.anchors = anchors
        self.encoder = build_encoder(config)
        self.structure = build_structure(graph, self.encoder)
        self.objective = self.settings.objective
        if self.objective == "contrastive":
            self.head = ContrastiveHead(config.model, init_rng(config.seed, 1))
            self.pool = Tensor(prompt_provider.embed_batch(anchors.pool))
            if len(anchors.pool) < 2:
                logger.warning(
                    "all anchors share one pseudo-label; every anchor is skipped"
                )
        else:
            self.head = MultiLabelHead(config.model, init_rng(config.seed, 1))
            self.pool = None
        self.params = {
            **self.encoder.named_parameters(ENCODER_PREFIX),
            **self.head.named_parameters(HEAD_PREFIX),
        }
        self.optimizer = AdamW(self.params, lr=self.settings.lr)
        self.epoch = 0

    def _contrastive_batch(
        self, z: Tensor, batch: np.ndarray, rng: np.random.Generator
    ) -> tuple[Tensor | None, int]:
        labels = self.anchors.label_index[batch]
        negatives = [
            sample_negatives(label, len(self.anchors.pool), self.settings.k_neg, rng)
            for label in labels
        ]
        keep = np.array([len(n) > 0 for n in negatives])
        for skipped in np.flatnonzero(~keep):
            logger.debug(
                "anchor %s has no eligible negative; skipped",
                self.anchors.user_ids[batch[skipped]],
            )
        if not keep.any():
            return None, 0
        users, prompts = self.head.project_pair(
            ops.take_rows(z, self.anchors.rows[batch[keep]]), self.pool
        )
        positives = ops.take_rows(prompts, labels[keep])
        negative_rows = np.concatenate([n for n in negatives if len(n)])
        loss = infonce_loss(
            users,
            positives,
            ops.take_rows(prompts, negative_rows),
            self.settings.tau,
        )
        return loss, int(keep.sum())

    def _multilabel_batch(self, z: Tensor, batch: np.ndarray) -> tuple[Tensor, int]:
        logits = self.head(ops.take_rows(z, self.anchors.rows[batch]))
        return multilabel_loss(logits, self.anchors.targets[batch]), len(batch)

    def train_epoch(self) -> float:
        """One pass over the anchors; returns the mean loss per anchor."""
        rng = epoch_rng(self.config.seed, PRETRAIN_STREAM, self.epoch + 1)
        total, counted = 0.0, 0
        order = np.arange(len(self.anchors))
        for batch in batches(order, self.settings.batch_size, rng):
            with Tape() as tape:
                z = self.encoder(self.inputs, self.structure, train=True, rng=rng)
                if self.objective == "contrastive":
                    loss, used = self._contrastive_batch(z, batch, rng)
                else:
                    loss, used = self._multilabel_batch(z, batch)
                if loss is None:
                    continue
                tape.backward(loss, self.params.values())
            self.optimizer.step()
            # contrastive loss is a sum over anchors, the multi-label one a mean
            weight = 1 if self.objective == "contrastive" else used
            total += loss.item() * weight
            counted += used
        self.epoch += 1
        return total / counted if counted else 0.0

    def state(self) -> dict[str, np.ndarray]:
        return {
            **self.encoder.state(ENCODER_PREFIX),
            **self.head.state(HEAD_PREFIX),
            **self.optimizer.state_dict(),
            META_EPOCH: np.array(self.epoch, dtype=np.float32),
        }

    def restore(self, path: Path | str) -> None:
        """Resume from a pre-training checkpoint, optimizer state included."""
        entries = load_checkpoint(path)
        if META_EPOCH not in entries:
            raise CheckpointError(f"{path} is not a pre-training checkpoint")
        self.encoder.load_state(entries, ENCODER_PREFIX)
        self.head.load_state(entries, HEAD_PREFIX)
        self.optimizer.load_state_dict(entries)
        self.epoch = int(np.asarray(entries[META_EPOCH]).reshape(-1)[0])
        logger.info("resumed pre-training from %s at epoch %d", path, self.epoch)


def pretrain(
    config: RunConfig,
    graph: HeteroGraph,
    inputs: GraphInputs,
    profiles: Mapping[str, PreferenceProfile],
    prompt_provider: EmbeddingProvider,
    out_dir: Path | str,
    resume_from: Path | str | None = None,
) -> PretrainResult:
    """Run pre-training and checkpoint after every epoch.

    Args:
        config: Resolved run configuration.
        graph: Graph as the encoder sees it (ablations already applied).
        inputs: Encoded raw features of ``graph``.
        profiles: Preference profiles by user id.
        prompt_provider: Encoder for pseudo-label sentences.
        out_dir: Directory for the checkpoint and the loss log.
        resume_from: Checkpoint to continue from.

    Returns:
        Paths of the outputs and the per-epoch losses of this invocation.
    """
    out_dir = Path(out_dir)
    anchors = build_anchor_set(graph, profiles, config.pretrain.template)
    trainer = Pretrainer(config, graph, inputs, anchors, prompt_provider)
    if resume_from is not None:
        trainer.restore(resume_from)
    logger.info(
        "pre-training (%s, template %s) on %d anchors with %d distinct pseudo-labels",
        trainer.objective,
        config.pretrain.template,
        len(anchors),
        len(anchors.pool),
    )
    log = EpochLog(out_dir / LOG_FILE, LOG_HEADER, append=resume_from is not None)
    checkpoint = out_dir / CHECKPOINT_FILE
    result = PretrainResult(checkpoint=checkpoint, log=log.path, anchors=len(anchors))
    while trainer.epoch < config.pretrain.epochs:
        loss = trainer.train_epoch()
        result.losses.append(loss)
        log.write(trainer.epoch, trainer.objective, loss)
        save_checkpoint(checkpoint, trainer.state())
        logger.info("pretrain epoch %d loss %.6f", trainer.epoch, loss)
    if not result.losses:
        save_checkpoint(checkpoint, trainer.state())
    return result
