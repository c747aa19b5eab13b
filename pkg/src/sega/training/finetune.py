"""Supervised fine-tuning of the encoder and the detection head."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sega.autodiff import ops
from sega.autodiff.checkpoint import load_checkpoint, save_checkpoint
from sega.autodiff.optim import AdamW
from sega.autodiff.tensor import Tape, Tensor
from sega.config import RunConfig
from sega.embeddings.providers import EmbeddingProvider
from sega.errors import CheckpointError, GraphError
from sega.graph.store import LABELS, HeteroGraph
from sega.model.features import GraphInputs
from sega.model.heads import DetectionHead
from sega.model.rgt import GraphStructure, HeteroEncoder
from sega.training.common import (
    ENCODER_PREFIX,
    FINETUNE_STREAM,
    HEAD_PREFIX,
    EpochLog,
    batches,
    build_encoder,
    build_structure,
    checkpoint_view,
    epoch_rng,
    init_rng,
    load_encoder_state,
    relations_in_state,
)
from sega.training.metrics import MetricsReport, evaluate

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "finetune.ckpt"
LOG_FILE = "finetune_log.csv"
LOG_HEADER = ("epoch", "loss", "valid_macro_f1")
METRICS_FILE = "metrics.json"


def detection_loss(
    logits: Tensor, targets: np.ndarray, params: list[Tensor], lam: float
) -> Tensor:
    """Summed cross-entropy plus ``lam`` times the squared norm of every parameter."""
    loss = ops.cross_entropy_with_softmax(logits, targets, reduction="sum")
    if lam == 0.0 or not params:
        return loss
    penalty = ops.square_sum(params[0])
    for param in params[1:]:
        penalty = ops.add(penalty, ops.square_sum(param))
    return ops.add(loss, ops.scale(penalty, lam))


def split_rows(graph: HeteroGraph, split: str) -> tuple[np.ndarray, np.ndarray]:
    """User rows of ``split`` that carry a label, with their class indices."""
    rows, targets = [], []
    for row, user in enumerate(graph.users):
        if user.split == split and user.label is not None:
            rows.append(row)
            targets.append(LABELS.index(user.label))
    return np.array(rows, dtype=np.int64), np.array(targets, dtype=np.int64)


def predict(
    encoder: HeteroEncoder,
    head: DetectionHead,
    inputs: GraphInputs,
    structure: GraphStructure,
) -> np.ndarray:
    """Class probabilities for every user, [num_users, 3], in user-id order."""
    return head.classify(encoder(inputs, structure)).numpy()


def predicted_labels(probabilities: np.ndarray) -> list[str]:
    return [LABELS[i] for i in probabilities.argmax(axis=1)]


def score_split(
    graph: HeteroGraph, probabilities: np.ndarray, split: str
) -> MetricsReport:
    rows, targets = split_rows(graph, split)
    predictions = predicted_labels(probabilities[rows])
    return evaluate(predictions, [LABELS[t] for t in targets])


@dataclass
class FinetuneResult:
    checkpoint: Path
    log: Path
    metrics_path: Path
    metrics: MetricsReport
    eval_split: str
    best_epoch: int
    best_valid_f1: float
    losses: list[float] = field(default_factory=list)


class Detector:
    """Encoder and classifier trained jointly on the train split."""

    def __init__(self, config: RunConfig, graph: HeteroGraph, inputs: GraphInputs):
        self.config = config
        self.settings = config.finetune
        self.graph = graph
        self.inputs = inputs
        self.encoder = build_encoder(config)
        self.head = DetectionHead(config.model, init_rng(config.seed, 2))
        self.structure = build_structure(graph, self.encoder)
        self.params = {
            **self.encoder.named_parameters(ENCODER_PREFIX),
            **self.head.named_parameters(HEAD_PREFIX),
        }
        self.optimizer = AdamW(self.params, lr=self.settings.lr)
        self.epoch = 0

    def train_epoch(self, rows: np.ndarray, targets: np.ndarray) -> float:
        rng = epoch_rng(self.config.seed, FINETUNE_STREAM, self.epoch + 1)
        target_of = dict(zip(rows.tolist(), targets.tolist()))
        params = list(self.params.values())
        total = 0.0
        for batch in batches(rows, self.settings.batch_size, rng):
            with Tape() as tape:
                z = self.encoder(self.inputs, self.structure, train=True, rng=rng)
                logits = self.head.logits(ops.take_rows(z, batch))
                batch_targets = np.array([target_of[r] for r in batch.tolist()])
                loss = detection_loss(logits, batch_targets, params, self.settings.lam)
                tape.backward(loss, params)
            self.optimizer.step()
            total += loss.item()
        self.epoch += 1
        return total

    def probabilities(self) -> np.ndarray:
        return predict(self.encoder, self.head, self.inputs, self.structure)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {**self.encoder.state(ENCODER_PREFIX), **self.head.state(HEAD_PREFIX)}

    def load(self, state: dict[str, np.ndarray]) -> None:
        self.encoder.load_state(state, ENCODER_PREFIX)
        self.head.load_state(state, HEAD_PREFIX)


def _eval_split(graph: HeteroGraph) -> str:
    for split in ("test", "valid", "train"):
        if len(split_rows(graph, split)[0]):
            if split != "test":
                logger.warning(
                    "no labelled test users; reporting on the %s split", split
                )
            return split
    return "test"


def finetune(
    config: RunConfig,
    graph: HeteroGraph,
    inputs: GraphInputs,
    out_dir: Path | str,
    init_checkpoint: Path | str | None = None,
) -> FinetuneResult:
    """Fine-tune, keep the epoch with the best validation macro-F1, score it.

    Epoch 0 (before any update) is the baseline; a later epoch replaces the
    best one only with a strictly higher validation macro-F1.

    Args:
        config: Resolved run configuration.
        graph: Graph as the encoder sees it (ablations already applied).
        inputs: Encoded raw features of ``graph``.
        out_dir: Directory for checkpoint, epoch log and metrics.
        init_checkpoint: Pre-training checkpoint whose ``encoder.*`` parameters
            initialise the encoder; fresh parameters when omitted.

    Returns:
        Output paths and the metrics of the selected epoch.

    Raises:
        GraphError: The train split has no labelled users.
    """
    out_dir = Path(out_dir)
    rows, targets = split_rows(graph, "train")
    if not len(rows):
        raise GraphError("train split has no labelled users")
    detector = Detector(config, graph, inputs)
    if init_checkpoint is not None:
        load_encoder_state(detector.encoder, init_checkpoint)

    valid_rows, _ = split_rows(graph, "valid")
    if not len(valid_rows):
        logger.warning("no labelled validation users; keeping the last epoch")

    def valid_f1() -> float:
        if not len(valid_rows):
            return 0.0
        return score_split(graph, detector.probabilities(), "valid").macro_f1

    best_f1, best_epoch, best_state = valid_f1(), 0, detector.snapshot()
    log = EpochLog(out_dir / LOG_FILE, LOG_HEADER)
    log.write(0, "", best_f1)
    losses = []
    for _ in range(config.finetune.epochs):
        loss = detector.train_epoch(rows, targets)
        f1 = valid_f1()
        losses.append(loss)
        log.write(detector.epoch, loss, f1)
        logger.info(
            "finetune epoch %d loss %.6f valid macro-F1 %.4f", detector.epoch, loss, f1
        )
        if f1 > best_f1 or not len(valid_rows):
            best_f1, best_epoch, best_state = f1, detector.epoch, detector.snapshot()

    detector.load(best_state)
    checkpoint = save_checkpoint(out_dir / CHECKPOINT_FILE, best_state)
    split = _eval_split(graph)
    metrics = score_split(graph, detector.probabilities(), split)
    metrics_path = metrics.save(out_dir / METRICS_FILE)
    logger.info(
        "selected epoch %d; %s macro-F1 %.4f", best_epoch, split, metrics.macro_f1
    )
    return FinetuneResult(
        checkpoint=checkpoint,
        log=log.path,
        metrics_path=metrics_path,
        metrics=metrics,
        eval_split=split,
        best_epoch=best_epoch,
        best_valid_f1=best_f1,
        losses=losses,
    )


def load_detector(
    config: RunConfig, checkpoint: Path | str
) -> tuple[HeteroEncoder, DetectionHead]:
    """Rebuild a fine-tuned encoder and classifier from their checkpoint.

    The relation set comes from the checkpoint itself, so a list-ablated model
    loads without repeating the ablation flag.
    """
    entries = load_checkpoint(checkpoint)
    if not any(name.startswith(HEAD_PREFIX) for name in entries):
        raise CheckpointError(f"{checkpoint} holds no detection head")
    encoder = build_encoder(config, relations_in_state(entries))
    head = DetectionHead(config.model, init_rng(config.seed, 2))
    encoder.load_state(entries, ENCODER_PREFIX)
    head.load_state(entries, HEAD_PREFIX)
    return encoder, head


def load_encoder(config: RunConfig, checkpoint: Path | str) -> HeteroEncoder:
    """Encoder from either a pre-training or a fine-tuning checkpoint."""
    entries = load_checkpoint(checkpoint)
    encoder = build_encoder(config, relations_in_state(entries))
    encoder.load_state(entries, ENCODER_PREFIX)
    return encoder


def evaluate_checkpoint(
    config: RunConfig,
    checkpoint: Path | str,
    provider: EmbeddingProvider,
    split: str = "test",
) -> MetricsReport:
    """Score a fine-tuned checkpoint on one split of the configured dataset.

    Raises:
        GraphError: The split has no labelled users.
    """
    encoder, head = load_detector(config, checkpoint)
    graph, inputs = checkpoint_view(config, encoder.relations, provider)
    if not len(split_rows(graph, split)[0]):
        raise GraphError(f"no labelled users in the {split} split")
    probabilities = predict(encoder, head, inputs, build_structure(graph, encoder))
    return score_split(graph, probabilities, split)
