"""Macro precision, recall and F1 for the three detection classes."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from sega.errors import SegaError
from sega.graph.store import LABELS


@dataclass(frozen=True)
class MetricsReport:
    """Per-class and macro scores plus the confusion matrix (rows = truth)."""

    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    confusion: list[list[int]]

    @property
    def macro_f1(self) -> float:
        return self.macro["f1"]

    def to_dict(self) -> dict:
        return {
            "per_class": self.per_class,
            "macro": self.macro,
            "confusion": self.confusion,
        }

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path


def evaluate(predictions: Sequence[str], labels: Sequence[str]) -> MetricsReport:
    """Score predicted class names against true ones.

    A precision, recall or F1 whose denominator is zero counts as 0. Macro
    values are the unweighted mean over normal, bot and troll.

    Raises:
        SegaError: Lengths differ or a name is not a known class.
    """
    if len(predictions) != len(labels):
        raise SegaError(
            f"{len(predictions)} predictions for {len(labels)} labels"
        )
    unknown = (set(predictions) | set(labels)) - set(LABELS)
    if unknown:
        raise SegaError(f"unknown classes {sorted(unknown)}")
    classes = list(LABELS)
    if not labels:
        zeros = np.zeros(len(classes))
        precision = recall = f1 = zeros
        support = zeros.astype(int)
        confusion = np.zeros((len(classes), len(classes)), dtype=int)
    else:
        precision, recall, f1, support = precision_recall_fscore_support(
            labels, predictions, labels=classes, zero_division=0
        )
        confusion = confusion_matrix(labels, predictions, labels=classes)
    per_class = {
        name: {
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(support[i]),
        }
        for i, name in enumerate(classes)
    }
    macro = {
        key: float(np.mean([per_class[name][key] for name in classes]))
        for key in ("precision", "recall", "f1")
    }
    return MetricsReport(per_class, macro, confusion.tolist())
