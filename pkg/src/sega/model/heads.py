"""Objective heads on top of user embeddings."""

import numpy as np

from sega.autodiff import ops
from sega.autodiff.nn import Linear, Module
from sega.autodiff.tensor import Tensor
from sega.config import ModelConfig
from sega.errors import AutodiffError
from sega.graph.store import LABELS
from sega.preferences.taxonomy import PAIR_SPACE


class ContrastiveHead(Module):
    """Separate affine maps (no activation) of user and prompt embeddings to ``d_a``."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.user = self.add_module("user", Linear(config.d_u, config.d_a, rng))
        self.prompt = self.add_module("prompt", Linear(config.d_text, config.d_a, rng))

    def project_pair(self, z: Tensor, p: Tensor) -> tuple[Tensor, Tensor]:
        pairs = ((z, self.user, "user"), (p, self.prompt, "prompt"))
        for tensor, linear, name in pairs:
            if tensor.ndim != 2 or tensor.shape[1] != linear.in_features:
                raise AutodiffError(
                    f"{name} embedding has shape {tensor.shape}, "
                    f"expected width {linear.in_features}"
                )
        return self.user(z), self.prompt(p)


class MultiLabelHead(Module):
    """Logits over the full topic x emotion label space."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.linear = self.add_module(
            "linear", Linear(config.d_u, len(PAIR_SPACE), rng)
        )

    def __call__(self, z: Tensor) -> Tensor:
        return self.linear(z)


class DetectionHead(Module):
    """normal / bot / troll classifier."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.linear = self.add_module("linear", Linear(config.d_u, len(LABELS), rng))

    def logits(self, z: Tensor) -> Tensor:
        return self.linear(z)

    def classify(self, z: Tensor) -> Tensor:
        """Class probabilities ordered like ``LABELS``."""
        return ops.row_softmax(self.logits(z))
