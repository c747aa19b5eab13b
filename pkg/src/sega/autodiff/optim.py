"""AdamW with decoupled weight decay."""

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from sega.autodiff.tensor import Tensor
from sega.errors import AutodiffError, CheckpointError

logger = logging.getLogger(__name__)

OPTIM_PREFIX = "optim."


@dataclass
class AdamWState:
    """Moments and step counter, keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamWState,
) -> None:
    """Apply one AdamW update in place and advance ``state``.

    Args:
        params: Named trainable tensors.
        grads: Gradient per parameter name.
        state: Optimizer state; moments are created lazily as zeros.
    """
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            raise AutodiffError(f"adamw_step: missing gradient for parameter {name}")
        if grad.shape != param.shape:
            raise AutodiffError(
                f"adamw_step: gradient shape {grad.shape} != parameter {name} "
                f"shape {param.shape}"
            )

    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for name, param in params.items():
        grad = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m.astype(param.dtype, copy=False)
        state.v[name] = v.astype(param.dtype, copy=False)

        data = param.data
        if state.weight_decay:
            data = data * (1.0 - state.lr * state.weight_decay)
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        # rebinding keeps arrays already referenced by an old tape untouched
        param.data = (data - update).astype(param.dtype, copy=False)


class AdamW:
    """Optimizer over a fixed set of named parameters."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = dict(params)
        self.state = AdamWState(
            lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay
        )

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        adamw_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        """Moments and step as checkpoint entries (``optim.m.<name>`` ...)."""
        entries: dict[str, np.ndarray] = {
            f"{OPTIM_PREFIX}step": np.array(self.state.step, dtype=np.float32)
        }
        for name in self.params:
            if name in self.state.m:
                entries[f"{OPTIM_PREFIX}m.{name}"] = self.state.m[name]
                entries[f"{OPTIM_PREFIX}v.{name}"] = self.state.v[name]
        return entries

    def load_state_dict(self, entries: Mapping[str, np.ndarray]) -> None:
        key = f"{OPTIM_PREFIX}step"
        if key not in entries:
            raise CheckpointError("checkpoint has no optimizer state")
        self.state.step = int(np.asarray(entries[key]).reshape(-1)[0])
        self.state.m.clear()
        self.state.v.clear()
        for name, param in self.params.items():
            m = entries.get(f"{OPTIM_PREFIX}m.{name}")
            v = entries.get(f"{OPTIM_PREFIX}v.{name}")
            if m is None or v is None:
                continue
            self.state.m[name] = np.asarray(m, dtype=param.dtype).copy()
            self.state.v[name] = np.asarray(v, dtype=param.dtype).copy()
        logger.debug("restored optimizer state at step %d", self.state.step)
