"""Central finite-difference check of analytic gradients."""

import logging
from typing import Callable, Mapping, Sequence

import numpy as np

from sega.autodiff.tensor import Tape, Tensor, float64_mode

logger = logging.getLogger(__name__)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor] | Mapping[str, Tensor],
    eps: float = 1e-3,
    max_coords: int = 32,
    seed: int = 0,
) -> float:
    """Compare backward against central differences in 64-bit mode.

    ``fn`` is re-evaluated with each probed coordinate shifted by ``±eps``;
    it must be deterministic (evaluation mode, fixed RNG).

    Args:
        fn: Zero-argument closure returning a scalar loss built from ``params``.
        params: Tensors to check.
        eps: Finite-difference step.
        max_coords: Coordinates probed per parameter (sampled when larger).
        seed: Seed for coordinate sampling.

    Returns:
        Max over parameters of ||analytic - numeric|| / (||analytic|| + ||numeric||).
    """
    named = (
        dict(params)
        if isinstance(params, Mapping)
        else {p.name or f"param{i}": p for i, p in enumerate(params)}
    )
    originals = {name: p.data for name, p in named.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        with float64_mode():
            for p in named.values():
                p.data = p.data.astype(np.float64)
            with Tape() as tape:
                loss = fn()
                tape.backward(loss, named.values())
            analytic = {name: p.grad.copy() for name, p in named.items()}

            for name, p in named.items():
                flat = p.data.reshape(-1)
                coords = (
                    np.arange(flat.size)
                    if flat.size <= max_coords
                    else rng.choice(flat.size, size=max_coords, replace=False)
                )
                numeric = np.empty(len(coords))
                for k, c in enumerate(coords):
                    saved = flat[c]
                    flat[c] = saved + eps
                    plus = fn().item()
                    flat[c] = saved - eps
                    minus = fn().item()
                    flat[c] = saved
                    numeric[k] = (plus - minus) / (2.0 * eps)
                exact = analytic[name].reshape(-1)[coords]
                scale = max(np.linalg.norm(exact) + np.linalg.norm(numeric), 1e-12)
                error = float(np.linalg.norm(exact - numeric) / scale)
                logger.debug("grad_check %s: relative error %.3e", name, error)
                worst = max(worst, error)
    finally:
        for name, p in named.items():
            p.data = originals[name]
            p.grad = None
    return worst
