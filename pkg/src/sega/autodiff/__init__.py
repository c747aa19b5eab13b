"""Dense tensors with reverse-mode differentiation, AdamW and checkpoints."""

from sega.autodiff.checkpoint import load_checkpoint, save_checkpoint
from sega.autodiff.gradcheck import grad_check
from sega.autodiff.nn import Linear, Module
from sega.autodiff.ops import op_forward
from sega.autodiff.optim import AdamW, AdamWState, adamw_step
from sega.autodiff.tensor import Tape, Tensor, backward, float64_mode

__all__ = [
    "AdamW",
    "AdamWState",
    "Linear",
    "Module",
    "Tape",
    "Tensor",
    "adamw_step",
    "backward",
    "float64_mode",
    "grad_check",
    "load_checkpoint",
    "op_forward",
    "save_checkpoint",
]
