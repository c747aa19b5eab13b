"""Tensor and tape for define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it;
outside a tape they run eagerly without recording, which is how inference
and finite-difference evaluations avoid any bookkeeping.
"""

import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from sega.errors import AutodiffError, NumericError

logger = logging.getLogger(__name__)

_DEFAULT_DTYPE: contextvars.ContextVar[type] = contextvars.ContextVar(
    "sega_default_dtype", default=np.float32
)
_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "sega_active_tape", default=None
)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def default_dtype() -> type:
    """Return the dtype used for newly created tensors."""
    return _DEFAULT_DTYPE.get()


@contextlib.contextmanager
def float64_mode() -> Iterator[None]:
    """Create new tensors in 64-bit precision (gradient checking only)."""
    token = _DEFAULT_DTYPE.set(np.float64)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPE.get()


def check_finite(kind: str, array: np.ndarray) -> None:
    """Raise NumericError when an array holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericError(
            f"{kind}: non-finite values in tensor of shape {array.shape}"
        )


class Tensor:
    """Dense array participating in reverse-mode differentiation.

    Args:
        data: Array-like values, stored row-major.
        requires_grad: Whether backward should populate ``grad``.
        name: Optional parameter name used in error messages.
        dtype: Storage dtype; defaults to the current default dtype.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
    ):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(
                f"item() needs a single-element tensor, got {self.shape}"
            )
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # Operator sugar over sega.autodiff.ops
    def __add__(self, other: "Tensor") -> "Tensor":
        from sega.autodiff import ops

        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from sega.autodiff import ops

        return ops.sub(self, other)

    def __mul__(self, other) -> "Tensor":
        from sega.autodiff import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        from sega.autodiff import ops

        return ops.scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        from sega.autodiff import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from sega.autodiff import ops

        return ops.matmul(self, other)


@dataclass
class _Record:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of executed operations.

    Only operations with at least one gradient-requiring input are recorded;
    everything else is a constant with respect to the loss.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> bool:
        if self._token is not None:
            _ACTIVE_TAPE.reset(self._token)
            self._token = None
        return False

    def __len__(self) -> int:
        return len(self.records)

    def record(
        self, kind: str, inputs: tuple[Tensor, ...], output: Tensor, fn: BackwardFn
    ) -> None:
        if self._consumed:
            raise AutodiffError(
                "cannot record on a tape after backward; start a new Tape"
            )
        for tensor in inputs:
            if tensor.requires_grad and tensor.is_leaf:
                self._leaves.setdefault(id(tensor), tensor)
        output.requires_grad = True
        output._tape = self
        self.records.append(_Record(kind, inputs, output, fn))

    def backward(
        self, loss: Tensor, params: Iterable[Tensor] | None = None
    ) -> dict[int, np.ndarray]:
        """Populate ``grad`` on every leaf reached from ``loss``.

        Args:
            loss: Scalar tensor produced on this tape.
            params: Extra tensors that must receive a gradient; those the loss
                does not reach get zeros.

        Returns:
            Mapping from ``id(tensor)`` to gradient for all leaves.
        """
        if self._consumed:
            raise AutodiffError(
                "backward called twice on the same tape; run a fresh forward pass"
            )
        if loss.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise AutodiffError("loss was not produced on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for record in reversed(self.records):
            upstream = grads.pop(id(record.output), None)
            if upstream is None:
                continue
            input_grads = record.backward(upstream)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise AutodiffError(
                        f"{record.kind}: gradient shape {grad.shape} does not match "
                        f"input shape {tensor.shape}"
                    )
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else np.array(grad)

        targets = dict(self._leaves)
        for tensor in params or ():
            targets.setdefault(id(tensor), tensor)
        for key, tensor in targets.items():
            grad = grads.get(key)
            tensor.grad = (
                np.zeros_like(tensor.data)
                if grad is None
                else grad.astype(tensor.data.dtype, copy=False)
            )
        logger.debug("backward over %d recorded ops", len(self.records))
        return {key: tensor.grad for key, tensor in targets.items()}


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Run backward on the tape that produced ``loss``."""
    if loss._tape is None:
        raise AutodiffError("loss was not produced under an active tape")
    loss._tape.backward(loss, params)
