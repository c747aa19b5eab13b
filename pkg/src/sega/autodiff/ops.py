"""Differentiable operations over :class:`~sega.autodiff.tensor.Tensor`.

The op set covers exactly what the encoder, the contrastive objective and the
detector need; broadcasting is limited to bias rows and per-row scaling.
"""

from typing import Callable, Sequence

import numpy as np

from sega.autodiff.tensor import BackwardFn, Tensor, active_tape, check_finite
from sega.errors import AutodiffError, NumericError

LEAKY_SLOPE = 0.01


def _inputs(kind: str, *tensors: Tensor) -> None:
    for tensor in tensors:
        if not isinstance(tensor, Tensor):
            raise AutodiffError(
                f"{kind}: expected Tensor input, got {type(tensor).__name__}"
            )
        check_finite(kind, tensor.data)


def _emit(
    kind: str, inputs: Sequence[Tensor], out: np.ndarray, fn: BackwardFn
) -> Tensor:
    out = np.asarray(out)
    check_finite(kind, out)
    result = Tensor(out, dtype=out.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, tuple(inputs), result, fn)
    return result


def _shape_error(kind: str, *shapes) -> AutodiffError:
    rendered = ", ".join(str(tuple(s)) for s in shapes)
    return AutodiffError(f"{kind}: incompatible shapes {rendered}")


def _require_ndim(kind: str, tensor: Tensor, ndim: int) -> None:
    if tensor.ndim != ndim:
        raise AutodiffError(f"{kind}: expected rank {ndim}, got shape {tensor.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _inputs("matmul", a, b)
    _require_ndim("matmul", a, 2)
    _require_ndim("matmul", b, 2)
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    x, y = a.data, b.data
    return _emit("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _inputs("add", a, b)
    if a.shape != b.shape:
        raise _shape_error("add", a.shape, b.shape)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _inputs("sub", a, b)
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _inputs("mul", a, b)
    if a.shape != b.shape:
        raise _shape_error("mul", a.shape, b.shape)
    x, y = a.data, b.data
    return _emit("mul", (a, b), x * y, lambda g: (g * y, g * x))


def scale(x: Tensor, factor: float) -> Tensor:
    _inputs("scale", x)
    factor = float(factor)
    return _emit("scale", (x,), x.data * factor, lambda g: (g * factor,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    _inputs("add_bias", x, bias)
    _require_ndim("add_bias", x, 2)
    if bias.shape != (x.shape[1],):
        raise _shape_error("add_bias", x.shape, bias.shape)
    return _emit(
        "add_bias", (x, bias), x.data + bias.data, lambda g: (g, g.sum(axis=0))
    )


def mul_cols(x: Tensor, weights: Tensor) -> Tensor:
    """Scale each row of ``x`` [n, d] by the matching entry of ``weights`` [n, 1]."""
    _inputs("mul_cols", x, weights)
    _require_ndim("mul_cols", x, 2)
    if weights.shape != (x.shape[0], 1):
        raise _shape_error("mul_cols", x.shape, weights.shape)
    a, w = x.data, weights.data
    return _emit(
        "mul_cols",
        (x, weights),
        a * w,
        lambda g: (g * w, (g * a).sum(axis=1, keepdims=True)),
    )


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise AutodiffError("concat: needs at least one input")
    _inputs("concat", *tensors)
    for t in tensors:
        _require_ndim("concat", t, 2)
    other = 1 - axis
    if axis not in (0, 1) or len({t.shape[other] for t in tensors}) != 1:
        raise _shape_error("concat", *(t.shape for t in tensors))
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit(
        "concat", tensors, out, lambda g: tuple(np.split(g, cuts, axis=axis))
    )


def take_rows(x: Tensor, index) -> Tensor:
    _inputs("take_rows", x)
    _require_ndim("take_rows", x, 2)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= x.shape[0])):
        raise AutodiffError(f"take_rows: index out of range for shape {x.shape}")

    def fn(g: np.ndarray):
        full = np.zeros_like(x.data, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("take_rows", (x,), x.data[idx], fn)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _inputs("slice_cols", x)
    _require_ndim("slice_cols", x, 2)
    if not 0 <= start < stop <= x.shape[1]:
        raise AutodiffError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")

    def fn(g: np.ndarray):
        full = np.zeros_like(x.data, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_cols", (x,), x.data[:, start:stop], fn)


def transpose(x: Tensor) -> Tensor:
    _inputs("transpose", x)
    _require_ndim("transpose", x, 2)
    return _emit("transpose", (x,), x.data.T.copy(), lambda g: (g.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    _inputs("reshape", x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise _shape_error("reshape", x.shape, shape)
    return _emit(
        "reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),)
    )


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    _inputs("leaky_relu", x)
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)
    return _emit("leaky_relu", (x,), out, lambda g: (np.where(positive, g, slope * g),))


def tanh(x: Tensor) -> Tensor:
    _inputs("tanh", x)
    out = np.tanh(x.data)
    return _emit("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    _inputs("exp", x)
    out = np.exp(x.data)
    return _emit("exp", (x,), out, lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    _inputs("log", x)
    if np.any(x.data <= 0):
        raise NumericError("log: non-positive input")
    data = x.data
    return _emit("log", (x,), np.log(data), lambda g: (g / data,))


def row_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along each row, optionally restricted to ``mask`` entries.

    Masked-out entries produce exactly zero and receive zero gradient. Every
    row must keep at least one entry.
    """
    _inputs("row_softmax", x)
    _require_ndim("row_softmax", x, 2)
    data = x.data
    if mask is None:
        shifted = data - data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise _shape_error("row_softmax", x.shape, mask.shape)
        if not np.all(mask.any(axis=1)):
            raise AutodiffError("row_softmax: a row has no unmasked entries")
        row_max = np.where(mask, data, -np.inf).max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, data - row_max, 0.0)), 0.0)
        e = e.astype(data.dtype, copy=False)
    out = e / e.sum(axis=1, keepdims=True)

    def fn(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit("row_softmax", (x,), out, fn)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    _inputs("reduce_sum", x)
    out = x.data.sum(axis=axis)

    def fn(g: np.ndarray):
        expanded = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, x.shape).copy(),)

    return _emit("reduce_sum", (x,), out, fn)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    _inputs("mean", x)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise AutodiffError(f"mean: empty reduction over shape {x.shape}")
    return scale(reduce_sum(x, axis=axis), 1.0 / count)


def square_sum(x: Tensor) -> Tensor:
    _inputs("square_sum", x)
    data = x.data
    return _emit("square_sum", (x,), np.sum(data * data), lambda g: (2.0 * g * data,))


def dropout(
    x: Tensor, rate: float, rng: np.random.Generator | None, train: bool
) -> Tensor:
    """Inverted dropout; the identity outside training."""
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise AutodiffError(f"dropout: rate must be in [0, 1), got {rate}")
    if rng is None:
        raise AutodiffError("dropout: training mode needs an explicit RNG")
    _inputs("dropout", x)
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _emit("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of two [n, d] tensors, shape [n]."""
    _inputs("cosine_similarity", a, b)
    _require_ndim("cosine_similarity", a, 2)
    if a.shape != b.shape:
        raise _shape_error("cosine_similarity", a.shape, b.shape)
    x, y = a.data, b.data
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise NumericError("cosine_similarity: undefined for zero-norm embedding")
    denom = nx * ny
    sims = (x * y).sum(axis=1) / denom

    def fn(g: np.ndarray):
        gc = g[:, None]
        ga = gc * (y / denom[:, None] - sims[:, None] * x / (nx * nx)[:, None])
        gb = gc * (x / denom[:, None] - sims[:, None] * y / (ny * ny)[:, None])
        return ga, gb

    return _emit("cosine_similarity", (a, b), sims, fn)


def cross_entropy_with_softmax(
    logits: Tensor, targets, reduction: str = "sum"
) -> Tensor:
    """Cross-entropy of integer class targets under a row softmax."""
    _inputs("cross_entropy_with_softmax", logits)
    _require_ndim("cross_entropy_with_softmax", logits, 2)
    y = np.asarray(targets, dtype=np.int64)
    n, classes = logits.shape
    if y.shape != (n,) or (n and (y.min() < 0 or y.max() >= classes)):
        raise _shape_error("cross_entropy_with_softmax", logits.shape, y.shape)
    if reduction not in ("sum", "mean"):
        raise AutodiffError(
            f"cross_entropy_with_softmax: unknown reduction {reduction!r}"
        )
    data = logits.data
    row_max = data.max(axis=1, keepdims=True)
    shifted = data - row_max
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    losses = -log_probs[rows, y]
    factor = 1.0 if reduction == "sum" or n == 0 else 1.0 / n
    out = losses.sum() * factor

    def fn(g: np.ndarray):
        grad = np.exp(log_probs)
        grad[rows, y] -= 1.0
        return (grad * (g * factor),)

    return _emit("cross_entropy_with_softmax", (logits,), out, fn)


def sigmoid_bce(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of multi-hot targets under an elementwise sigmoid."""
    _inputs("sigmoid_bce", logits)
    t = np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise _shape_error("sigmoid_bce", logits.shape, t.shape)
    x = logits.data
    count = max(x.size, 1)
    losses = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = losses.sum() / count

    def fn(g: np.ndarray):
        probs = 1.0 / (1.0 + np.exp(-x))
        return ((probs - t) * (g / count),)

    return _emit("sigmoid_bce", (logits,), out, fn)


_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": lambda inputs, **kw: matmul(*inputs),
    "add": lambda inputs, **kw: add(*inputs),
    "sub": lambda inputs, **kw: sub(*inputs),
    "mul": lambda inputs, **kw: mul(*inputs),
    "scale": lambda inputs, **kw: scale(*inputs, **kw),
    "add_bias": lambda inputs, **kw: add_bias(*inputs),
    "mul_cols": lambda inputs, **kw: mul_cols(*inputs),
    "concat": lambda inputs, **kw: concat(inputs, **kw),
    "take_rows": lambda inputs, **kw: take_rows(*inputs, **kw),
    "slice_cols": lambda inputs, **kw: slice_cols(*inputs, **kw),
    "transpose": lambda inputs, **kw: transpose(*inputs),
    "reshape": lambda inputs, **kw: reshape(*inputs, **kw),
    "leaky_relu": lambda inputs, **kw: leaky_relu(*inputs, **kw),
    "tanh": lambda inputs, **kw: tanh(*inputs),
    "exp": lambda inputs, **kw: exp(*inputs),
    "log": lambda inputs, **kw: log(*inputs),
    "row_softmax": lambda inputs, **kw: row_softmax(*inputs, **kw),
    "reduce_sum": lambda inputs, **kw: reduce_sum(*inputs, **kw),
    "mean": lambda inputs, **kw: mean(*inputs, **kw),
    "square_sum": lambda inputs, **kw: square_sum(*inputs),
    "dropout": lambda inputs, **kw: dropout(*inputs, **kw),
    "cosine_similarity": lambda inputs, **kw: cosine_similarity(*inputs),
    "cross_entropy_with_softmax": lambda inputs, **kw: cross_entropy_with_softmax(
        *inputs, **kw
    ),
    "sigmoid_bce": lambda inputs, **kw: sigmoid_bce(*inputs, **kw),
}

OP_KINDS = tuple(_OPS)


def op_forward(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Run the named operation, e.g. ``op_forward("matmul", [a, b])``."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise AutodiffError(f"unknown op kind {kind!r}") from None
    return fn(list(inputs), **attrs)
