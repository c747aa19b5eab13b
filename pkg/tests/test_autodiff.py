"""Tests for the tensor tape, op gradients, AdamW and checkpoints."""

import numpy as np
import pytest

from sega.autodiff import ops
from sega.autodiff.checkpoint import load_checkpoint, save_checkpoint
from sega.autodiff.gradcheck import grad_check
from sega.autodiff.nn import Linear
from sega.autodiff.optim import AdamW, AdamWState, adamw_step
from sega.autodiff.tensor import Tape, Tensor, backward, float64_mode
from sega.errors import AutodiffError, CheckpointError, NumericError


def param(rng, *shape, name=None):
    return Tensor(rng.standard_normal(shape), requires_grad=True, name=name)


UNARY_CASES = {
    "leaky_relu": lambda x: ops.leaky_relu(x, 0.01),
    "tanh": ops.tanh,
    "exp": lambda x: ops.exp(ops.scale(x, 0.3)),
    "row_softmax": ops.row_softmax,
    "transpose": ops.transpose,
    "reshape": lambda x: ops.reshape(x, (2, 6)),
    "slice_cols": lambda x: ops.slice_cols(x, 1, 3),
    "take_rows": lambda x: ops.take_rows(x, np.array([2, 0, 2])),
    "mean": lambda x: ops.mean(x, axis=0),
    "reduce_sum": lambda x: ops.reduce_sum(x, axis=1),
}


@pytest.mark.parametrize("kind", sorted(UNARY_CASES))
def test_unary_op_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(1)
    x = param(rng, 3, 4, name="x")
    weights = rng.standard_normal(UNARY_CASES[kind](Tensor(x.data)).shape)

    def loss():
        out = UNARY_CASES[kind](x)
        return ops.reduce_sum(ops.mul(out, Tensor(weights)))

    assert grad_check(loss, [x], eps=1e-6) < 1e-4


def test_binary_op_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    a, b = param(rng, 3, 4, name="a"), param(rng, 4, 2, name="b")
    c, bias = param(rng, 3, 2, name="c"), param(rng, 2, name="bias")
    w = param(rng, 3, 1, name="w")

    def loss():
        h = ops.add_bias(ops.matmul(a, b), bias)
        h = ops.sub(ops.mul(h, c), ops.mul_cols(c, w))
        h = ops.concat([h, ops.scale(c, 2.0)], axis=1)
        return ops.square_sum(h)

    assert grad_check(loss, [a, b, c, bias, w], eps=1e-6) < 1e-4


def test_log_cosine_and_losses_match_finite_differences():
    rng = np.random.default_rng(3)
    a, b = param(rng, 4, 3, name="a"), param(rng, 4, 3, name="b")
    logits = param(rng, 4, 5, name="logits")
    positive = Tensor(rng.uniform(0.5, 2.0, size=(4, 3)), requires_grad=True, name="p")
    targets = np.array([0, 3, 1, 4])
    multi_hot = rng.integers(0, 2, size=(4, 5))

    def loss():
        total = ops.reduce_sum(ops.cosine_similarity(a, b))
        total = ops.add(total, ops.reduce_sum(ops.log(positive)))
        total = ops.add(total, ops.cross_entropy_with_softmax(logits, targets))
        return ops.add(total, ops.sigmoid_bce(logits, multi_hot))

    assert grad_check(loss, [a, b, logits, positive], eps=1e-6) < 1e-4


def test_masked_softmax_rows_sum_to_one_and_ignore_masked_entries():
    x = Tensor(np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 4.0]]))
    mask = np.array([[True, False, True], [False, False, True]])
    out = ops.row_softmax(x, mask).numpy()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out[1], [0.0, 0.0, 1.0])


def test_backward_twice_on_one_tape_raises():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ops.square_sum(x)
    tape.backward(loss)
    with pytest.raises(AutodiffError):
        tape.backward(loss)


def test_unreached_parameters_get_zero_gradients():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = ops.square_sum(x)
    backward(loss, [x, unused])
    np.testing.assert_array_equal(x.grad, 2.0 * np.ones((2, 2)))
    np.testing.assert_array_equal(unused.grad, np.zeros(3))


def test_ops_outside_a_tape_do_not_record():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ops.square_sum(x)
    with pytest.raises(AutodiffError):
        backward(loss)


def test_shape_mismatch_names_the_op():
    with pytest.raises(AutodiffError, match="matmul"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_input_raises_numeric_error():
    with pytest.raises(NumericError):
        ops.tanh(Tensor(np.array([[np.nan, 1.0]])))


def test_cosine_of_zero_vector_raises():
    with pytest.raises(NumericError):
        ops.cosine_similarity(Tensor(np.zeros((1, 3))), Tensor(np.ones((1, 3))))


def test_dropout_is_identity_in_eval_mode_and_needs_rng_in_training():
    x = Tensor(np.ones((4, 4)))
    assert ops.dropout(x, 0.3, None, train=False) is x
    with pytest.raises(AutodiffError):
        ops.dropout(x, 0.3, None, train=True)


def test_dropout_preserves_the_expected_value():
    x = Tensor(np.full((1000, 100), 2.0))
    out = ops.dropout(x, 0.3, np.random.default_rng(0), train=True)
    dropped = out.numpy() == 0.0
    assert 0.28 < dropped.mean() < 0.32
    np.testing.assert_allclose(out.numpy()[~dropped], 2.0 / 0.7, rtol=1e-6)
    assert abs(out.numpy().mean() - 2.0) < 0.02


def test_op_forward_dispatches_by_name():
    a = Tensor(np.eye(2))
    b = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(ops.op_forward("matmul", [a, b]).numpy(), b.data)
    with pytest.raises(AutodiffError):
        ops.op_forward("no_such_op", [a])


def test_float64_mode_changes_new_tensor_dtype():
    assert Tensor([1.0]).dtype == np.float32
    with float64_mode():
        assert Tensor([1.0]).dtype == np.float64


def test_adamw_first_step_moves_each_coordinate_by_lr():
    weight = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    optimizer = AdamW({"w": weight}, lr=0.1)
    with Tape() as tape:
        loss = ops.square_sum(weight)
    tape.backward(loss)
    optimizer.step()
    np.testing.assert_allclose(weight.data, [0.9, -1.9, 2.9], atol=1e-6)


def test_adamw_weight_decay_shrinks_parameters():
    weight = Tensor(np.array([1.0]), requires_grad=True)
    weight.grad = np.zeros(1, dtype=np.float32)
    AdamW({"w": weight}, lr=0.1, weight_decay=0.5).step()
    np.testing.assert_allclose(weight.data, [0.95], atol=1e-6)


def test_adamw_step_moves_a_unit_gradient_by_lr():
    p = Tensor(np.array([1.0]), requires_grad=True)
    state = AdamWState(lr=0.001)
    adamw_step({"p": p}, {"p": np.array([1.0], dtype=np.float32)}, state)
    np.testing.assert_allclose(p.data, [0.999], atol=1e-6)
    assert state.step == 1


def test_adamw_step_without_gradient_or_decay_leaves_parameter_unchanged():
    p = Tensor(np.array([1.5, -0.5]), requires_grad=True)
    adamw_step({"p": p}, {"p": np.zeros(2, dtype=np.float32)}, AdamWState())
    np.testing.assert_array_equal(p.data, np.array([1.5, -0.5], dtype=np.float32))


def test_backward_with_seeded_dropout_is_bitwise_reproducible():
    inputs = np.random.default_rng(2).standard_normal((6, 3))

    def gradients(seed):
        layer = Linear(3, 4, np.random.default_rng(0))
        params = layer.named_parameters()
        with Tape() as tape:
            hidden = ops.dropout(
                layer(Tensor(inputs)), 0.3, np.random.default_rng(seed), train=True
            )
            loss = ops.square_sum(ops.tanh(hidden))
        tape.backward(loss, params.values())
        return {name: p.grad.copy() for name, p in params.items()}

    first, second = gradients(11), gradients(11)
    assert first.keys() == second.keys()
    for name, grad in first.items():
        assert np.array_equal(grad, second[name])


def test_adamw_state_round_trips_through_checkpoint(tmp_path):
    rng = np.random.default_rng(4)

    def run(steps, resume=None):
        layer = Linear(3, 2, np.random.default_rng(0))
        params = layer.named_parameters("layer.")
        optimizer = AdamW(params, lr=0.01)
        if resume is not None:
            entries = load_checkpoint(resume)
            layer.load_state(entries, "layer.")
            optimizer.load_state_dict(entries)
        for _ in range(steps):
            with Tape() as tape:
                loss = ops.square_sum(layer(Tensor(inputs)))
            tape.backward(loss, params.values())
            optimizer.step()
        return layer, optimizer

    inputs = rng.standard_normal((5, 3))
    straight, _ = run(3)
    partial, optimizer = run(2)
    path = save_checkpoint(
        tmp_path / "half.ckpt", {**partial.state("layer."), **optimizer.state_dict()}
    )
    resumed, _ = run(1, resume=path)
    for name, value in straight.state().items():
        np.testing.assert_array_equal(resumed.state()[name], value)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(5)
    entries = {
        "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
        "a.bias": rng.standard_normal(4).astype(np.float32),
        "meta.epoch": np.array(7, dtype=np.float32),
    }
    loaded = load_checkpoint(save_checkpoint(tmp_path / "x.ckpt", entries))
    assert list(loaded) == list(entries)
    for name, value in entries.items():
        assert loaded[name].tobytes() == value.tobytes()
        assert loaded[name].shape == value.shape


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT\x01\x00\x00\x00")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_load_state_rejects_shape_mismatch():
    layer = Linear(3, 2, np.random.default_rng(0))
    with pytest.raises(CheckpointError):
        layer.load_state({"weight": np.zeros((2, 2)), "bias": np.zeros(2)})
