import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepmapping.autodiff import (
    AdamState,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    check_gradients,
    current_graph,
    load_checkpoint,
    no_grad,
    ops,
    reset_graph,
    save_checkpoint,
    state_dict,
)

TOL = 1e-4
SEEDS = range(20)


def away_from_zero(rng, shape, low=0.1):
    """Random values with magnitude at least ``low`` (keeps kinks out of FD stencils)."""
    mag = rng.uniform(low, 2.0, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


# every operator paired with an input generator; inputs avoid kinks so
# central differences are valid
def _cases():
    return {
        "add": (lambda a, b: ops.add(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))]),
        "bias_add": (lambda a, b: ops.bias_add(a, b), lambda r: [r.normal(size=(5, 3)), r.normal(size=3)]),
        "sub": (lambda a, b: ops.sub(a, b), lambda r: [r.normal(size=(3, 1)), r.normal(size=(3, 4))]),
        "mul": (lambda a, b: ops.mul(a, b), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
        "neg": (lambda a: ops.neg(a), lambda r: [r.normal(size=(4,))]),
        "matmul": (lambda a, b: ops.matmul(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))]),
        "linear": (lambda x, w, b: ops.linear(x, w, b),
                   lambda r: [r.normal(size=(5, 3)), r.normal(size=(3, 4)), r.normal(size=4)]),
        "linear_relu": (lambda x, w, b: ops.linear(x, w, b, activation="relu"),
                        lambda r: [r.normal(size=(5, 3)), r.normal(size=(3, 4)), r.normal(size=4)]),
        "mlp": (lambda x, w0, b0, w1, b1: ops.mlp(x, [(w0, b0), (w1, b1)], chunk=3),
                lambda r: [r.normal(size=(7, 2)), r.normal(size=(2, 5)), r.normal(size=5),
                           r.normal(size=(5, 1)), r.normal(size=1)]),
        "rigid_transform": (lambda p: ops.rigid_transform(np.arange(12.0).reshape(2, 3, 2) - 5, p),
                            lambda r: [r.normal(size=(2, 3))]),
        "conv1d": (lambda x, w, b: ops.conv1d(x, w, b, dilation=2),
                   lambda r: [r.normal(size=(2, 9, 3)), r.normal(size=(3, 3, 4)), r.normal(size=4)]),
        "conv1d_relu": (lambda x, w, b: ops.conv1d(x, w, b, dilation=1, activation="relu"),
                        lambda r: [r.normal(size=(2, 7, 2)), r.normal(size=(3, 2, 3)), r.normal(size=3)]),
        "relu": (lambda a: ops.relu(a), lambda r: [away_from_zero(r, (3, 4))]),
        "elu": (lambda a: ops.elu(a, alpha=1.3), lambda r: [away_from_zero(r, (3, 4))]),
        "sigmoid": (lambda a: ops.sigmoid(a), lambda r: [3 * r.normal(size=(6,))]),
        "sin": (lambda a: ops.sin(a), lambda r: [r.normal(size=(5,))]),
        "cos": (lambda a: ops.cos(a), lambda r: [r.normal(size=(5,))]),
        "log": (lambda a: ops.log(a), lambda r: [r.uniform(0.5, 3.0, size=(5,))]),
        "clamp": (lambda a: ops.clamp(a, -0.5, 0.5),
                  lambda r: [np.concatenate([r.uniform(-0.4, 0.4, 4), r.uniform(0.6, 2, 2), r.uniform(-2, -0.6, 2)])]),
        "square": (lambda a: ops.square(a), lambda r: [r.normal(size=(3, 2))]),
        "norm": (lambda a: ops.norm(a), lambda r: [away_from_zero(r, (4, 2))]),
        "sum": (lambda a: ops.sum(a), lambda r: [r.normal(size=(3, 4))]),
        "sum_axis": (lambda a: ops.sum(a, axis=1), lambda r: [r.normal(size=(3, 4))]),
        "mean": (lambda a: ops.mean(a), lambda r: [r.normal(size=(3, 4))]),
        "mean_axis": (lambda a: ops.mean(a, axis=0), lambda r: [r.normal(size=(3, 4))]),
        "max": (lambda a: ops.max(a, axis=1), lambda r: [r.permutation(12).reshape(3, 4) + r.uniform(0, 0.1, (3, 4))]),
        "reshape": (lambda a: ops.reshape(a, (2, 6)), lambda r: [r.normal(size=(3, 4))]),
        "transpose": (lambda a: ops.transpose(a, (2, 0, 1)), lambda r: [r.normal(size=(2, 3, 4))]),
        "index_basic": (lambda a: a[1:, ::2], lambda r: [r.normal(size=(3, 4))]),
        "index_repeat": (lambda a: a[np.array([0, 2, 2, 1, 0])], lambda r: [r.normal(size=(3, 2))]),
        "concat": (lambda a, b: ops.concat([a, b], axis=1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 1))]),
        "stack": (lambda a, b: ops.stack([a, b], axis=-1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
        "div_const": (lambda a: a / 4.0, lambda r: [r.normal(size=(3,))]),
    }


CASES = _cases()


class TestFiniteDifferences:
    @pytest.mark.parametrize("name", sorted(CASES))
    def test_operator_matches_central_differences(self, name):
        fn, make = CASES[name]
        worst = max(check_gradients(fn, make(np.random.default_rng(seed)), seed=seed) for seed in SEEDS)
        assert worst < TOL, f"{name}: relative error {worst:.2e}"

    def test_reused_tensor_accumulates(self):
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        loss = ops.sum(x * x + x * 3.0)
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


class TestGraph:
    def test_backward_releases_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = ops.sum(ops.square(x))
        assert len(current_graph()) == 2
        backward(y)
        assert len(current_graph()) == 0
        assert y.is_leaf and not y.requires_grad

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(ops.square(x))
        reset_graph()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = ops.sum(x * 2.0)
        assert len(current_graph()) == 0
        assert not y.requires_grad

    def test_constants_do_not_record(self):
        y = ops.add(np.ones(2), np.ones(2))
        assert len(current_graph()) == 0 and not y.requires_grad

    @pytest.mark.parametrize("call", [
        lambda: ops.matmul(np.ones((2, 3)), np.ones((2, 3))),
        lambda: ops.add(np.ones((2, 3)), np.ones((4,))),
        lambda: ops.reshape(np.ones(5), (2, 3)),
        lambda: ops.linear(np.ones((2, 3)), np.ones((3, 4)), np.ones(3)),
        lambda: ops.conv1d(np.ones((1, 5, 2)), np.ones((3, 3, 4)), np.ones(4)),
        lambda: ops.rigid_transform(np.ones((2, 3, 2)), np.ones((3, 3))),
    ])
    def test_shape_mismatch_raises(self, call):
        with pytest.raises(ShapeError):
            call()

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        backward(ops.sum(x * 3.0))
        backward(ops.sum(x * 4.0))
        np.testing.assert_allclose(x.grad, [7.0])


class TestOperatorValues:
    def test_conv1d_matches_direct_sum(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=(2, 10, 3)), rng.normal(size=(3, 3, 5)), rng.normal(size=5)
        out = ops.conv1d(x, w, b, dilation=2).data
        pad = np.zeros((2, 14, 3))
        pad[:, 2:12] = x
        ref = np.zeros((2, 10, 5))
        for t in range(10):
            for j in range(3):
                ref[:, t] += pad[:, t + 2 * j] @ w[j]
        np.testing.assert_allclose(out, ref + b, atol=1e-12)

    def test_mlp_matches_layerwise(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(50, 2))
        layers = [(Tensor(rng.normal(size=(2, 6))), Tensor(rng.normal(size=6))),
                  (Tensor(rng.normal(size=(6, 1))), Tensor(rng.normal(size=1)))]
        ref = np.maximum(x @ layers[0][0].data + layers[0][1].data, 0) @ layers[1][0].data + layers[1][1].data
        np.testing.assert_allclose(ops.mlp(x, layers, chunk=7).data, ref, atol=1e-12)

    def test_sigmoid_extremes_are_finite(self):
        out = ops.sigmoid(np.array([-800.0, 0.0, 800.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_norm_subgradient_at_zero(self):
        x = Tensor(np.zeros((1, 2)), requires_grad=True)
        backward(ops.sum(ops.norm(x)))
        np.testing.assert_array_equal(x.grad, np.zeros((1, 2)))

    def test_max_tie_goes_to_first(self):
        x = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
        backward(ops.sum(ops.max(x, axis=1)))
        np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
    def test_sum_then_grad_is_ones(self, values):
        x = Tensor(np.array(values), requires_grad=True)
        backward(ops.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones(len(values)))


class TestAdam:
    def test_first_steps_match_hand_computation(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True, name="p")
        state = AdamState.for_params([p], lr=0.1)
        grads = [np.array([0.5, -1.0]), np.array([0.2, 0.3])]
        m = np.zeros(2)
        v = np.zeros(2)
        expected = p.data.copy()
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            expected = expected - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            p.grad = g.copy()
            adam_step([p], state)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)
        assert p.grad is None and state.step == 2

    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update lr * sign(g) up to eps
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        state = AdamState.for_params([p], lr=0.01)
        p.grad = np.array([3.0, -0.002])
        adam_step([p], state)
        np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-5)

    def test_missing_gradient_is_reported(self):
        p = Tensor(np.ones(2), requires_grad=True, name="weights")
        with pytest.raises(ValueError, match="weights"):
            adam_step([p], AdamState.for_params([p]))

    def test_minimises_quadratic(self):
        p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
        state = AdamState.for_params([p], lr=0.05)
        for _ in range(2000):
            backward(ops.sum(ops.square(p - np.array([1.0, 2.0]))))
            adam_step([p], state)
        np.testing.assert_allclose(p.data, [1.0, 2.0], atol=1e-3)


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        params = {"w": Tensor(rng.normal(size=(3, 2))), "b": Tensor(rng.normal(size=2) * 1e-300)}
        save_checkpoint(tmp_path / "ckpt.json", params)
        fresh = {"w": Tensor(np.zeros((3, 2))), "b": Tensor(np.zeros(2))}
        load_checkpoint(tmp_path / "ckpt.json", fresh)
        for name in params:
            np.testing.assert_array_equal(fresh[name].data, params[name].data)

    def test_format_is_named_shapes(self):
        payload = state_dict({"w": Tensor(np.arange(6.0).reshape(2, 3))})
        assert json.loads(json.dumps(payload)) == {"w": {"shape": [2, 3], "values": [0, 1, 2, 3, 4, 5]}}

    def test_shape_mismatch_rejected(self, tmp_path):
        save_checkpoint(tmp_path / "c.json", {"w": Tensor(np.zeros(3))})
        with pytest.raises(ValueError, match="shape"):
            load_checkpoint(tmp_path / "c.json", {"w": Tensor(np.zeros(4))})
