import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metalearn.tensor_core import (
    ContractError,
    NumericError,
    Tensor,
    grad,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    no_grad,
    ops,
    softmax_cross_entropy,
    sq_euclidean,
)


class TestGrad:
    def test_square(self):
        theta = Tensor(3.0, requires_grad=True)
        g = grad(theta * theta, {"t": theta})
        assert g["t"].item() == pytest.approx(6.0)

    def test_second_order_fixture(self):
        # L = (theta' - 1)^2 with theta' = theta - 0.1 * dL_S/dtheta, L_S = theta^2
        theta = Tensor(1.0, requires_grad=True)
        inner = grad(theta * theta, {"t": theta}, create_graph=True)["t"]
        adapted = theta - 0.1 * inner
        g = grad((adapted - 1.0) ** 2, {"t": theta})
        assert abs(g["t"].item() - (-0.32)) <= 1e-10

    def test_create_graph_returns_differentiable_grads(self):
        x = Tensor(2.0, requires_grad=True)
        g = grad(x ** 3, {"x": x}, create_graph=True)["x"]   # 3x^2
        gg = grad(g, {"x": x})["x"]                          # 6x
        assert gg.item() == pytest.approx(12.0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            grad(x * 2.0, {"x": x})

    def test_unreachable_param_gets_zero(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = Tensor(np.ones((2, 3)), requires_grad=True)
        g = grad(ops.sum(x * x), {"x": x, "y": y})
        np.testing.assert_array_equal(g["y"].data, np.zeros((2, 3)))
        assert set(g) == {"x", "y"}

    def test_grad_shapes_match_params(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        x = Tensor(rng.normal(size=(5, 3)))
        g = grad(ops.sum(ops.tanh(ops.add(ops.matmul(x, w), b))), {"w": w, "b": b})
        assert g["w"].shape == (3, 4) and g["b"].shape == (4,)

    def test_nan_loss_names_node(self):
        x = Tensor(-1.0, requires_grad=True)
        with pytest.raises(NumericError) as info:
            grad(ops.log(x), {"x": x})
        assert info.value.node is not None

    def test_graph_freed_unless_retained(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x
        grad(y, {"x": x})
        assert y.parents == ()

    def test_retain_graph_allows_second_call(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x
        g1 = grad(y, {"x": x}, retain_graph=True)["x"].item()
        g2 = grad(y, {"x": x})["x"].item()
        assert g1 == g2 == pytest.approx(4.0)


class TestNoGrad:
    def test_disables_recording(self):
        x = Tensor(1.0, requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = x * 2.0
        assert is_grad_enabled()
        assert y.parents == () and not y.requires_grad

    def test_is_thread_local(self):
        seen = []

        def worker():
            seen.append(is_grad_enabled())

        with no_grad():
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        assert seen == [True]


class TestPrimitives:
    def test_sq_euclidean(self):
        assert sq_euclidean(Tensor([0.0, 0.0]), Tensor([3.0, 4.0])).item() == pytest.approx(25.0)

    def test_sq_euclidean_pairwise(self):
        a = Tensor(np.array([[0.0, 0.0], [1.0, 1.0]]))
        b = Tensor(np.array([[3.0, 4.0]]))
        np.testing.assert_allclose(sq_euclidean(a, b).data, [[25.0], [13.0]])

    def test_l2_normalize(self):
        np.testing.assert_allclose(l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])

    def test_l2_normalize_zero_vector_is_finite(self):
        out = l2_normalize(Tensor(np.zeros(3))).data
        assert np.all(np.isfinite(out))

    def test_cross_entropy_uniform(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((1, 2))), np.array([0]))
        assert loss.item() == pytest.approx(np.log(2.0))

    def test_layer_norm_zero_input(self):
        out = layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3)))

    def test_shape_mismatch_names_primitive(self):
        with pytest.raises(ContractError, match="matmul"):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ContractError, match="sq_euclidean"):
            sq_euclidean(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))

    def test_label_range_checked(self):
        with pytest.raises(ContractError):
            softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_primitive_set_is_complete(self):
        required = {"matmul", "add", "tanh", "mean", "sq_euclidean", "l2_normalize", "layer_norm",
                    "softmax_cross_entropy"}
        assert required <= set(ops.PRIMITIVES)


finite_rows = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)),
                     elements=st.floats(-50, 50, allow_nan=False))


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(finite_rows, st.floats(-100, 100))
    def test_cross_entropy_shift_invariance(self, logits, shift):
        labels = np.zeros(logits.shape[0], dtype=np.int64)
        a = softmax_cross_entropy(Tensor(logits), labels).item()
        b = softmax_cross_entropy(Tensor(logits + shift), labels).item()
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))

    @settings(max_examples=50, deadline=None)
    @given(finite_rows)
    def test_l2_normalize_unit_norm(self, v):
        norms = np.linalg.norm(v, axis=1)
        out = l2_normalize(Tensor(v)).data
        keep = norms > 1e-6
        np.testing.assert_allclose(np.linalg.norm(out[keep], axis=1), 1.0, atol=1e-10)
