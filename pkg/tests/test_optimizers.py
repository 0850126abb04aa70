import math

import numpy as np
import pytest

from metalearn.models import EncoderConfig, init_params
from metalearn.optimizers import (
    LrTable,
    OuterOptState,
    centralize,
    cosine_anneal,
    ranger_step,
    rectification,
    sgd_inner_step,
)
from metalearn.tensor_core import ContractError, NumericError, Tensor


class TestInnerStep:
    def test_scalar_update(self):
        lrs = LrTable.initial(["w"], 1, 0.1)
        out = sgd_inner_step({"w.t": Tensor(1.0)}, {"w.t": Tensor(2.0)}, lrs, 0)
        assert out["w.t"].item() == pytest.approx(0.8)

    def test_head_multiplier(self):
        lrs = LrTable.initial(["enc0", "head"], 2, 1e-5, head_multiplier=10.0)
        assert lrs.rate("head", 1).item() == pytest.approx(1e-4)
        assert lrs.rate("enc0", 1).item() == pytest.approx(1e-5)

    def test_zero_grad_is_identity(self):
        p = init_params(EncoderConfig(input_dim=3, output_dim=2, n_classes=2, inner_steps=1))
        lrs = LrTable.for_params(p, 0.5)
        grads = {k: Tensor(np.zeros(v.shape)) for k, v in p.adaptable().items()}
        q = sgd_inner_step(p, grads, lrs, 0)
        for k in p:
            np.testing.assert_array_equal(p[k].data, q[k].data)

    def test_step_out_of_range(self):
        lrs = LrTable.initial(["w"], 2, 0.1)
        with pytest.raises(ContractError):
            sgd_inner_step({"w.t": Tensor(1.0)}, {"w.t": Tensor(1.0)}, lrs, 2)

    def test_layer_norm_not_adaptable(self):
        p = init_params(EncoderConfig(input_dim=3, output_dim=2, n_classes=2, inner_steps=1))
        lrs = LrTable.for_params(p, 0.5)
        with pytest.raises(ContractError):
            sgd_inner_step(p, {"ln0.gamma.0": Tensor(np.ones(2))}, lrs, 0)

    def test_named_keys(self):
        lrs = LrTable.initial(["enc0", "head"], 2, 0.1)
        assert sorted(lrs.named()) == ["lr.enc0.0", "lr.enc0.1", "lr.head.0", "lr.head.1"]


class TestCosine:
    def test_endpoints_and_midpoint(self):
        assert cosine_anneal(0, 100, 3e-5) == pytest.approx(3e-5)
        assert cosine_anneal(100, 100, 3e-5) == pytest.approx(0.0, abs=1e-20)
        assert cosine_anneal(50, 100, 3e-5) == pytest.approx(1.5e-5)

    def test_monotone(self):
        vals = [cosine_anneal(t, 20, 1.0) for t in range(21)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_bad_arguments(self):
        with pytest.raises(ContractError):
            cosine_anneal(0, 0, 1.0)
        with pytest.raises(ContractError):
            cosine_anneal(11, 10, 1.0)


class TestRanger:
    def test_rectification_undefined_at_first_step(self):
        rho_t, r_t = rectification(1, 0.999)
        assert rho_t <= 4.0 and math.isnan(r_t)
        rho_inf = 2.0 / (1.0 - 0.999) - 1.0
        assert rectification(10_000, 0.999)[0] == pytest.approx(rho_inf, rel=1e-3)

    def test_first_step_is_momentum_step(self):
        # bias-corrected momentum at t=1 equals the gradient itself
        state = OuterOptState(lr=0.1)
        _, out = ranger_step(state, {"b": np.array([1.0, 2.0])}, {"b": np.array([0.5, -1.0])})
        np.testing.assert_allclose(out["b"], [0.95, 2.1])

    def test_lookahead_midpoint_after_sync(self):
        state = OuterOptState(lr=0.01)
        p0 = {"b": np.array([1.0])}
        params = dict(p0)
        for _ in range(4):
            state, params = ranger_step(state, params, {"b": np.array([1.0])})
        # replay the fifth step with sync disabled to get the pre-sync fast weights
        fast = state.copy()
        fast.sync_period = 10**9
        _, pre_sync = ranger_step(fast, params, {"b": np.array([1.0])})
        state, synced = ranger_step(state, params, {"b": np.array([1.0])})
        np.testing.assert_allclose(synced["b"], 0.5 * (p0["b"] + pre_sync["b"]))
        np.testing.assert_allclose(state.slow["b"], synced["b"])

    def test_constant_gradient_moves_downhill(self):
        state, params = OuterOptState(lr=0.01), {"b": np.zeros(3)}
        for _ in range(12):
            state, params = ranger_step(state, params, {"b": np.ones(3)})
        assert np.all(params["b"] < 0)

    def test_centralization(self):
        g = np.array([[1.0, 3.0], [2.0, 2.0]])
        np.testing.assert_allclose(centralize(g), [[-1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_array_equal(centralize(np.array([1.0, 3.0])), [1.0, 3.0])

    def test_non_finite_gradient_raises(self):
        with pytest.raises(NumericError):
            ranger_step(OuterOptState(), {"b": np.zeros(2)}, {"b": np.array([np.nan, 0.0])})

    def test_missing_gradient_raises(self):
        with pytest.raises(ContractError):
            ranger_step(OuterOptState(), {"b": np.zeros(2)}, {})

    def test_deterministic_and_pure(self):
        state = OuterOptState(lr=0.05)
        params, grads = {"W": np.ones((2, 2))}, {"W": np.array([[1.0, 0.0], [0.0, 2.0]])}
        s1, a = ranger_step(state, params, grads)
        s2, b = ranger_step(state, params, grads)
        np.testing.assert_array_equal(a["W"], b["W"])
        assert state.t == 0 and s1.t == s2.t == 1
        np.testing.assert_array_equal(params["W"], np.ones((2, 2)))

    def test_per_parameter_rate(self):
        _, out = ranger_step(OuterOptState(lr=0.1), {"a": np.zeros(1), "b": np.zeros(1)},
                             {"a": np.ones(1), "b": np.ones(1)}, lr={"a": 0.0})
        np.testing.assert_allclose(out["a"], [0.0])
        np.testing.assert_allclose(out["b"], [-0.1])

    def test_state_round_trip(self):
        state, _ = ranger_step(OuterOptState(), {"W": np.ones((2, 2))}, {"W": np.eye(2)})
        back = OuterOptState.from_arrays(state.to_arrays(), t=state.t)
        np.testing.assert_array_equal(back.exp_avg["W"], state.exp_avg["W"])
        np.testing.assert_array_equal(back.slow["W"], state.slow["W"])
