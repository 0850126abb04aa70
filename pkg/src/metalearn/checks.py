"""Gradient oracle suite: primitives, the composed encoder and MAML meta-gradients.

Every check compares reverse-mode gradients with central finite differences.
The MAML checks differentiate through the whole inner loop, so the oracle
sees the exact function ``theta -> L_query(adapt(theta))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .episodes import LabeledBatch
from .meta_algorithms import MetaTask, adapt, batch_loss, maml_meta_grad
from .models import EncoderConfig, ParamSet, forward, init_params
from .optimizers import LrTable
from .tensor_core import Tensor, ops, softmax_cross_entropy
from .tensor_core.gradcheck import (
    CheckResult,
    check_gradient,
    check_second_order,
    finite_difference_grad,
    primitive_checks,
    relative_error,
)

GRADCHECK_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


# -- scalar fixture ------------------------------------------------------------

def scalar_fixture(order: str, theta: float = 1.0, alpha: float = 0.1, steps: int = 1
                   ) -> tuple[float, float]:
    """Meta-gradient of ``L_Q = (theta'-1)^2`` after ``steps`` SGD steps on ``L_S = theta^2``.

    Returns ``(d/d theta, d/d alpha)``; at the defaults the second-order
    value is -0.32 and the first-order one -0.4.
    """
    lrs = LrTable.initial(["w"], max(steps, 1), alpha)
    leaf = {"w.t": Tensor(theta, requires_grad=True)}
    task = MetaTask(lambda p, k: ops.power(p["w.t"], 2.0),
                    lambda p: ops.power(ops.sub(p["w.t"], Tensor(1.0)), 2.0))
    mg = maml_meta_grad(leaf, lrs, [task], steps, order)
    return float(mg.grads["w.t"]), float(mg.lr_grads["lr.w.0"])


# -- composed encoder ----------------------------------------------------------

def _random_encoder_case(rng: np.random.Generator):
    cfg = EncoderConfig(input_dim=int(rng.integers(2, 6)),
                        hidden_dims=tuple(int(h) for h in rng.integers(2, 6, size=rng.integers(0, 3))),
                        output_dim=int(rng.integers(2, 6)), n_classes=int(rng.integers(2, 5)),
                        inner_steps=int(rng.integers(0, 3)))
    params = init_params(cfg, rng)
    # move layer-norm affines and biases off their trivial initial values
    arrays = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in params.to_arrays().items()}
    n = int(rng.integers(2, 6))
    x = rng.normal(size=(n, cfg.input_dim))
    y = rng.integers(0, cfg.n_classes, size=n)
    step = int(rng.integers(0, cfg.n_ln_copies))

    def objective(ts):
        return softmax_cross_entropy(forward(ParamSet(cfg, ts), x, step), y)

    return arrays, objective


def encoder_checks(n_cases: int = 20, seed: int = 1, second_order: bool = True) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_cases):
        arrays, objective = _random_encoder_case(rng)
        out.append(check_gradient(f"encoder[{i}]", objective, arrays))
        if second_order:
            direction = {k: rng.normal(size=v.shape) for k, v in arrays.items()}
            out.append(check_second_order(f"encoder[{i}].hvp", objective, arrays, direction))
    return out


# -- network MAML fixture ------------------------------------------------------------

@dataclass(frozen=True)
class NetworkFixture:
    config: EncoderConfig
    params: ParamSet
    lrs: LrTable
    support: LabeledBatch
    query: LabeledBatch

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.to_arrays().values())


def network_fixture(seed: int = 0, inner_steps: int = 2) -> NetworkFixture:
    """A 4-5-4 encoder with a 3-way head (118 parameters) and one small episode."""
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(input_dim=4, hidden_dims=(5,), output_dim=4, n_classes=3,
                        inner_steps=inner_steps)
    base = init_params(cfg, rng)
    params = ParamSet.from_arrays(cfg, {k: v + 0.2 * rng.normal(size=v.shape)
                                        for k, v in base.to_arrays().items()})
    lrs = LrTable.for_params(params, 0.3, 2.0)

    def batch(n, tag):
        y = np.arange(n) % 3
        return LabeledBatch(tuple(f"{tag}{i}" for i in range(n)), rng.normal(size=(n, 4)) + y[:, None], y)

    return NetworkFixture(cfg, params, lrs, batch(6, "s"), batch(6, "q"))


def _fixture_task(fx: NetworkFixture) -> MetaTask:
    k = fx.config.inner_steps
    return MetaTask(lambda p, step: batch_loss(p, fx.support, step),
                    lambda p: batch_loss(p, fx.query, k))


def network_meta_grad(fx: NetworkFixture, order: str = "second") -> dict[str, np.ndarray]:
    theta = fx.params.as_leaves()
    mg = maml_meta_grad(theta, fx.lrs, [_fixture_task(fx)], fx.config.inner_steps, order)
    return {**mg.grads, **mg.lr_grads}


def network_fd_oracle(fx: NetworkFixture, eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences of the query loss after the full inner loop, w.r.t. theta and alpha."""
    task = _fixture_task(fx)
    lr_names = list(fx.lrs.named())

    def f(arrays):
        params = ParamSet.from_arrays(fx.config, {k: v for k, v in arrays.items()
                                                  if k not in lr_names})
        lrs = fx.lrs.with_values({k: arrays[k] for k in lr_names})
        adapted = adapt(params, task.support_loss, lrs, fx.config.inner_steps, "first",
                        track_outer=False).adapted
        return task.query_loss(adapted.detach()).item()

    point = {**fx.params.to_arrays(), **fx.lrs.to_arrays()}
    return finite_difference_grad(f, point, eps)


def network_maml_check(seed: int = 0, inner_steps: int = 2) -> CheckResult:
    fx = network_fixture(seed, inner_steps)
    return CheckResult(f"maml-network[K={inner_steps}]",
                       relative_error(network_meta_grad(fx), network_fd_oracle(fx)))


# -- suite ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuiteReport:
    primitive: list[CheckResult]
    encoder: list[CheckResult]
    scalar_error: float
    network: CheckResult

    @property
    def max_gradcheck_error(self) -> float:
        return max(r.rel_error for r in self.primitive + self.encoder)

    @property
    def passed(self) -> bool:
        return (self.max_gradcheck_error <= GRADCHECK_TOLERANCE and self.scalar_error <= 1e-10
                and self.network.rel_error <= NETWORK_TOLERANCE)


def run_oracle_suite(n_cases: int = 100, seed: int = 0) -> SuiteReport:
    second, _ = scalar_fixture("second")
    return SuiteReport(primitive_checks(n_cases, seed), encoder_checks(seed=seed + 1),
                       abs(second - (-0.32)), network_maml_check(seed))
