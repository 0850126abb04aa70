"""Central-difference gradient oracle and randomized primitive checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import ops
from .tensor import NumericError, Tensor, grad


def _as_float(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def finite_difference_grad(f: Callable[[dict[str, np.ndarray]], float],
                           params: Mapping[str, np.ndarray | Tensor],
                           eps: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences ``(f(p + eps) - f(p - eps)) / (2 eps)`` per coordinate.

    ``f`` receives a dict of plain arrays and returns a float (or scalar Tensor).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = {k: np.array(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
            for k, v in params.items()}
    out: dict[str, np.ndarray] = {}
    for name, value in base.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = _as_float(f(base))
            flat[i] = orig - eps
            lo = _as_float(f(base))
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"finite_difference_grad: f is not finite near {name}[{i}]",
                                   node=name)
            gflat[i] = (hi - lo) / (2.0 * eps)
        out[name] = g
    return out


def relative_error(a: Mapping[str, np.ndarray | Tensor], b: Mapping[str, np.ndarray | Tensor],
                   floor: float = 1e-8) -> float:
    """Norm-wise relative error between two gradient maps with the same keys."""
    if set(a) != set(b):
        raise ValueError(f"gradient maps have different keys: {sorted(set(a) ^ set(b))}")
    va = np.concatenate([np.ravel(_arr(a[k])) for k in sorted(a)])
    vb = np.concatenate([np.ravel(_arr(b[k])) for k in sorted(a)])
    scale = max(np.linalg.norm(va), np.linalg.norm(vb), floor)
    return float(np.linalg.norm(va - vb) / scale)


def max_relative_error(results) -> float:
    return max((r.rel_error for r in results), default=0.0)


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_error: float


def check_gradient(name: str, objective: Callable[[dict[str, Tensor]], Tensor],
                   params: Mapping[str, np.ndarray], eps: float = 1e-6) -> CheckResult:
    """Compare reverse-mode ``grad`` of ``objective`` with central differences."""
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    analytic = grad(objective(leaves), leaves)

    def f(arrays):
        return objective({k: Tensor(v) for k, v in arrays.items()})

    numeric = finite_difference_grad(f, params, eps)
    return CheckResult(name, relative_error(analytic, numeric))


def check_second_order(name: str, objective: Callable[[dict[str, Tensor]], Tensor],
                       params: Mapping[str, np.ndarray], direction: Mapping[str, np.ndarray],
                       eps: float = 1e-6) -> CheckResult:
    """Check the gradient of ``<grad objective, direction>`` against differences of it."""

    def directional(ts: dict[str, Tensor], create_graph: bool) -> Tensor:
        g = grad(objective(ts), ts, create_graph=create_graph)
        total = None
        for k, gk in g.items():
            term = ops.sum(ops.mul(gk, Tensor(direction[k])))
            total = term if total is None else ops.add(total, term)
        return total

    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    analytic = grad(directional(leaves, True), leaves)

    def f(arrays):
        return directional({k: Tensor(v, requires_grad=True) for k, v in arrays.items()}, False)

    numeric = finite_difference_grad(f, params, eps)
    return CheckResult(name, relative_error(analytic, numeric))


# -- randomized primitive cases ------------------------------------------

def _projected(out: Tensor, proj: np.ndarray) -> Tensor:
    return ops.sum(ops.mul(out, Tensor(proj)))


def _case_matmul(rng):
    n, k, m = rng.integers(1, 5, size=3)
    params = {"a": rng.normal(size=(n, k)), "b": rng.normal(size=(k, m))}
    proj = rng.normal(size=(n, m))
    return params, lambda t: _projected(ops.matmul(t["a"], t["b"]), proj)


def _case_add(rng):
    n, m = rng.integers(1, 5, size=2)
    params = {"a": rng.normal(size=(n, m)), "b": rng.normal(size=(m,))}
    proj = rng.normal(size=(n, m))
    return params, lambda t: _projected(ops.add(t["a"], t["b"]), proj)


def _case_tanh(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    params = {"x": rng.normal(scale=1.5, size=shape)}
    proj = rng.normal(size=shape)
    return params, lambda t: _projected(ops.tanh(t["x"]), proj)


def _case_mean(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    axis = int(rng.integers(0, 2))
    params = {"x": rng.normal(size=shape)}
    out_shape = (shape[1 - axis],)
    proj = rng.normal(size=out_shape)
    # square the mean so the second derivative is not identically zero
    return params, lambda t: _projected(ops.power(ops.mean(t["x"], axis=axis), 2.0), proj)


def _case_sq_euclidean(rng):
    n, m, d = rng.integers(1, 5, size=3)
    params = {"a": rng.normal(size=(n, d)), "b": rng.normal(size=(m, d))}
    proj = rng.normal(size=(n, m))
    return params, lambda t: _projected(ops.sq_euclidean(t["a"], t["b"]), proj)


def _case_l2_normalize(rng):
    # width 1 is excluded: v/|v| is locally constant there, so its gradient is exactly 0
    n, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    params = {"v": rng.normal(size=(n, d)) + 0.1}
    proj = rng.normal(size=(n, d))
    return params, lambda t: _projected(ops.l2_normalize(t["v"]), proj)


def _case_layer_norm(rng):
    n, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    params = {"x": rng.normal(size=(n, d)), "gamma": rng.normal(size=d),
              "beta": rng.normal(size=d)}
    proj = rng.normal(size=(n, d))
    return params, lambda t: _projected(ops.layer_norm(t["x"], t["gamma"], t["beta"]), proj)


def _case_cross_entropy(rng):
    n, c = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    labels = rng.integers(0, c, size=n)
    params = {"logits": rng.normal(scale=2.0, size=(n, c))}
    return params, lambda t: ops.softmax_cross_entropy(t["logits"], labels)


PRIMITIVE_CASES = {
    "matmul": _case_matmul,
    "add": _case_add,
    "tanh": _case_tanh,
    "mean": _case_mean,
    "sq_euclidean": _case_sq_euclidean,
    "l2_normalize": _case_l2_normalize,
    "layer_norm": _case_layer_norm,
    "softmax_cross_entropy": _case_cross_entropy,
}


def primitive_checks(n_cases: int = 100, seed: int = 0, second_order: bool = True
                     ) -> list[CheckResult]:
    """Randomized first- (and optionally second-) order checks over all primitives.

    Cases cycle through the primitives so each one gets about ``n_cases / 8``
    draws.
    """
    rng = np.random.default_rng(seed)
    names = list(PRIMITIVE_CASES)
    results = []
    for i in range(n_cases):
        name = names[i % len(names)]
        params, objective = PRIMITIVE_CASES[name](rng)
        results.append(check_gradient(f"{name}#{i}", objective, params))
        if second_order:
            direction = {k: rng.normal(size=np.shape(v)) for k, v in params.items()}
            results.append(check_second_order(f"{name}#{i}/2nd", objective, params, direction))
    return results


def run_gradcheck_suite(n_cases: int = 100, seed: int = 0) -> list[CheckResult]:
    return primitive_checks(n_cases, seed)
