"""Differentiable primitives.

Every backward rule is itself expressed with these primitives, which is what
makes second-order gradients work.
"""
from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tensor, as_tensor, is_grad_enabled

NORM_EPS = 1e-12
LAYER_NORM_EPS = 1e-5


def _sum_to_shape(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    return sum_to(g, shape)


# -- shape plumbing ------------------------------------------------------

def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back down to ``shape``."""
    shape = tuple(shape)
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True) if axes else x.data
    data = data.reshape(shape)

    def backward(node, g):
        return (broadcast_to(g, node.parents[0].shape),)

    return Tensor._from_op(data, (x,), backward, "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape)

    def backward(node, g):
        return (sum_to(g, node.parents[0].shape),)

    return Tensor._from_op(data, (x,), backward, "broadcast_to")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(node, g):
        return (reshape(g, node.parents[0].shape),)

    return Tensor._from_op(data, (x,), backward, "reshape")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ContractError(f"transpose: expected a matrix, got shape {x.shape}")

    def backward(node, g):
        return (transpose(g),)

    return Tensor._from_op(x.data.T, (x,), backward, "transpose")


# -- elementwise ---------------------------------------------------------

def _check_broadcast(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(node, g):
        x, y = node.parents
        return _sum_to_shape(g, x.shape), _sum_to_shape(g, y.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(node, g):
        x, y = node.parents
        return _sum_to_shape(g, x.shape), _sum_to_shape(neg(g), y.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def neg(a: Tensor) -> Tensor:
    def backward(node, g):
        return (neg(g),)

    return Tensor._from_op(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(node, g):
        x, y = node.parents
        gx = _sum_to_shape(mul(g, y), x.shape) if x.requires_grad else None
        gy = _sum_to_shape(mul(g, x), y.shape) if y.requires_grad else None
        return gx, gy

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    return mul(a, power(as_tensor(b), -1.0))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(node, g):
        x = node.parents[0]
        return (mul(g, mul(power(x, exponent - 1.0), exponent)),)

    return Tensor._from_op(np.power(a.data, exponent), (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    def backward(node, g):
        return (mul(g, exp(node.parents[0])),)

    return Tensor._from_op(np.exp(a.data), (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(node, g):
        return (div(g, node.parents[0]),)

    return Tensor._from_op(np.log(a.data), (a,), backward, "log")


def tanh(a: Tensor) -> Tensor:
    def backward(node, g):
        # recompute under recording so the rule itself is differentiable
        t = tanh(node.parents[0]) if is_grad_enabled() else node.detach()
        return (mul(g, sub(1.0, mul(t, t))),)

    return Tensor._from_op(np.tanh(a.data), (a,), backward, "tanh")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a constant floor."""
    mask = (a.data > floor).astype(np.float64)

    def backward(node, g):
        return (mul(g, Tensor(mask)),)

    return Tensor._from_op(np.maximum(a.data, floor), (a,), backward, "maximum")


# -- reductions and linear algebra --------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(node, g):
        src = node.parents[0]
        if not keepdims:
            kept = tuple(1 if i in axes else n for i, n in enumerate(src.shape))
            g = reshape(g, kept)
        return (broadcast_to(g, src.shape),)

    return Tensor._from_op(np.asarray(data), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ContractError(f"mean: empty reduction over axes {axes} of shape {x.shape}")
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(node, g):
        x, y = node.parents
        gx = matmul(g, transpose(y)) if x.requires_grad else None
        gy = matmul(transpose(x), g) if y.requires_grad else None
        return gx, gy

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


# -- composite primitives ------------------------------------------------

def sq_euclidean(a, b) -> Tensor:
    """Squared Euclidean distance ``sum_i (a_i - b_i)^2``.

    Vectors give a scalar. Matrices ``(N, d)`` and ``(M, d)`` give the
    ``(N, M)`` table of pairwise distances.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 1:
        if a.shape != b.shape:
            raise ContractError(f"sq_euclidean: shapes {a.shape} and {b.shape} differ")
        diff = sub(a, b)
        return sum(mul(diff, diff))
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"sq_euclidean: shapes {a.shape} and {b.shape} are incompatible")
    n, d = a.shape
    m = b.shape[0]
    diff = sub(reshape(a, (n, 1, d)), reshape(b, (1, m, d)))
    return sum(mul(diff, diff), axis=2)


def l2_normalize(v, axis: int = -1, eps: float = NORM_EPS) -> Tensor:
    """``v / max(||v||, eps)`` along ``axis``."""
    v = as_tensor(v)
    if v.ndim == 0:
        raise ContractError("l2_normalize: needs at least one axis")
    sq = sum(mul(v, v), axis=axis, keepdims=True)
    return div(v, power(maximum(sq, eps * eps), 0.5))


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ContractError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {width}")
    centered = sub(x, mean(x, axis=-1, keepdims=True))
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    return add(mul(mul(centered, power(add(var, eps), -0.5)), gamma), beta)


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax of a ``(N, C)`` matrix."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(node, g):
        s = softmax(node.parents[0]) if is_grad_enabled() else node.detach()
        inner = sum(mul(g, s), axis=-1, keepdims=True)
        return (mul(s, sub(g, inner)),)

    return Tensor._from_op(data, (logits,), backward, "softmax")


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"softmax_cross_entropy: labels outside [0, {c})")
    target = one_hot(labels, c)
    zmax = logits.data.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits.data - zmax).sum(axis=1))
    data = np.asarray((lse - logits.data[np.arange(n), labels]).mean())

    def backward(node, g):
        z = node.parents[0]
        probs = softmax(z)
        return (mul(sub(probs, Tensor(target)), mul(g, 1.0 / n)),)

    return Tensor._from_op(data, (logits,), backward, "softmax_cross_entropy")


def accuracy(logits, labels) -> float:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels)
    return float((data.argmax(axis=1) == labels).mean())


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "tanh": tanh,
    "mean": mean,
    "sq_euclidean": sq_euclidean,
    "l2_normalize": l2_normalize,
    "layer_norm": layer_norm,
    "softmax_cross_entropy": softmax_cross_entropy,
}
