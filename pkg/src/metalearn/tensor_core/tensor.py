"""Tensor type and the reverse-mode gradient engine.

Backward rules are written with Tensor operations, so a backward pass run
with ``create_graph=True`` records its own graph and the returned gradients
can be differentiated again.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class NumericError(ArithmeticError):
    """A NaN or Inf showed up where a finite value is required."""

    def __init__(self, message: str, node: str | None = None):
        super().__init__(message)
        self.node = node


_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


@contextmanager
def enable_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _local.grad_enabled = True
    try:
        yield
    finally:
        _local.grad_enabled = previous


BackwardFn = Callable[["Tensor", "Tensor"], Sequence["Tensor | None"]]


class Tensor:
    """An n-dimensional float64 array that may take part in a graph."""

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...],
                 backward_fn: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = parents
            out.backward_fn = backward_fn
        else:
            out.requires_grad = False
            out.parents = ()
            out.backward_fn = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
        out.op = "leaf"
        out.name = self.name
        return out

    def label(self) -> str:
        return self.name if self.name else self.op

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic sugar (implemented in ops) -------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


GradMap = dict  # name -> Tensor, same shape as the parameter


def _topological_order(root: Tensor, targets: set[int]) -> list[Tensor]:
    """Nodes between ``root`` and ``targets`` in reverse topological order.

    Traversal stops at target nodes, and only nodes with at least one
    target among their ancestors are kept.
    """
    reaches: dict[int, bool] = {}
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            hit = key in targets or any(
                reaches.get(id(p), False) for p in node.parents)
            reaches[key] = hit
            if hit:
                order.append(node)
            continue
        if key in reaches:
            continue
        if key in targets or not node.parents:
            reaches[key] = key in targets
            if key in targets:
                order.append(node)
            continue
        reaches[key] = False  # provisional, overwritten on exit
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in reaches and parent.requires_grad:
                stack.append((parent, False))
    order.reverse()
    return order


def grad(loss: Tensor, params: Mapping[str, Tensor], create_graph: bool = False,
         retain_graph: bool | None = None) -> GradMap:
    """Reverse-mode gradients of a scalar ``loss`` w.r.t. named ``params``.

    Parameters not reachable from ``loss`` get an all-zero gradient. With
    ``create_graph`` the returned tensors carry a graph of their own.
    Unless retained, the traversed part of the graph is released.
    """
    if loss.size != 1:
        raise ContractError(f"grad: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError(f"grad: loss is {loss.item()}", node=loss.label())
    if retain_graph is None:
        retain_graph = create_graph

    targets = {id(t): t for t in params.values()}
    grads: dict[int, Tensor] = {}
    if loss.requires_grad or id(loss) in targets:
        order = _topological_order(loss, set(targets))
        grads[id(loss)] = Tensor(np.ones_like(loss.data))
        context = enable_grad() if create_graph else no_grad()
        with context:
            for node in order:
                g = grads.get(id(node))
                if g is None or id(node) in targets or node.backward_fn is None:
                    continue
                parent_grads = node.backward_fn(node, g)
                for parent, pg in zip(node.parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    if not np.isfinite(pg.data).all():
                        raise NumericError(
                            f"grad: non-finite gradient flowing out of '{node.label()}'",
                            node=node.label())
                    prev = grads.get(id(parent))
                    grads[id(parent)] = pg if prev is None else prev + pg
                if not retain_graph:
                    del grads[id(node)]
                    node.parents = ()
                    node.backward_fn = None

    out: GradMap = {}
    for name, p in params.items():
        g = grads.get(id(p))
        if g is None:
            g = Tensor(np.zeros_like(p.data))
        elif not create_graph and g.requires_grad:
            g = g.detach()
        out[name] = g
    return out
