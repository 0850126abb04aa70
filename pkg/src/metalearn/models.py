"""Functional base-learner: tanh MLP encoder with per-step layer norm and a linear head.

Parameters live in an immutable :class:`ParamSet`; adapting a model means
building a new ParamSet, never mutating one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .tensor_core import ContractError, Tensor, l2_normalize, layer_norm, tanh
from .tensor_core import ops


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    output_dim: int = 32
    n_classes: int = 4
    inner_steps: int = 5
    per_step_layer_norm: bool = True
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim, self.n_classes)
        if any(int(d) < 1 for d in dims):
            raise ContractError(f"EncoderConfig: all dims must be >= 1, got {dims}")
        if self.inner_steps < 0:
            raise ContractError(f"EncoderConfig: inner_steps must be >= 0, got {self.inner_steps}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @property
    def n_ln_copies(self) -> int:
        return self.inner_steps + 1 if self.per_step_layer_norm else 1


HEAD = "head"


def layer_of(name: str) -> str:
    """Layer a parameter belongs to: ``enc0.W`` -> ``enc0``."""
    return name.split(".", 1)[0]


def is_adaptable(name: str) -> bool:
    layer = layer_of(name)
    return layer == HEAD or layer.startswith("enc")


def is_head(name: str) -> bool:
    return layer_of(name) == HEAD


@dataclass(frozen=True)
class ParamSet:
    """Named parameter tensors of one base-learner."""

    config: EncoderConfig
    tensors: Mapping[str, Tensor] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "tensors", dict(self.tensors))
        cfg = self.config
        last = cfg.layer_dims[-1][1]
        head_w = self.tensors.get("head.W")
        if head_w is not None and head_w.shape != (cfg.n_classes, last):
            raise ContractError(
                f"ParamSet: head.W has shape {head_w.shape}, expected {(cfg.n_classes, last)}")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def layer_names(self) -> list[str]:
        return [f"enc{i}" for i in range(self.config.n_layers)] + [HEAD]

    def adaptable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if is_adaptable(k)}

    def replace(self, updates: Mapping[str, Tensor]) -> "ParamSet":
        unknown = set(updates) - set(self.tensors)
        if unknown:
            raise ContractError(f"ParamSet.replace: unknown parameters {sorted(unknown)}")
        merged = dict(self.tensors)
        merged.update(updates)
        return ParamSet(self.config, merged)

    def as_leaves(self, names: Iterable[str] | None = None) -> "ParamSet":
        """Fresh graph leaves; ``names`` (default: all) require grad."""
        wanted = set(self.tensors) if names is None else set(names)
        return ParamSet(self.config, {
            k: Tensor(v.data, requires_grad=k in wanted, name=k) for k, v in self.tensors.items()})

    def detach(self) -> "ParamSet":
        return ParamSet(self.config, {k: v.detach() for k, v in self.tensors.items()})

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, {
            k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k)
            for k, v in self.tensors.items()})

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    @classmethod
    def from_arrays(cls, config: EncoderConfig, arrays: Mapping[str, np.ndarray]) -> "ParamSet":
        expected = set(_param_shapes(config))
        missing, extra = expected - set(arrays), set(arrays) - expected
        if missing or extra:
            raise ContractError(
                f"ParamSet.from_arrays: missing {sorted(missing)}, unexpected {sorted(extra)}")
        return cls(config, {k: Tensor(arrays[k], name=k) for k in _param_shapes(config)})

    def with_inner_steps(self, inner_steps: int, per_step_layer_norm: bool = True) -> "ParamSet":
        """Re-shape the layer-norm copies for a different step count.

        Existing copies are kept by index; new ones replicate the last copy.
        Used when a checkpoint trained with one layout seeds another.
        """
        cfg = self.config
        new_cfg = EncoderConfig(cfg.input_dim, cfg.hidden_dims, cfg.output_dim, cfg.n_classes,
                                inner_steps, per_step_layer_norm, cfg.init_seed)
        out = {k: v for k, v in self.tensors.items() if not k.startswith("ln")}
        for i in range(cfg.n_layers):
            for part in ("gamma", "beta"):
                for k in range(new_cfg.n_ln_copies):
                    src = min(k, cfg.n_ln_copies - 1)
                    out[f"ln{i}.{part}.{k}"] = self.tensors[f"ln{i}.{part}.{src}"]
        return ParamSet(new_cfg, {k: out[k] for k in _param_shapes(new_cfg)})


def _param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i, (fan_in, fan_out) in enumerate(config.layer_dims):
        shapes[f"enc{i}.W"] = (fan_out, fan_in)
        shapes[f"enc{i}.b"] = (fan_out,)
    for i, (_, fan_out) in enumerate(config.layer_dims):
        for k in range(config.n_ln_copies):
            shapes[f"ln{i}.gamma.{k}"] = (fan_out,)
            shapes[f"ln{i}.beta.{k}"] = (fan_out,)
    shapes["head.W"] = (config.n_classes, config.output_dim)
    shapes["head.b"] = (config.n_classes,)
    return shapes


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config: EncoderConfig, rng: np.random.Generator | None = None) -> ParamSet:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    if rng is None:
        rng = np.random.default_rng(config.init_seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith(".W"):
            fan_out, fan_in = shape
            lim = glorot_limit(fan_in, fan_out)
            arrays[name] = rng.uniform(-lim, lim, size=shape)
        elif ".gamma." in name:
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return ParamSet.from_arrays(config, arrays)


def _as_batch(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def encode(params: ParamSet, x, step_index: int = 0) -> Tensor:
    """Embed a ``(N, input_dim)`` batch using the layer-norm copy for ``step_index``.

    Each layer computes ``tanh(layer_norm(h W^T + b))``; the final tanh keeps
    every embedding entry inside (-1, 1).
    """
    cfg = params.config
    if not 0 <= step_index <= cfg.inner_steps:
        raise ContractError(f"encode: step_index {step_index} outside [0, {cfg.inner_steps}]")
    h = _as_batch(x)
    if h.ndim != 2 or h.shape[1] != cfg.input_dim:
        raise ContractError(f"encode: expected (N, {cfg.input_dim}) input, got {h.shape}")
    copy = step_index if cfg.per_step_layer_norm else 0
    for i in range(cfg.n_layers):
        pre = ops.add(ops.matmul(h, ops.transpose(params[f"enc{i}.W"])), params[f"enc{i}.b"])
        pre = layer_norm(pre, params[f"ln{i}.gamma.{copy}"], params[f"ln{i}.beta.{copy}"])
        h = tanh(pre)
    return h


def classify(params: ParamSet, embeddings: Tensor) -> Tensor:
    """Linear head: ``embeddings @ W_head^T + b_head``."""
    w, b = params["head.W"], params["head.b"]
    if embeddings.ndim != 2 or embeddings.shape[1] != w.shape[1]:
        raise ContractError(
            f"classify: embedding width {embeddings.shape[-1]} != head width {w.shape[1]}")
    return ops.add(ops.matmul(embeddings, ops.transpose(w)), b)


def forward(params: ParamSet, x, step_index: int = 0) -> Tensor:
    return classify(params, encode(params, x, step_index))


def head_from_prototypes(prototypes: Tensor, normalize: bool) -> tuple[Tensor, Tensor]:
    """Linear head equivalent to a nearest-prototype classifier.

    Row ``c`` of the weight is ``2 mu_c`` and its bias ``-mu_c . mu_c``;
    with ``normalize`` the prototypes are first scaled to unit length.
    """
    mu = l2_normalize(prototypes) if normalize else prototypes
    weight = ops.mul(mu, 2.0)
    bias = ops.neg(ops.sum(ops.mul(mu, mu), axis=1))
    return weight, bias


def set_head_from_prototypes(params: ParamSet, prototypes, normalize: bool) -> ParamSet:
    """Return ``params`` with its head built from per-class prototypes.

    ``prototypes`` is a ``(C, d)`` tensor or a mapping ``class -> (d,) tensor``.
    The head keeps its graph to the prototypes, so later gradients flow
    through it unless the caller detaches.
    """
    n_classes = params.config.n_classes
    if isinstance(prototypes, Mapping):
        absent = [c for c in range(n_classes) if c not in prototypes]
        if absent:
            raise ContractError(f"set_head_from_prototypes: no prototype for classes {absent}")
        rows = [ops.reshape(prototypes[c], (1, -1)) for c in range(n_classes)]
        stacked = rows[0]
        for r in rows[1:]:
            stacked = _vstack(stacked, r)
        prototypes = stacked
    if prototypes.shape[0] != n_classes:
        absent = list(range(prototypes.shape[0], n_classes))
        raise ContractError(
            f"set_head_from_prototypes: got {prototypes.shape[0]} prototypes for {n_classes} "
            f"classes; absent classes {absent}")
    weight, bias = head_from_prototypes(prototypes, normalize)
    return params.replace({"head.W": weight, "head.b": bias})


def _vstack(a: Tensor, b: Tensor) -> Tensor:
    # rows stacked via selection matrices keep the graph inside the primitive set
    n, m = a.shape[0], b.shape[0]
    top = np.vstack([np.eye(n), np.zeros((m, n))])
    bottom = np.vstack([np.zeros((n, m)), np.eye(m)])
    return ops.add(ops.matmul(Tensor(top), a), ops.matmul(Tensor(bottom), b))
