"""Inner-loop SGD with learnable per-layer, per-step rates; Ranger outer optimizer; cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .models import HEAD, ParamSet, is_adaptable, layer_of
from .tensor_core import ContractError, GradMap, NumericError, Tensor
from .tensor_core import ops

LR_FLOOR = 1e-8


@dataclass
class LrTable:
    """Learnable inner-loop rates ``rates[layer][step]``, one scalar Tensor each."""

    rates: dict[str, list[Tensor]]
    head_multiplier: float = 1.0

    @classmethod
    def initial(cls, layers, inner_steps: int, inner_lr: float,
                head_multiplier: float = 1.0) -> "LrTable":
        rates = {}
        for layer in layers:
            value = inner_lr * head_multiplier if layer == HEAD else inner_lr
            rates[layer] = [Tensor(value, name=f"lr.{layer}.{k}") for k in range(inner_steps)]
        return cls(rates, head_multiplier)

    @classmethod
    def for_params(cls, params: ParamSet, inner_lr: float, head_multiplier: float = 1.0
                   ) -> "LrTable":
        return cls.initial(params.layer_names(), params.config.inner_steps, inner_lr,
                           head_multiplier)

    @property
    def n_steps(self) -> int:
        return len(next(iter(self.rates.values()), []))

    @property
    def layers(self) -> list[str]:
        return list(self.rates)

    def rate(self, layer: str, step: int) -> Tensor:
        if not 0 <= step < self.n_steps:
            raise ContractError(f"LrTable: step {step} outside [0, {self.n_steps})")
        return self.rates[layer][step]

    def named(self) -> dict[str, Tensor]:
        return {f"lr.{layer}.{k}": t for layer, row in self.rates.items() for k, t in enumerate(row)}

    def as_leaves(self, requires_grad: bool = True) -> "LrTable":
        return LrTable({layer: [Tensor(t.data, requires_grad=requires_grad, name=t.name)
                                for t in row] for layer, row in self.rates.items()},
                       self.head_multiplier)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named().items()}

    def with_values(self, arrays: Mapping[str, np.ndarray]) -> "LrTable":
        return LrTable({layer: [Tensor(arrays.get(f"lr.{layer}.{k}", t.data), name=t.name)
                                for k, t in enumerate(row)] for layer, row in self.rates.items()},
                       self.head_multiplier)


def sgd_inner_step(params, grads: GradMap, lrs: LrTable, step: int):
    """One inner update ``theta' = theta - alpha[layer][step] * g``.

    Works on a :class:`ParamSet` or a plain ``name -> Tensor`` dict. Only
    parameters present in ``grads`` move; layer-norm copies are never
    adaptable and are refused.
    """
    if not 0 <= step < lrs.n_steps:
        raise ContractError(f"sgd_inner_step: step {step} outside [0, {lrs.n_steps})")
    fixed = [k for k in grads if not is_adaptable(k)]
    if isinstance(params, ParamSet) and fixed:
        raise ContractError(f"sgd_inner_step: parameters {fixed} are not inner-loop adaptable")
    updates = {}
    for name, g in grads.items():
        alpha = lrs.rate(layer_of(name), step)
        updates[name] = ops.sub(params[name], ops.mul(alpha, g))
    if isinstance(params, ParamSet):
        return params.replace(updates)
    out = dict(params)
    out.update(updates)
    return out


def cosine_anneal(t: int, total: int, eta_max: float) -> float:
    """``0.5 * eta_max * (1 + cos(pi t / T))``, no restarts."""
    if total < 1:
        raise ContractError(f"cosine_anneal: T must be >= 1, got {total}")
    if not 0 <= t <= total:
        raise ContractError(f"cosine_anneal: t={t} outside [0, {total}]")
    return 0.5 * eta_max * (1.0 + math.cos(math.pi * t / total))


# -- Ranger ------------------------------------------------------------------

@dataclass
class OuterOptState:
    """Moments, step counter and lookahead buffers of the Ranger optimizer."""

    lr: float = 3e-5
    betas: tuple[float, float] = (0.95, 0.999)
    eps: float = 1e-5
    sync_period: int = 5
    lookahead_alpha: float = 0.5
    rect_threshold: float = 4.0
    t: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    slow: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "OuterOptState":
        return replace(self, exp_avg={k: v.copy() for k, v in self.exp_avg.items()},
                       exp_avg_sq={k: v.copy() for k, v in self.exp_avg_sq.items()},
                       slow={k: v.copy() for k, v in self.slow.items()})

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, buf in (("m", self.exp_avg), ("v", self.exp_avg_sq), ("slow", self.slow)):
            out.update({f"{prefix}:{k}": v.copy() for k, v in buf.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], **hyper) -> "OuterOptState":
        bufs: dict[str, dict[str, np.ndarray]] = {"m": {}, "v": {}, "slow": {}}
        for key, value in arrays.items():
            prefix, name = key.split(":", 1)
            bufs[prefix][name] = np.array(value, dtype=np.float64)
        return cls(exp_avg=bufs["m"], exp_avg_sq=bufs["v"], slow=bufs["slow"], **hyper)


def centralize(g: np.ndarray) -> np.ndarray:
    """Subtract each output row's mean from matrix gradients; vectors pass through."""
    if g.ndim < 2:
        return g
    return g - g.mean(axis=tuple(range(1, g.ndim)), keepdims=True)


def rectification(t: int, beta2: float) -> tuple[float, float]:
    """``(rho_t, r_t)`` of the variance-rectified Adam step; ``r_t`` is nan when undefined."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2 ** t
    rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
    if rho_t <= 4.0:
        return rho_t, float("nan")
    r_t = math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
    return rho_t, r_t


def ranger_step(state: OuterOptState, params: Mapping[str, np.ndarray],
                grads: Mapping[str, np.ndarray], lr: float | Mapping[str, float] | None = None
                ) -> tuple[OuterOptState, dict[str, np.ndarray]]:
    """One Ranger update: gradient centralization, rectified Adam, lookahead.

    Pure: returns a new state and new parameter arrays. ``lr`` overrides the
    state's base rate, either globally or per parameter name.
    """
    missing = set(params) - set(grads)
    if missing:
        raise ContractError(f"ranger_step: no gradient for {sorted(missing)}")
    for name in params:
        g = np.asarray(grads[name])
        if not np.isfinite(g).all():
            raise NumericError(f"ranger_step: non-finite gradient for '{name}'", node=name)

    new = state.copy()
    new.t += 1
    beta1, beta2 = new.betas
    _, r_t = rectification(new.t, beta2)
    bias1 = 1.0 - beta1 ** new.t
    bias2 = 1.0 - beta2 ** new.t

    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = centralize(np.asarray(grads[name], dtype=np.float64))
        m = new.exp_avg.get(name, np.zeros_like(p))
        v = new.exp_avg_sq.get(name, np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new.exp_avg[name], new.exp_avg_sq[name] = m, v
        step_lr = _lr_for(lr, name, new.lr)
        if math.isnan(r_t):
            # rectification term undefined: plain momentum step
            update = (m / bias1)
        else:
            update = r_t * (m / bias1) / (np.sqrt(v / bias2) + new.eps)
        fast = p - step_lr * update
        if name not in new.slow:
            new.slow[name] = p.copy()
        out[name] = fast

    if new.t % new.sync_period == 0:
        for name in out:
            slow = new.slow[name] + new.lookahead_alpha * (out[name] - new.slow[name])
            new.slow[name] = slow
            out[name] = slow.copy()
    return new, out


def _lr_for(lr, name: str, default: float) -> float:
    if lr is None:
        return default
    if isinstance(lr, Mapping):
        return float(lr.get(name, default))
    return float(lr)
