"""Meta-update rules: ProtoNet, MAML / first-order MAML, Reptile and ProtoMAML(n).

Every optimization-based learner shares one inner loop. The first- and
second-order variants differ only in whether the support-loss gradient
stays on the graph:

* second order: ``theta^(k+1) = theta^(k) - alpha * g(theta^(k))`` with ``g`` differentiable;
* first order:  ``theta^(k+1) = theta^(k) - alpha * stopgrad(g)``.

The meta-gradient is ``d L_query(theta^(K)) / d(theta, alpha)`` in both
cases. Under first order, ``d theta^(K) / d theta`` is the identity, so the
theta part equals the gradient at the adapted parameters, while the
inner-loop rates still receive gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

from .episodes import Episode, LabeledBatch
from .models import ParamSet, classify, encode, head_from_prototypes, is_adaptable, is_head, layer_of
from .optimizers import LrTable, sgd_inner_step
from .tensor_core import (
    ContractError,
    NumericError,
    Tensor,
    grad,
    l2_normalize,
    no_grad,
    softmax_cross_entropy,
    sq_euclidean,
)
from .tensor_core import ops

Order = Literal["first", "second"]


# -- prototypes ----------------------------------------------------------------

def compute_prototypes(embeddings: Tensor, labels, n_classes: int | None = None) -> Tensor:
    """Per-class mean embedding as a ``(C, d)`` tensor (differentiable)."""
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)[:n_classes]
    empty = [c for c in range(n_classes) if counts[c] == 0]
    if empty:
        raise ContractError(f"compute_prototypes: no support samples for classes {empty}")
    averaging = np.zeros((n_classes, labels.size))
    averaging[labels, np.arange(labels.size)] = 1.0
    averaging /= counts[:, None]
    return ops.matmul(Tensor(averaging), embeddings)


def simpleshot(query: Tensor, support: Tensor) -> tuple[Tensor, Tensor]:
    """Center both sets on the support mean, then L2-normalize each embedding."""
    center = ops.mean(support, axis=0)
    return l2_normalize(ops.sub(query, center)), l2_normalize(ops.sub(support, center))


def protonet_logits(query_embeddings: Tensor, support_embeddings: Tensor, support_labels,
                    use_simpleshot: bool = True, n_classes: int | None = None) -> Tensor:
    """Negative squared Euclidean distance of each query to each class prototype."""
    if use_simpleshot:
        query_embeddings, support_embeddings = simpleshot(query_embeddings, support_embeddings)
    protos = compute_prototypes(support_embeddings, support_labels, n_classes)
    return ops.neg(sq_euclidean(query_embeddings, protos))


# -- generic inner loop ----------------------------------------------------------

@dataclass
class AdaptResult:
    initial: ParamSet | dict
    adapted: ParamSet | dict
    support_losses: list[float]
    graph_retained: bool

    @property
    def steps(self) -> int:
        return len(self.support_losses)


def _adaptable_names(params, lrs: LrTable) -> list[str]:
    if isinstance(params, ParamSet):
        return [k for k in params.names() if is_adaptable(k)]
    return [k for k in params if layer_of(k) in lrs.rates]


def adapt(params, support_loss: Callable[[object, int], Tensor], lrs: LrTable, steps: int,
          order: Order = "first", track_outer: bool = True) -> AdaptResult:
    """Run ``steps`` inner SGD updates on ``support_loss(params, step)``.

    ``track_outer=False`` cuts the graph between steps: the result is only
    used for prediction (meta-test, Reptile), never differentiated.
    Steps past the rate table reuse its last column.
    """
    if order not in ("first", "second"):
        raise ContractError(f"adapt: order must be 'first' or 'second', got {order!r}")
    if steps > 0 and lrs.n_steps == 0:
        raise ContractError("adapt: the rate table has no steps")
    second = order == "second" and track_outer
    initial = params
    losses: list[float] = []
    names = _adaptable_names(params, lrs)
    for k in range(steps):
        if not track_outer:
            params = _releaf(params, names)
        try:
            loss = support_loss(params, k)
            g = grad(loss, {n: params[n] for n in names}, create_graph=second, retain_graph=second)
        except NumericError as exc:
            raise NumericError(f"inner step {k}: {exc}", node=exc.node) from None
        losses.append(loss.item())
        rate_step = min(k, lrs.n_steps - 1)
        if track_outer:
            params = sgd_inner_step(params, g, lrs, rate_step)
        else:
            with no_grad():
                params = sgd_inner_step(params, g, lrs, rate_step)
    return AdaptResult(initial, params, losses, second)


def _releaf(params, names):
    fresh = {n: Tensor(params[n].data, requires_grad=True, name=n) for n in names}
    if isinstance(params, ParamSet):
        return params.detach().replace(fresh)
    out = {k: v.detach() for k, v in params.items()}
    out.update(fresh)
    return out


@dataclass
class MetaTask:
    """Losses defining one episode for the generic meta-gradient."""

    support_loss: Callable[[object, int], Tensor]
    query_loss: Callable[[object], Tensor]
    init: Callable[[object], object] | None = None


@dataclass
class MetaGrad:
    """Meta-gradient averaged over the episodes of a meta-batch."""

    grads: dict[str, np.ndarray]
    lr_grads: dict[str, np.ndarray]
    n_episodes: int
    query_loss: float = float("nan")
    query_accuracy: float = float("nan")
    support_losses: list[float] = field(default_factory=list)


def maml_meta_grad(theta, lrs: LrTable, tasks: Sequence[MetaTask], steps: int, order: Order,
                   outer_names: Sequence[str] | None = None, learn_lrs: bool = True) -> MetaGrad:
    """Average over ``tasks`` of ``d L_query(theta^(K)) / d theta`` (and ``d / d alpha``).

    ``theta`` maps names to leaf tensors that require grad; ``outer_names``
    restricts which of them receive a meta-gradient.
    """
    if not tasks:
        raise ContractError("maml_meta_grad: need at least one episode")
    if outer_names is None:
        outer_names = list(theta.names() if isinstance(theta, ParamSet) else theta)
    lr_leaves = lrs.as_leaves(requires_grad=learn_lrs)
    lr_named = lr_leaves.named() if learn_lrs else {}
    sums: dict[str, np.ndarray] = {}
    total_loss = 0.0
    all_support: list[float] = []
    for task in tasks:
        start = task.init(theta) if task.init is not None else theta
        result = adapt(start, task.support_loss, lr_leaves, steps, order)
        if result.graph_retained != (order == "second"):
            raise ContractError("maml_meta_grad: adaptation graph does not match the order")
        loss = task.query_loss(result.adapted)
        targets = {n: theta[n] for n in outer_names}
        targets.update(lr_named)
        g = grad(loss, targets)
        for name, value in g.items():
            sums[name] = sums[name] + value.data if name in sums else value.data.copy()
        total_loss += loss.item()
        all_support.extend(result.support_losses)
    b = len(tasks)
    grads = {n: sums[n] / b for n in outer_names}
    lr_grads = {n: sums[n] / b for n in lr_named}
    return MetaGrad(grads, lr_grads, b, total_loss / b, support_losses=all_support)


def reptile_meta_grad(theta: Mapping[str, Tensor], adapted: Sequence[Mapping[str, Tensor]]
                      ) -> dict[str, np.ndarray]:
    """``(1/B) sum_l (theta - theta_l)``: stepping against it moves toward the adapted weights."""
    if not adapted:
        raise ContractError("reptile_meta_grad: need at least one adapted parameter set")
    out = {}
    for name in theta:
        base = theta[name].data
        acc = np.zeros_like(base)
        for params in adapted:
            if params[name].shape != base.shape:
                raise ContractError(
                    f"reptile_meta_grad: shape mismatch for {name}: {params[name].shape} vs {base.shape}")
            acc += base - params[name].data
        out[name] = acc / len(adapted)
    return out


# -- model-level operations ---------------------------------------------------------

HeadInit = Literal["plain", "normalized"] | None


@dataclass(frozen=True)
class Algorithm:
    name: str
    family: Literal["protonet", "maml", "reptile"]
    order: Order = "first"
    head_init: HeadInit = None
    learns_lrs: bool = True

    @property
    def uses_head(self) -> bool:
        """Whether the meta-learned head is part of theta."""
        return self.family in ("maml", "reptile") and self.head_init is None


ALGORITHMS: dict[str, Algorithm] = {
    "protonet": Algorithm("protonet", "protonet", learns_lrs=False),
    "maml": Algorithm("maml", "maml", "second"),
    "fomaml": Algorithm("fomaml", "maml", "first"),
    "reptile": Algorithm("reptile", "reptile", "first", learns_lrs=False),
    "protomaml": Algorithm("protomaml", "maml", "second", "plain"),
    "protomaml_n": Algorithm("protomaml_n", "maml", "second", "normalized"),
    "fo_protomaml": Algorithm("fo_protomaml", "maml", "first", "plain"),
    "fo_protomaml_n": Algorithm("fo_protomaml_n", "maml", "first", "normalized"),
}


def get_algorithm(name: str) -> Algorithm:
    try:
        return ALGORITHMS[name]
    except KeyError:
        raise ContractError(f"unknown algorithm {name!r}; choose from {sorted(ALGORITHMS)}") from None


def _ln_step(params: ParamSet, step: int) -> int:
    return min(step, params.config.inner_steps)


def batch_loss(params: ParamSet, batch: LabeledBatch, step: int) -> Tensor:
    logits = classify(params, encode(params, batch.x, _ln_step(params, step)))
    return softmax_cross_entropy(logits, batch.y)


def inner_loop_adapt(theta: ParamSet, support: LabeledBatch, steps: int, lrs: LrTable,
                     order: Order = "first", track_outer: bool = True) -> AdaptResult:
    """Adapt encoder and head on a support batch, one layer-norm copy per step."""
    return adapt(theta, lambda p, k: batch_loss(p, support, k), lrs, steps, order, track_outer)


def protomaml_episode_init(theta: ParamSet, support: LabeledBatch, normalize: bool,
                           order: Order = "second", simpleshot_centering: bool = False) -> ParamSet:
    """Replace the head with the prototype-equivalent linear layer for this support set.

    Under first order the prototypes are built off the graph, so no outer
    gradient flows through the head construction.
    """
    n_classes = theta.config.n_classes

    def build():
        emb = encode(theta, support.x, 0)
        if simpleshot_centering:
            emb = l2_normalize(ops.sub(emb, ops.mean(emb, axis=0)))
        return head_from_prototypes(compute_prototypes(emb, support.y, n_classes), normalize)

    if order == "first":
        with no_grad():
            weight, bias = build()
    else:
        weight, bias = build()
    return theta.replace({"head.W": weight, "head.b": bias})


def outer_param_names(algorithm: Algorithm, params: ParamSet) -> list[str]:
    if algorithm.uses_head:
        return params.names()
    return [n for n in params.names() if not is_head(n)]


def _episode_task(algorithm: Algorithm, episode: Episode, simpleshot_centering: bool) -> MetaTask:
    init = None
    if algorithm.head_init is not None:
        normalize = algorithm.head_init == "normalized"

        def head_init(theta):
            return protomaml_episode_init(theta, episode.support, normalize, algorithm.order,
                                          simpleshot_centering)

        init = head_init

    def query_loss(params):
        return batch_loss(params, episode.query, params.config.inner_steps)

    return MetaTask(lambda p, k: batch_loss(p, episode.support, k), query_loss, init)


def meta_update_maml(theta: ParamSet, lrs: LrTable, episodes: Sequence[Episode],
                     order: Order, algorithm: Algorithm | None = None,
                     simpleshot_centering: bool = False) -> MetaGrad:
    """Meta-gradient of MAML / first-order MAML (and ProtoMAML when the algorithm says so)."""
    if algorithm is None:
        algorithm = ALGORITHMS["maml" if order == "second" else "fomaml"]
    names = outer_param_names(algorithm, theta)
    leaves = theta.as_leaves(names)
    tasks = [_episode_task(algorithm, ep, simpleshot_centering) for ep in episodes]
    return maml_meta_grad(leaves, lrs, tasks, theta.config.inner_steps, order, names,
                          learn_lrs=algorithm.learns_lrs)


def meta_update_reptile(theta: ParamSet, adapted: Sequence[ParamSet]) -> MetaGrad:
    """Reptile meta-gradient over the encoder and head (layer-norm copies do not move)."""
    names = [n for n in theta.names() if is_adaptable(n)]
    grads = reptile_meta_grad({n: theta[n] for n in names},
                              [{n: p[n] for n in names} for p in adapted])
    return MetaGrad(grads, {}, len(adapted))


def reptile_step(theta: ParamSet, lrs: LrTable, episodes: Sequence[Episode]) -> MetaGrad:
    adapted = [inner_loop_adapt(theta, ep.support, theta.config.inner_steps, lrs,
                                track_outer=False).adapted for ep in episodes]
    return meta_update_reptile(theta, adapted)


def protonet_meta_grad(theta: ParamSet, episodes: Sequence[Episode], use_simpleshot: bool = True
                       ) -> MetaGrad:
    """Query cross-entropy of nearest-prototype classification, averaged over episodes."""
    names = [n for n in theta.names() if not is_head(n)]
    leaves = theta.as_leaves(names)
    n_classes = theta.config.n_classes
    sums: dict[str, np.ndarray] = {}
    total = 0.0
    for ep in episodes:
        logits = protonet_logits(encode(leaves, ep.query.x, 0), encode(leaves, ep.support.x, 0),
                                 ep.support.y, use_simpleshot, n_classes)
        loss = softmax_cross_entropy(logits, ep.query.y)
        g = grad(loss, {n: leaves[n] for n in names})
        for n, v in g.items():
            sums[n] = sums[n] + v.data if n in sums else v.data.copy()
        total += loss.item()
    b = len(episodes)
    return MetaGrad({n: sums[n] / b for n in names}, {}, b, total / b)


def meta_gradient(algorithm: Algorithm, theta: ParamSet, lrs: LrTable, episodes: Sequence[Episode],
                  use_simpleshot: bool = True, simpleshot_centering: bool = False) -> MetaGrad:
    """Dispatch to the MetaUpdate of ``algorithm``."""
    if algorithm.family == "protonet":
        return protonet_meta_grad(theta, episodes, use_simpleshot)
    if algorithm.family == "reptile":
        return reptile_step(theta, lrs, episodes)
    return meta_update_maml(theta, lrs, episodes, algorithm.order, algorithm, simpleshot_centering)


# -- adaptation for evaluation ----------------------------------------------------------

@dataclass
class AdaptedLearner:
    """A learner fitted to one support set, ready to score query batches."""

    predict_logits: Callable[[np.ndarray], np.ndarray]
    support_losses: list[float]

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.predict_logits(x)


def fit_support(algorithm: Algorithm | None, theta: ParamSet, lrs: LrTable, support: LabeledBatch,
                steps: int, use_simpleshot: bool = True, simpleshot_centering: bool = False
                ) -> AdaptedLearner:
    """Adapt to a support set without tracking outer gradients.

    ``algorithm=None`` is plain fine-tuning of the whole model (the
    non-episodic baseline); ProtoNet recomputes prototypes only.
    """
    if algorithm is not None and algorithm.family == "protonet":
        with no_grad():
            s_emb = encode(theta, support.x, 0)

        def predict(x):
            with no_grad():
                return protonet_logits(encode(theta, x, 0), s_emb, support.y, use_simpleshot,
                                       theta.config.n_classes).data

        return AdaptedLearner(predict, [])

    start = theta
    if algorithm is not None and algorithm.head_init is not None:
        start = protomaml_episode_init(theta.detach(), support, algorithm.head_init == "normalized",
                                       "first", simpleshot_centering)
    result = inner_loop_adapt(start, support, steps, lrs, track_outer=False)
    adapted = result.adapted.detach()
    ln_step = _ln_step(adapted, steps)

    def predict(x):
        with no_grad():
            return classify(adapted, encode(adapted, x, ln_step)).data

    return AdaptedLearner(predict, result.support_losses)


def initial_logits(theta: ParamSet, support: LabeledBatch, query_x: np.ndarray, normalize: bool,
                   normalize_queries: bool = False) -> np.ndarray:
    """Pre-adaptation logits of a prototype-initialized head (for logit-range reports)."""
    with no_grad():
        head_params = protomaml_episode_init(theta, support, normalize, "first")
        emb = encode(head_params, query_x, 0)
        if normalize_queries:
            emb = l2_normalize(emb)
        return classify(head_params, emb).data
