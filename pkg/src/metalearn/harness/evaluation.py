"""Meta-test protocol and multi-seed evaluation reports."""
from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..episodes import LabeledBatch, stratified_sample
from ..episodes.sampling import stable_hash
from ..meta_algorithms import ALGORITHMS, fit_support
from ..models import classify, encode
from ..tensor_core import no_grad
from .audit import IdAudit
from .checkpoint import NON_EPISODIC, ZERO_SHOT, Checkpoint
from .config import ConfigError, RunConfig
from .data import TaskData

PROTOCOL_SUPPORT = 16


class ProtocolError(ValueError):
    """The evaluation protocol cannot be followed (e.g. too little support data)."""


@dataclass(frozen=True)
class TestOutcome:
    accuracy: float
    loss: float
    n_query: int


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_p[np.arange(len(labels)), labels].mean())


def score(logits: np.ndarray, labels: np.ndarray) -> TestOutcome:
    acc = float((logits.argmax(axis=1) == labels).mean())
    return TestOutcome(acc, cross_entropy(logits, labels), len(labels))


def support_indices(task: TaskData, group: str, seed: int, size: int) -> np.ndarray:
    """Seed-indexed stratified support drawn from the group's training records."""
    if size < PROTOCOL_SUPPORT:
        raise ProtocolError(f"eval.support_size={size}: the protocol needs {PROTOCOL_SUPPORT} samples")
    train = task.splits[group].train
    if train.size < size:
        raise ProtocolError(f"group {group!r}: {train.size} training records, support needs {size}")
    rng = np.random.default_rng([seed, stable_hash(group), 2])
    return np.sort(stratified_sample(train, task.dataset.labels[train], size, rng))


def predictor(ck: Checkpoint, support: LabeledBatch | None, config: RunConfig):
    steps = config.eval.test_finetune_steps
    if ck.kind == ZERO_SHOT:
        params = ck.params

        def predict(x):
            with no_grad():
                return classify(params, encode(params, x, 0)).data

        return predict
    if ck.kind == NON_EPISODIC:
        algorithm = None
    elif ck.kind in ALGORITHMS:
        algorithm = ALGORITHMS[ck.kind]
    else:
        raise ConfigError(f"checkpoint kind {ck.kind!r} is not evaluable")
    learner = fit_support(algorithm, ck.params, ck.lrs, support, steps,
                          use_simpleshot=config.train.simpleshot,
                          simpleshot_centering=config.train.proto_centering)
    return learner.logits


def run_meta_test(ck: Checkpoint, group: str, config: RunConfig, seed: int, task: TaskData,
                  audit: IdAudit | None = None, phase: str = "meta-test") -> TestOutcome:
    """Adapt on a 16-sample support from ``group``'s training data, score its whole test split.

    Zero-shot checkpoints skip the support entirely.
    """
    support = None
    if ck.kind != ZERO_SHOT:
        s_idx = support_indices(task, group, seed, config.eval.support_size)
        support = task.batch(s_idx)
        if audit is not None:
            audit.record(phase, group, support.ids, seed=seed)
    query = task.batch(task.splits[group].test)
    if audit is not None:
        audit.record(phase, group, query.ids, seed=seed, role="score")
    return score(predictor(ck, support, config)(query.x), query.y)


def meta_test(ck: Checkpoint, target_group: str, config: RunConfig, seed: int, task: TaskData,
              audit: IdAudit | None = None) -> float:
    return run_meta_test(ck, target_group, config, seed, task, audit).accuracy


@dataclass(frozen=True)
class GroupScore:
    group: str
    accuracies: tuple[float, ...]
    losses: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def loss(self) -> float:
        return float(np.mean(self.losses))


@dataclass
class EvalReport:
    """Per-group accuracy over seeds and the unweighted mean across groups."""

    seeds: tuple[int, ...]
    groups: dict[str, GroupScore]
    trace: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for g in self.groups.values():
            if len(g.accuracies) != len(self.seeds):
                raise ValueError(f"EvalReport: group {g.group} has {len(g.accuracies)} scores "
                                 f"for {len(self.seeds)} seeds")

    @property
    def delta(self) -> float:
        return float(np.mean([g.mean for g in self.groups.values()]))

    @property
    def delta_std(self) -> float:
        """Spread over seeds of the per-seed mean across groups."""
        per_seed = np.mean([g.accuracies for g in self.groups.values()], axis=0)
        return float(np.std(per_seed))

    @property
    def loss(self) -> float:
        return float(np.mean([g.loss for g in self.groups.values()]))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("group,mean,std\n")
        for name, g in self.groups.items():
            out.write(f"{name},{g.mean!r},{g.std!r}\n")
        out.write(f"delta,{self.delta!r},{self.delta_std!r}\n")
        return out.getvalue()


def evaluate_with_seeds(ck: Checkpoint, groups: Sequence[str], config: RunConfig, task: TaskData,
                        seeds: Sequence[int] | None = None, audit: IdAudit | None = None,
                        phase: str = "meta-test") -> EvalReport:
    """``run_meta_test`` for every (group, seed); cells run on ``config.threads`` threads."""
    seeds = tuple(config.eval.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("eval.seeds: at least one seed is required")
    cells = [(g, s) for g in groups for s in seeds]

    def run(cell):
        return run_meta_test(ck, cell[0], config, cell[1], task, audit, phase)

    if config.threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(run, cells))
    else:
        outcomes = [run(c) for c in cells]
    by_cell = dict(zip(cells, outcomes))
    scores = {g: GroupScore(g, tuple(by_cell[g, s].accuracy for s in seeds),
                            tuple(by_cell[g, s].loss for s in seeds)) for g in groups}
    return EvalReport(seeds, scores)
