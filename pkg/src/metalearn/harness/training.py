"""Episodic meta-training, the non-episodic baseline and the zero-shot baseline."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..episodes import Dataset, EpisodeSampler, stratified_split
from ..episodes.sampling import stable_hash
from ..meta_algorithms import batch_loss, get_algorithm, meta_gradient
from ..models import ParamSet, init_params
from ..optimizers import LR_FLOOR, LrTable, OuterOptState, cosine_anneal, ranger_step
from ..tensor_core import NumericError, Tensor, grad
from .audit import IdAudit
from .checkpoint import NON_EPISODIC, ZERO_SHOT, Checkpoint, load_checkpoint
from .config import ConfigError, RunConfig
from .data import TaskData, encoder_config
from .evaluation import EvalReport, evaluate_with_seeds, predictor, run_meta_test, score


class TrainingDiverged(ArithmeticError):
    """Training hit a non-finite value; carries the last good checkpoint."""

    def __init__(self, message: str, checkpoint: Checkpoint, trace: list[dict]):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.trace = trace


class EarlyStopper:
    """Tracks the best dev metric; ``should_stop`` after ``patience`` epochs without improvement."""

    def __init__(self, patience: int, mode: str = "min"):
        if patience < 1:
            raise ConfigError(f"train.patience: must be >= 1, got {patience}")
        if mode not in ("min", "max"):
            raise ValueError(f"EarlyStopper: mode must be 'min' or 'max', got {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best: float | None = None
        self.best_epoch: int | None = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value``; return True when it is a new best."""
        better = self.best is None or (value < self.best if self.mode == "min" else value > self.best)
        if better and math.isfinite(value):
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[dict]
    best_epoch: int
    epochs_run: int
    lr_clamp_events: int = 0
    group_counts: dict[str, int] = field(default_factory=dict)

    def metrics_jsonl(self) -> str:
        return metrics_jsonl(self.trace)


def metrics_jsonl(trace: Sequence[dict]) -> str:
    keys = ("epoch", "dev_loss", "dev_acc_mean", "dev_acc_std", "lr")
    return "".join(json.dumps({k: row[k] for k in keys}) + "\n" for row in trace)


def write_metrics(trace: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text(metrics_jsonl(trace), encoding="utf-8")


def _stopper(config: RunConfig) -> EarlyStopper:
    mode = "min" if config.train.early_stop_metric == "loss" else "max"
    return EarlyStopper(config.train.patience, mode)


def _dev_row(epoch: int, report: EvalReport, lr: float, dev: str) -> dict:
    g = report.groups[dev]
    return {"epoch": epoch, "dev_loss": g.loss, "dev_acc_mean": g.mean, "dev_acc_std": g.std,
            "lr": lr}


def _metric(row: dict, config: RunConfig) -> float:
    return row["dev_loss"] if config.train.early_stop_metric == "loss" else row["dev_acc_mean"]


def initial_parameters(config: RunConfig, dataset: Dataset) -> ParamSet:
    """Glorot init, or the parameters of ``init_from_checkpoint`` re-shaped to this run's layout."""
    enc = encoder_config(config, dataset)
    if not config.init_from_checkpoint:
        return init_params(enc, np.random.default_rng([config.seed, 0]))
    loaded = load_checkpoint(config.init_from_checkpoint).params
    c = loaded.config
    if (c.input_dim, c.hidden_dims, c.output_dim, c.n_classes) != (
            enc.input_dim, enc.hidden_dims, enc.output_dim, enc.n_classes):
        raise ConfigError(f"init_from_checkpoint: encoder shape of {config.init_from_checkpoint} "
                          "does not match encoder.* / data")
    return loaded.with_inner_steps(enc.inner_steps, enc.per_step_layer_norm).detach()


def clamp_rates(arrays: dict[str, np.ndarray]) -> int:
    """Clamp inner rates to ``LR_FLOOR`` in place; returns the number of clamped entries."""
    events = 0
    for k, v in arrays.items():
        low = v < LR_FLOOR
        if np.any(low):
            events += int(np.count_nonzero(low))
            arrays[k] = np.maximum(v, LR_FLOOR)
    return events


def meta_train(config: RunConfig, dataset: Dataset, task: TaskData,
               audit: IdAudit | None = None,
               on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Episodic meta-training with per-epoch dev evaluation and early stopping.

    Every outer step draws ``meta_batch`` episodes from the training groups,
    takes the algorithm's meta-gradient and applies one Ranger update with a
    cosine-annealed rate. The returned checkpoint is the best dev epoch.
    """
    config = config.resolved()
    algorithm = get_algorithm(config.algorithm)
    tr = config.train
    theta = initial_parameters(config, dataset)
    lrs = LrTable.for_params(theta, config.inner.lr, config.inner.head_multiplier)
    state = OuterOptState(lr=tr.outer_lr)
    sampler = EpisodeSampler(dataset, task.pools, config.episode.support_size,
                             config.episode.query_size, config.seed)
    total = tr.epochs * tr.episodes_per_epoch
    dev = task.spec.dev_group
    stopper = _stopper(config)
    trace: list[dict] = []
    clamps = 0

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(algorithm.name, theta.detach(), lrs, config, epoch, state.copy(),
                          {"lr_clamp_events": clamps})

    best = snapshot(0)
    t = 0
    epoch = 0
    for epoch in range(1, tr.epochs + 1):
        lr_now = tr.outer_lr
        for _ in range(tr.episodes_per_epoch):
            episodes = sampler.batch(t, tr.meta_batch)
            if audit is not None:
                for ep in episodes:
                    audit.record("meta-train", ep.group, ep.support.ids + ep.query.ids)
            lr_now = cosine_anneal(t, total, tr.outer_lr)
            try:
                mg = meta_gradient(algorithm, theta, lrs, episodes, tr.simpleshot,
                                   tr.proto_centering)
                if algorithm.family != "reptile" and not math.isfinite(mg.query_loss):
                    raise NumericError(f"query loss is {mg.query_loss}", node="query_loss")
                params = {n: theta[n].data for n in mg.grads}
                grads = dict(mg.grads)
                rates = {n: lr_now for n in mg.grads}
                if algorithm.learns_lrs:
                    params.update(lrs.to_arrays())
                    grads.update(mg.lr_grads)
                    lr_lr_now = cosine_anneal(t, total, config.inner.lr_lr)
                    rates.update({n: lr_lr_now for n in mg.lr_grads})
                state, new = ranger_step(state, params, grads, rates)
            except NumericError as exc:
                raise TrainingDiverged(f"diverged at epoch {epoch}, step {t}: {exc}",
                                       best, trace) from exc
            lr_values = {k: v for k, v in new.items() if k.startswith("lr.")}
            clamps += clamp_rates(lr_values)
            theta = theta.replace({n: Tensor(new[n], name=n) for n in mg.grads})
            if lr_values:
                lrs = lrs.with_values(lr_values)
            t += 1
        current = snapshot(epoch)
        report = evaluate_with_seeds(current, [dev], config, task, audit=audit, phase="dev")
        row = _dev_row(epoch, report, lr_now, dev)
        trace.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if not math.isfinite(row["dev_loss"]):
            raise TrainingDiverged(f"dev loss is {row['dev_loss']} at epoch {epoch}", best, trace)
        if stopper.update(epoch, _metric(row, config)):
            best = current
        if stopper.should_stop:
            break
    best.metrics = {"lr_clamp_events": clamps, "best_epoch": stopper.best_epoch}
    return TrainResult(best, trace, stopper.best_epoch or 0, epoch, clamps,
                       dict(sampler.group_counts))


# -- supervised (non-episodic) training --------------------------------------------

def _supervised(config: RunConfig, params: ParamSet, lrs: LrTable, task: TaskData,
                train_idx: np.ndarray, validate: Callable[[Checkpoint], tuple[float, float, float]],
                kind: str, phase: str, audit: IdAudit | None, rng_tag: int) -> TrainResult:
    """Mini-batch cross-entropy training with per-epoch validation; keeps the best epoch."""
    tr = config.train
    lr = tr.outer_lr if tr.baseline_lr is None else tr.baseline_lr
    steps_per_epoch = math.ceil(train_idx.size / tr.batch_size)
    total = tr.baseline_epochs * steps_per_epoch
    state = OuterOptState(lr=lr)
    names = params.names()
    stopper = EarlyStopper(tr.baseline_epochs, "min" if tr.early_stop_metric == "loss" else "max")
    best = Checkpoint(kind, params.detach(), lrs, config, 0, state.copy())
    trace: list[dict] = []
    t = 0
    for epoch in range(1, tr.baseline_epochs + 1):
        order = np.random.default_rng([config.seed, rng_tag, epoch]).permutation(train_idx)
        lr_now = lr
        for start in range(0, order.size, tr.batch_size):
            idx = order[start:start + tr.batch_size]
            batch = task.batch(idx)
            if audit is not None:
                for rid, gname in zip(batch.ids, task.dataset.groups[idx]):
                    audit.record(phase, gname, [rid])
            lr_now = cosine_anneal(t, total, lr)
            leaves = params.as_leaves(names)
            loss = batch_loss(leaves, batch, 0)
            try:
                g = grad(loss, {n: leaves[n] for n in names})
                state, new = ranger_step(state, {n: params[n].data for n in names},
                                         {n: v.data for n, v in g.items()}, lr_now)
            except NumericError as exc:
                raise TrainingDiverged(f"diverged at epoch {epoch}, step {t}: {exc}",
                                       best, trace) from exc
            params = params.replace({n: Tensor(new[n], name=n) for n in names})
            t += 1
        current = Checkpoint(kind, params.detach(), lrs, config, epoch, state.copy())
        val_loss, acc_mean, acc_std = validate(current)
        row = {"epoch": epoch, "dev_loss": val_loss, "dev_acc_mean": acc_mean,
               "dev_acc_std": acc_std, "lr": lr_now}
        trace.append(row)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss is {val_loss} at epoch {epoch}", best, trace)
        if stopper.update(epoch, _metric(row, config)):
            best = current
    best.metrics = {"best_epoch": stopper.best_epoch}
    return TrainResult(best, trace, stopper.best_epoch or 0, tr.baseline_epochs)


def _baseline_params(config: RunConfig, dataset: Dataset) -> tuple[ParamSet, LrTable]:
    # one layer-norm copy: the baseline never sees step-specific statistics
    enc = encoder_config(config, dataset, per_step_layer_norm=False)
    params = init_params(enc, np.random.default_rng([config.seed, 0]))
    return params, LrTable.for_params(params, config.inner.lr, config.inner.head_multiplier)


def train_non_episodic(config: RunConfig, dataset: Dataset, task: TaskData,
                       audit: IdAudit | None = None) -> TrainResult:
    """Merge the training pools and fit them with plain mini-batch cross-entropy.

    Validation follows the meta-test protocol on the dev group (fine-tune on
    a 16-sample support, score its test split) over the eval seeds.
    """
    config = config.resolved()
    params, lrs = _baseline_params(config, dataset)
    dev = task.spec.dev_group

    def validate(ck):
        report = evaluate_with_seeds(ck, [dev], config, task, audit=audit, phase="dev")
        g = report.groups[dev]
        return g.loss, g.mean, g.std

    return _supervised(config, params, lrs, task, task.merged_training(), validate,
                       NON_EPISODIC, "baseline-train", audit, rng_tag=3)


@dataclass
class ZeroShotResult:
    report: EvalReport
    src_accuracy: float
    train: TrainResult


def zero_shot_eval(config: RunConfig, dataset: Dataset, task: TaskData,
                   audit: IdAudit | None = None) -> ZeroShotResult:
    """Train on the source group only, then classify target test sets without any support."""
    config = config.resolved()
    src = task.spec.src_group
    if src is None:
        raise ConfigError("split.src: zero-shot evaluation needs a source group")
    labels = dataset.labels
    src_train = task.splits[src].train
    rng = np.random.default_rng([config.seed, stable_hash(src), 4])
    held, fit = stratified_split(labels[src_train], config.train.zero_shot_holdout, rng,
                                 indices=src_train)
    params, lrs = _baseline_params(config, dataset)
    held_batch = task.batch(held)

    def validate(ck):
        out = score(predictor(ck, None, config)(held_batch.x), held_batch.y)
        return out.loss, out.accuracy, 0.0

    train = _supervised(config, params, lrs, task, fit, validate, ZERO_SHOT, "zero-shot-train",
                        audit, rng_tag=4)
    ck = train.checkpoint
    report = evaluate_with_seeds(ck, list(task.spec.target_groups), config, task, audit=audit,
                                 phase="zero-shot")
    src_acc = run_meta_test(ck, src, config, config.eval.seeds[0], task).accuracy
    report.trace = train.trace
    return ZeroShotResult(report, src_acc, train)
