"""Scaled-down comparison experiments on synthetic tasks.

``trend_point`` compares a meta-learner with the non-episodic baseline at one
drift level; ``stability_experiment`` compares the dev-accuracy traces of two
meta-learners over several seeds. Hyper-parameters of every method are picked
from a small candidate list by dev loss, never by target accuracy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..episodes import Dataset
from .config import RunConfig, apply_overrides
from .data import TaskData, load_dataset, task_for
from .evaluation import EvalReport, evaluate_with_seeds
from .training import TrainResult, meta_train, train_non_episodic

# desk-scale settings: from-scratch MLPs need far larger rates than a pretrained encoder
DESK_OVERRIDES: dict[str, object] = {
    "synth.n_groups": 5,
    "synth.n_classes": 4,
    "synth.dim": 32,
    "synth.noise": 0.3,
    "synth.samples_per_class": 50,
    "split.train_cap": 64,
    "train.epochs": 30,
    "train.episodes_per_epoch": 100,
    "inner.lr_lr": 1e-3,
}

META_CANDIDATES: tuple[dict, ...] = (
    {"train.outer_lr": 3e-3, "inner.lr": 3e-2},
    {"train.outer_lr": 3e-3, "inner.lr": 1e-1},
    {"train.outer_lr": 1e-2, "inner.lr": 1e-1},
)
BASELINE_CANDIDATES: tuple[dict, ...] = tuple(
    {"train.baseline_lr": blr, "inner.lr": ilr}
    for blr in (3e-3, 1e-2, 3e-2) for ilr in (1e-2, 1e-1))

Trainer = Callable[[RunConfig, Dataset, TaskData], TrainResult]


def desk_config(drift: float, algorithm: str = "fo_protomaml_n", **extra) -> RunConfig:
    overrides = dict(DESK_OVERRIDES)
    overrides.update({"synth.drift": drift, "algorithm": algorithm})
    overrides.update(extra)
    return apply_overrides(RunConfig(), overrides).resolved()


@dataclass(frozen=True)
class Selection:
    overrides: dict
    dev_loss: float
    dev_acc: float
    result: TrainResult


def best_row(result: TrainResult) -> dict:
    return result.trace[result.best_epoch - 1] if result.best_epoch else result.trace[-1]


def select_on_dev(trainer: Trainer, candidates: Sequence[Mapping], base: RunConfig,
                  dataset: Dataset, task: TaskData) -> tuple[Selection, list[Selection]]:
    """Train every candidate; the winner has the lowest dev loss (then higher dev accuracy)."""
    runs = []
    for overrides in candidates:
        config = apply_overrides(base, dict(overrides)).resolved()
        result = trainer(config, dataset, task)
        row = best_row(result)
        runs.append(Selection(dict(overrides), row["dev_loss"], row["dev_acc_mean"], result))
    order = sorted(range(len(runs)), key=lambda i: (runs[i].dev_loss, -runs[i].dev_acc, i))
    return runs[order[0]], runs


@dataclass
class TrendPoint:
    drift: float
    meta: EvalReport
    baseline: EvalReport
    meta_choice: dict
    baseline_choice: dict

    @property
    def gap(self) -> float:
        """Meta-learner minus baseline, in accuracy points."""
        return 100.0 * (self.meta.delta - self.baseline.delta)

    def summary(self) -> dict:
        return {"drift": self.drift, "meta_acc": self.meta.delta, "baseline_acc": self.baseline.delta,
                "gap_points": self.gap, "meta_choice": self.meta_choice,
                "baseline_choice": self.baseline_choice}


def trend_point(drift: float, algorithm: str = "fo_protomaml_n",
                meta_candidates: Sequence[Mapping] = META_CANDIDATES,
                baseline_candidates: Sequence[Mapping] = BASELINE_CANDIDATES,
                **extra) -> TrendPoint:
    """Dev-selected meta-learner vs dev-selected baseline on the held-out target groups."""
    base = desk_config(drift, algorithm, **extra)
    dataset = load_dataset(base)
    task = task_for(base, dataset)
    targets = list(base.split.target)
    meta, _ = select_on_dev(meta_train, meta_candidates, base, dataset, task)
    baseline, _ = select_on_dev(train_non_episodic, baseline_candidates, base, dataset, task)
    meta_report = evaluate_with_seeds(meta.result.checkpoint, targets,
                                      meta.result.checkpoint.config, task)
    base_report = evaluate_with_seeds(baseline.result.checkpoint, targets,
                                      baseline.result.checkpoint.config, task)
    return TrendPoint(drift, meta_report, base_report, meta.overrides, baseline.overrides)


# -- stability -----------------------------------------------------------------------

def epoch_diff_std(accuracies: Sequence[float]) -> float:
    """Standard deviation of the epoch-to-epoch changes of a dev-accuracy trace."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size < 2:
        return 0.0
    return float(np.std(np.diff(acc)))


def epochs_to_fraction(accuracies: Sequence[float], fraction: float = 0.9) -> int:
    """First epoch (1-based) whose accuracy reaches ``fraction`` of the final accuracy."""
    acc = np.asarray(accuracies, dtype=np.float64)
    return int(np.argmax(acc >= fraction * acc[-1])) + 1


@dataclass
class StabilityReport:
    algorithms: tuple[str, str]
    seeds: tuple[int, ...]
    traces: dict[str, list[list[float]]] = field(default_factory=dict)

    def diff_std(self, algorithm: str) -> float:
        return float(np.mean([epoch_diff_std(t) for t in self.traces[algorithm]]))

    def epochs_to_90(self, algorithm: str) -> float:
        return float(np.mean([epochs_to_fraction(t) for t in self.traces[algorithm]]))

    @property
    def passed(self) -> bool:
        a, b = self.algorithms
        return self.diff_std(a) <= self.diff_std(b) and self.epochs_to_90(a) <= self.epochs_to_90(b)

    def to_json(self) -> str:
        doc = {"seeds": list(self.seeds), "passed": self.passed, "algorithms": {
            name: {"epoch_diff_std": self.diff_std(name), "epochs_to_90pct": self.epochs_to_90(name),
                   "dev_acc_traces": self.traces[name]} for name in self.algorithms}}
        return json.dumps(doc, indent=1) + "\n"


def stability_experiment(algorithms: tuple[str, str] = ("fo_protomaml_n", "fo_protomaml"),
                         seeds: Sequence[int] = (0, 1, 2), epochs: int = 10, drift: float = 1.0,
                         **extra) -> StabilityReport:
    """Fixed-length training (no early stop) of each algorithm per seed; dev accuracy per epoch.

    Both algorithms share the data, the seed and every hyper-parameter.
    """
    report = StabilityReport(tuple(algorithms), tuple(seeds))
    for name in algorithms:
        report.traces[name] = []
        for seed in seeds:
            config = desk_config(drift, name, seed=seed, **{"train.epochs": epochs,
                                                            "train.patience": epochs, **extra})
            dataset = load_dataset(config)
            task = task_for(config, dataset)
            result = meta_train(config, dataset, task)
            report.traces[name].append([row["dev_acc_mean"] for row in result.trace])
    return report
