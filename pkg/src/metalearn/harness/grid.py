"""Exhaustive hyper-parameter search ranked by dev loss."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from ..episodes import Dataset
from .audit import IdAudit
from .config import ConfigError, RunConfig, apply_overrides, format_value
from .data import TaskData
from .training import meta_train

INNER_STEPS_AXIS = (2, 3, 5)
HEAD_MULTIPLIER_AXIS = (1.0, 10.0)
LR_LR_AXIS = (3e-5, 6e-5, 1e-4)
INNER_LR_AXIS = {
    "reptile": (1e-5, 5e-5, 1e-4),
    "maml": (1e-5, 1e-4, 1e-3),
}


def table1_grid(algorithm: str) -> dict[str, tuple]:
    """The standard search axes for ``algorithm`` (Reptile has no learnable inner rates)."""
    if algorithm == "protonet":
        raise ConfigError("algorithm: protonet has no inner-loop hyper-parameters to search")
    family = "reptile" if algorithm == "reptile" else "maml"
    grid: dict[str, tuple] = {
        "inner.steps": INNER_STEPS_AXIS,
        "inner.lr": INNER_LR_AXIS[family],
        "inner.head_multiplier": HEAD_MULTIPLIER_AXIS,
    }
    if family == "maml":
        grid["inner.lr_lr"] = LR_LR_AXIS
    return grid


def grid_cells(grid: Mapping[str, Sequence]) -> list[dict[str, object]]:
    """Cross product of the axes, in axis order (the last axis varies fastest)."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid: empty grid (every axis needs at least one value)")
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass(frozen=True)
class GridResult:
    index: int
    overrides: dict
    dev_loss: float
    dev_acc: float
    best_epoch: int

    def label(self) -> str:
        return " ".join(f"{k}={format_value(v)}" for k, v in self.overrides.items())


def rank(results: Sequence[GridResult]) -> list[GridResult]:
    """Lowest dev loss first; ties by higher dev accuracy, then by cell index."""
    return sorted(results, key=lambda r: (r.dev_loss, -r.dev_acc, r.index))


def grid_search(grid: Mapping[str, Sequence], base: RunConfig, dataset: Dataset, task: TaskData,
                audit: IdAudit | None = None) -> list[GridResult]:
    """Train every cell for ``train.grid_epochs`` epochs and rank by best dev loss."""
    cells = grid_cells(grid)
    short = apply_overrides(base, {})
    short.train = replace(short.train, epochs=short.train.grid_epochs)

    def run(item):
        index, overrides = item
        config = apply_overrides(short, overrides)
        result = meta_train(config, dataset, task, audit)
        row = result.trace[result.best_epoch - 1] if result.best_epoch else result.trace[-1]
        return GridResult(index, overrides, row["dev_loss"], row["dev_acc_mean"], result.best_epoch)

    items = list(enumerate(cells))
    if base.threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=base.threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    return rank(results)


def grid_csv(results: Sequence[GridResult]) -> str:
    if not results:
        return "rank,index,dev_loss,dev_acc,best_epoch\n"
    keys = list(results[0].overrides)
    lines = [",".join(["rank", "index", *keys, "dev_loss", "dev_acc", "best_epoch"])]
    for r_i, r in enumerate(results, start=1):
        values = [format_value(r.overrides[k]) for k in keys]
        lines.append(",".join([str(r_i), str(r.index), *values, repr(r.dev_loss), repr(r.dev_acc),
                               str(r.best_epoch)]))
    return "\n".join(lines) + "\n"
