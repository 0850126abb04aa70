"""Synthetic multi-group classification tasks with controllable domain drift."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .records import Record

# rotation generator scale per unit of drift; keeps the mean displacement near `drift`
ROTATION_SCALE = 0.5


@dataclass(frozen=True)
class SyntheticConfig:
    n_groups: int = 5
    n_classes: int = 4
    dim: int = 32
    samples_per_class: int = 50
    drift: float = 1.0
    noise: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.dim < self.n_classes:
            raise ValueError(f"dim ({self.dim}) must be >= n_classes ({self.n_classes})")
        if self.drift < 0 or self.noise < 0:
            raise ValueError("drift and noise must be non-negative")
        if min(self.n_groups, self.n_classes, self.samples_per_class) < 1:
            raise ValueError("n_groups, n_classes and samples_per_class must be >= 1")


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """Generated records plus the means that produced them."""

    records: list[Record]
    class_means: np.ndarray        # (C, dim), unit norm
    group_means: np.ndarray        # (G, C, dim)
    group_names: tuple[str, ...]


def _random_rotation(dim: int, angle_scale: float, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    skew = (g - g.T) / np.sqrt(2.0)
    return expm(angle_scale * skew)


def generate_task(config: SyntheticConfig, rng: np.random.Generator | None = None) -> SyntheticTask:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    c, d = config.n_classes, config.dim
    means = rng.normal(size=(c, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    names = tuple(f"g{i}" for i in range(config.n_groups))
    group_means = np.empty((config.n_groups, c, d))
    records: list[Record] = []
    for gi, name in enumerate(names):
        rot = _random_rotation(d, ROTATION_SCALE * config.drift, rng)
        direction = rng.normal(size=d)
        shift = config.drift * direction / np.linalg.norm(direction)
        shifted = means @ rot.T + shift
        group_means[gi] = shifted
        labels = np.repeat(np.arange(c), config.samples_per_class)
        x = shifted[labels] + config.noise * rng.normal(size=(labels.size, d))
        for j, (label, row) in enumerate(zip(labels, x)):
            records.append(Record(f"{name}-{j:05d}", name, int(label), features=row))
    return SyntheticTask(records, means, group_means, names)


def gen_synthetic(config: SyntheticConfig, rng: np.random.Generator | None = None) -> list[Record]:
    """Records for ``n_groups`` groups sharing ``n_classes`` classes.

    Class means lie on the unit sphere. Each group rotates them by a random
    rotation whose angle grows with ``drift`` and translates them by a
    random vector of norm ``drift``; samples add isotropic Gaussian noise.
    """
    return generate_task(config, rng).records


def mean_displacement(task: SyntheticTask) -> float:
    """Average distance between a group's class mean and the shared class mean."""
    return float(np.linalg.norm(task.group_means - task.class_means[None], axis=2).mean())
