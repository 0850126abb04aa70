"""Group roles, stratified pools and episode sampling."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .records import DataError, Dataset


class SamplingError(ValueError):
    """A pool cannot satisfy a sampling request."""


class StratificationError(ValueError):
    """A class has too few samples to be split."""


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=4).digest(), "little")


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    ids: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def from_indices(cls, dataset: Dataset, idx: Sequence[int]) -> "LabeledBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return cls(tuple(dataset.ids[idx].tolist()), dataset.x[idx], dataset.labels[idx])

    def __len__(self) -> int:
        return len(self.ids)

    def concat(self, other: "LabeledBatch") -> "LabeledBatch":
        return LabeledBatch(self.ids + other.ids, np.vstack([self.x, other.x]),
                            np.concatenate([self.y, other.y]))


@dataclass(frozen=True, eq=False)
class Episode:
    """One task: a support set to adapt on and a disjoint query set to score."""

    group: str
    support: LabeledBatch
    query: LabeledBatch

    def __post_init__(self):
        shared = set(self.support.ids) & set(self.query.ids)
        if shared:
            raise SamplingError(f"episode {self.group}: support and query share ids {sorted(shared)[:5]}")
        uncovered = set(self.query.y.tolist()) - set(self.support.y.tolist())
        if uncovered:
            raise SamplingError(
                f"episode {self.group}: query classes {sorted(uncovered)} missing from support")


@dataclass(frozen=True)
class SplitSpec:
    """Roles of each group and how much of its training data is usable.

    ``train_cap`` limits the training records per auxiliary group (the
    limited-resource setting); ``None`` uses all of them. ``joint`` allows the
    targets to coincide with the auxiliary groups.
    """

    aux_groups: tuple[str, ...]
    dev_group: str
    target_groups: tuple[str, ...]
    src_group: str | None = None
    train_cap: int | None = None
    pool_ratio: float = 0.5
    test_fraction: float = 0.5
    joint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "aux_groups", tuple(self.aux_groups))
        object.__setattr__(self, "target_groups", tuple(self.target_groups))
        aux, tgt = set(self.aux_groups), set(self.target_groups)
        if not aux:
            raise DataError("SplitSpec: at least one auxiliary group is required")
        if self.dev_group in aux or self.dev_group in tgt:
            raise DataError(f"SplitSpec: dev group {self.dev_group!r} overlaps aux/target groups")
        if not self.joint and aux & tgt:
            raise DataError(f"SplitSpec: aux and target groups overlap: {sorted(aux & tgt)}")
        if self.src_group is not None and self.src_group in aux | tgt | {self.dev_group}:
            raise DataError(f"SplitSpec: src group {self.src_group!r} already has another role")
        if not 0.0 < self.pool_ratio < 1.0 or not 0.0 < self.test_fraction < 1.0:
            raise DataError("SplitSpec: pool_ratio and test_fraction must lie in (0, 1)")

    def validate_caps(self, n_classes: int) -> None:
        if self.train_cap is not None and self.train_cap < n_classes:
            raise DataError(f"SplitSpec: train_cap {self.train_cap} < number of classes {n_classes}")

    def training_groups(self, include_src: bool) -> tuple[str, ...]:
        groups = self.aux_groups
        if include_src and self.src_group is not None:
            groups = groups + (self.src_group,)
        return groups


def stratified_split(labels: np.ndarray, ratio: float, rng: np.random.Generator,
                     indices: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split ``indices`` class by class into two disjoint pools.

    Each class contributes ``round(n_c * ratio)`` (at least one, at most
    ``n_c - 1``) samples to the first pool and the rest to the second.
    """
    labels = np.asarray(labels)
    if indices is None:
        indices = np.arange(len(labels))
    indices = np.asarray(indices)
    first, second = [], []
    for c in np.unique(labels):
        members = indices[labels == c]
        if members.size < 2:
            raise StratificationError(f"class {int(c)} has {members.size} sample(s); need >= 2")
        members = members[rng.permutation(members.size)]
        k = int(min(max(1, round(members.size * ratio)), members.size - 1))
        first.append(members[:k])
        second.append(members[k:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def _class_counts(size: int, classes: np.ndarray, rng: np.random.Generator) -> dict[int, int]:
    base, rem = divmod(size, len(classes))
    counts = {int(c): base for c in classes}
    for c in rng.choice(classes, size=rem, replace=False):
        counts[int(c)] += 1
    return counts


def stratified_sample(indices: np.ndarray, labels: np.ndarray, size: int,
                      rng: np.random.Generator, classes: np.ndarray | None = None) -> np.ndarray:
    """Draw ``size`` indices without replacement, spread as evenly as possible over classes."""
    labels = np.asarray(labels)
    if classes is None:
        classes = np.unique(labels)
    if size < len(classes):
        raise SamplingError(f"cannot cover {len(classes)} classes with {size} samples")
    picked = []
    for c, k in _class_counts(size, classes, rng).items():
        members = indices[labels == c]
        if members.size < k:
            raise SamplingError(f"class {c}: pool has {members.size} samples, {k} requested")
        picked.append(members[rng.choice(members.size, size=k, replace=False)])
    return np.concatenate(picked)


@dataclass(frozen=True, eq=False)
class GroupSplit:
    """Held-out partition of one group: training records and the test set."""

    group: str
    train: np.ndarray
    test: np.ndarray


@dataclass(frozen=True, eq=False)
class GroupPools:
    group: str
    support: np.ndarray
    query: np.ndarray

    @property
    def all(self) -> np.ndarray:
        return np.sort(np.concatenate([self.support, self.query]))


def split_groups(dataset: Dataset, groups: Sequence[str], test_fraction: float, seed: int
                 ) -> dict[str, GroupSplit]:
    """Stratified train/test partition of every listed group, fixed by ``seed``."""
    out = {}
    for group in groups:
        idx = dataset.group_indices(group)
        rng = np.random.default_rng([seed, stable_hash(group)])
        test, train = stratified_split(dataset.labels[idx], test_fraction, rng, indices=idx)
        out[group] = GroupSplit(group, train, test)
    return out


def build_pools(dataset: Dataset, split: GroupSplit, cap: int | None, ratio: float, seed: int
                ) -> GroupPools:
    """Cap a group's training records (class-balanced) and split them into support/query pools."""
    rng = np.random.default_rng([seed, stable_hash(split.group), 1])
    train = split.train
    if cap is not None and cap < train.size:
        train = np.sort(stratified_sample(train, dataset.labels[train], cap, rng))
    support, query = stratified_split(dataset.labels[train], ratio, rng, indices=train)
    return GroupPools(split.group, support, query)


def sample_episode(dataset: Dataset, pools: Mapping[str, GroupPools], support_size: int,
                   query_size: int, rng: np.random.Generator) -> Episode:
    """Pick a group uniformly, then draw a class-stratified support and query set."""
    groups = sorted(pools)
    if not groups:
        raise SamplingError("no pools to sample from")
    group = groups[int(rng.integers(len(groups)))]
    pool = pools[group]
    if pool.support.size < support_size or pool.query.size < query_size:
        raise SamplingError(
            f"group {group!r}: pools hold {pool.support.size}/{pool.query.size} samples, "
            f"requested {support_size}/{query_size}")
    classes = np.unique(dataset.labels[pool.support])
    s_idx = stratified_sample(pool.support, dataset.labels[pool.support], support_size, rng, classes)
    q_idx = stratified_sample(pool.query, dataset.labels[pool.query], query_size, rng, classes)
    return Episode(group, LabeledBatch.from_indices(dataset, s_idx),
                   LabeledBatch.from_indices(dataset, q_idx))


@dataclass
class EpisodeSampler:
    """Deterministic episode stream; episode ``i`` uses its own RNG stream."""

    dataset: Dataset
    pools: Mapping[str, GroupPools]
    support_size: int = 16
    query_size: int = 16
    seed: int = 0
    group_counts: dict[str, int] = field(default_factory=dict)

    def episode(self, index: int) -> Episode:
        rng = np.random.default_rng([self.seed, index])
        ep = sample_episode(self.dataset, self.pools, self.support_size, self.query_size, rng)
        self.group_counts[ep.group] = self.group_counts.get(ep.group, 0) + 1
        return ep

    def batch(self, step: int, size: int) -> list[Episode]:
        return [self.episode(step * size + j) for j in range(size)]
