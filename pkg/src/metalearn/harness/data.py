"""Assemble a dataset and group roles into the splits and pools a run consumes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..episodes import (
    DataError,
    Dataset,
    GroupPools,
    GroupSplit,
    LabeledBatch,
    SplitSpec,
    SyntheticConfig,
    build_pools,
    gen_synthetic,
    ingest_jsonl,
    split_groups,
)
from ..models import EncoderConfig
from .config import ConfigError, RunConfig


@dataclass(frozen=True, eq=False)
class TaskData:
    """Train/test partitions of every role group plus the capped training pools."""

    dataset: Dataset
    spec: SplitSpec
    splits: dict[str, GroupSplit]
    pools: dict[str, GroupPools]
    seed: int

    @property
    def training_groups(self) -> tuple[str, ...]:
        return tuple(sorted(self.pools))

    def merged_training(self) -> np.ndarray:
        """Indices of every training record (support and query pools of each training group)."""
        return np.sort(np.concatenate([self.pools[g].all for g in self.training_groups]))

    def batch(self, idx) -> LabeledBatch:
        return LabeledBatch.from_indices(self.dataset, idx)


def split_spec(config: RunConfig) -> SplitSpec:
    s = config.split
    try:
        return SplitSpec(s.aux, s.dev, s.target, s.src, s.train_cap, s.pool_ratio,
                         s.test_fraction, s.joint)
    except DataError as exc:
        raise ConfigError(f"split: {exc}") from None


def prepare_task(dataset: Dataset, spec: SplitSpec, seed: int, include_src: bool = False) -> TaskData:
    """Split every role group held-out style and build the meta-training pools.

    Auxiliary groups are capped at ``train_cap``; the source group, when
    included, contributes all of its training records.
    """
    present = set(dataset.group_names())
    roles = list(spec.aux_groups) + [spec.dev_group] + list(spec.target_groups)
    if spec.src_group is not None:
        roles.append(spec.src_group)
    missing = sorted(set(roles) - present)
    if missing:
        raise DataError(f"groups {missing} have no records (present: {sorted(present)})")
    spec.validate_caps(dataset.n_classes)
    ordered = list(dict.fromkeys(roles))
    splits = split_groups(dataset, ordered, spec.test_fraction, seed)
    pools = {g: build_pools(dataset, splits[g], spec.train_cap, spec.pool_ratio, seed)
             for g in spec.aux_groups}
    if include_src:
        if spec.src_group is None:
            raise ConfigError("include_src: no split.src group configured")
        pools[spec.src_group] = build_pools(dataset, splits[spec.src_group], None,
                                            spec.pool_ratio, seed)
    return TaskData(dataset, spec, splits, pools, seed)


def task_for(config: RunConfig, dataset: Dataset) -> TaskData:
    return prepare_task(dataset, split_spec(config), config.seed, config.include_src)


def synth_config(config: RunConfig) -> SyntheticConfig:
    s = config.synth
    try:
        return SyntheticConfig(s.n_groups, s.n_classes, s.dim, s.samples_per_class, s.drift,
                               s.noise, s.seed)
    except ValueError as exc:
        raise ConfigError(f"synth: {exc}") from None


def load_dataset(config: RunConfig) -> Dataset:
    """Records from ``data.path``, or the configured synthetic task when no path is set."""
    if config.data.path:
        records = ingest_jsonl(config.data.path, config.data.n_classes)
    else:
        records = gen_synthetic(synth_config(config))
    return Dataset.from_records(records, config.data.text_dim, config.data.n_classes)


def encoder_config(config: RunConfig, dataset: Dataset, per_step_layer_norm: bool | None = None
                   ) -> EncoderConfig:
    per_step = config.encoder.per_step_layer_norm if per_step_layer_norm is None else per_step_layer_norm
    return EncoderConfig(dataset.dim, config.encoder.hidden_dims, config.encoder.output_dim,
                         dataset.n_classes, config.inner.steps, per_step, config.seed)
