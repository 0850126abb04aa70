import numpy as np
import pytest

from metalearn.episodes import Dataset, SyntheticConfig, gen_synthetic
from metalearn.harness import RunConfig, apply_overrides, task_for

SMALL = {
    "synth.n_groups": 5,
    "synth.n_classes": 4,
    "synth.dim": 12,
    "synth.samples_per_class": 40,
    "synth.noise": 0.3,
    "synth.drift": 0.0,
    "encoder.hidden_dims": "16",
    "encoder.output_dim": 8,
    "inner.steps": 2,
    "train.epochs": 2,
    "train.episodes_per_epoch": 3,
    "train.meta_batch": 2,
    "eval.seeds": "1,2",
}


def small_config(**overrides) -> RunConfig:
    merged = dict(SMALL)
    merged.update(overrides)
    return apply_overrides(RunConfig(), merged).resolved()


@pytest.fixture
def config():
    return small_config()


@pytest.fixture
def dataset(config):
    from metalearn.harness import load_dataset
    return load_dataset(config)


@pytest.fixture
def task(config, dataset):
    return task_for(config, dataset)


@pytest.fixture
def tiny_dataset():
    records = gen_synthetic(SyntheticConfig(n_groups=3, n_classes=3, dim=6, samples_per_class=20,
                                            drift=0.5, noise=0.2, seed=3))
    return Dataset.from_records(records)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
