"""Task distribution: data ingestion, featurization, group roles and episode sampling."""
from .features import EmptyTextError, featurize_text
from .records import DataError, Dataset, Record, ingest_jsonl, write_jsonl
from .sampling import (
    Episode,
    EpisodeSampler,
    GroupPools,
    GroupSplit,
    LabeledBatch,
    SamplingError,
    SplitSpec,
    StratificationError,
    build_pools,
    sample_episode,
    split_groups,
    stratified_sample,
    stratified_split,
)
from .synthetic import SyntheticConfig, gen_synthetic, generate_task, mean_displacement

__all__ = [
    "EmptyTextError", "featurize_text", "DataError", "Dataset", "Record", "ingest_jsonl",
    "write_jsonl", "Episode", "EpisodeSampler", "GroupPools", "GroupSplit", "LabeledBatch",
    "SamplingError", "SplitSpec", "StratificationError", "build_pools", "sample_episode",
    "split_groups", "stratified_sample", "stratified_split", "SyntheticConfig", "gen_synthetic",
    "generate_task", "mean_displacement",
]
