"""Experiment harness: run configs, meta-training, baselines, evaluation and grid search."""
from .audit import IdAudit
from .checkpoint import (
    NON_EPISODIC,
    ZERO_SHOT,
    Checkpoint,
    checkpoint_from_json,
    checkpoint_to_json,
    load_checkpoint,
    save_checkpoint,
)
from .config import (
    ALGORITHM_NAMES,
    ConfigError,
    RunConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config_text,
    save_config,
    to_flat,
)
from .data import TaskData, encoder_config, load_dataset, prepare_task, split_spec, task_for
from .evaluation import (
    EvalReport,
    GroupScore,
    ProtocolError,
    evaluate_with_seeds,
    meta_test,
    run_meta_test,
)
from .training import (
    EarlyStopper,
    TrainingDiverged,
    TrainResult,
    ZeroShotResult,
    meta_train,
    metrics_jsonl,
    train_non_episodic,
    write_metrics,
    zero_shot_eval,
)

__all__ = [
    "IdAudit", "NON_EPISODIC", "ZERO_SHOT", "Checkpoint", "checkpoint_from_json",
    "checkpoint_to_json", "load_checkpoint", "save_checkpoint", "ALGORITHM_NAMES", "ConfigError",
    "RunConfig", "apply_overrides", "dump_config", "load_config", "parse_config_text",
    "save_config", "to_flat", "TaskData", "encoder_config", "load_dataset", "prepare_task",
    "split_spec", "task_for", "EvalReport", "GroupScore", "ProtocolError", "evaluate_with_seeds",
    "meta_test", "run_meta_test", "EarlyStopper", "TrainingDiverged", "TrainResult",
    "ZeroShotResult", "meta_train", "metrics_jsonl", "train_non_episodic", "write_metrics",
    "zero_shot_eval",
]
