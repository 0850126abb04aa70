import numpy as np
import pytest

from conftest import small_config
from metalearn.harness import (
    ConfigError,
    EarlyStopper,
    EvalReport,
    GroupScore,
    IdAudit,
    ProtocolError,
    TrainingDiverged,
    checkpoint_from_json,
    checkpoint_to_json,
    evaluate_with_seeds,
    load_checkpoint,
    load_dataset,
    meta_train,
    metrics_jsonl,
    run_meta_test,
    save_checkpoint,
    task_for,
    train_non_episodic,
    zero_shot_eval,
)
from metalearn.harness import training
from metalearn.harness.checkpoint import Checkpoint
from metalearn.harness.experiments import (
    desk_config,
    epoch_diff_std,
    epochs_to_fraction,
)
from metalearn.harness.grid import grid_cells, grid_search, rank, table1_grid, GridResult
from metalearn.models import init_params
from metalearn.harness.data import encoder_config
from metalearn.optimizers import LrTable
from metalearn.tensor_core import NumericError

# separable clusters for the sanity runs
SANITY = {"synth.noise": 0.15, "train.epochs": 10, "train.episodes_per_epoch": 20,
          "train.outer_lr": 3e-3, "inner.lr": 1e-1, "train.patience": 10}


def setup(config):
    dataset = load_dataset(config)
    return dataset, task_for(config, dataset)


def untrained_checkpoint(config, dataset, kind="fomaml", init=0):
    params = init_params(encoder_config(config, dataset), np.random.default_rng(init))
    return Checkpoint(kind, params, LrTable.for_params(params, config.inner.lr), config)


class TestEarlyStopper:
    def test_decreasing_accuracy(self):
        stopper = EarlyStopper(3, "max")
        for epoch, acc in enumerate([0.9, 0.8, 0.7, 0.6, 0.5], start=1):
            stopper.update(epoch, acc)
            if stopper.should_stop:
                break
        assert epoch == 4 and stopper.best_epoch == 1

    def test_nan_is_not_an_improvement(self):
        stopper = EarlyStopper(2)
        stopper.update(1, 1.0)
        assert not stopper.update(2, float("nan"))
        assert stopper.best == 1.0

    def test_patience_validated(self):
        with pytest.raises(ConfigError):
            EarlyStopper(0)


class TestMetaTrain:
    def test_protonet_sanity(self):
        config = desk_config(0.0, "protonet", **SANITY)
        result = meta_train(config, *setup(config))
        assert max(row["dev_acc_mean"] for row in result.trace) >= 0.95

    def test_fomaml_sanity_on_held_out_group(self):
        config = desk_config(0.0, "fomaml", **SANITY)
        dataset, task = setup(config)
        result = meta_train(config, dataset, task)
        report = evaluate_with_seeds(result.checkpoint, ["g4"], config, task)
        assert report.delta >= 0.95

    def test_deterministic(self, config, dataset, task):
        a = meta_train(config, dataset, task)
        b = meta_train(config, dataset, task)
        assert metrics_jsonl(a.trace) == metrics_jsonl(b.trace)

    def test_step_count_and_uniform_groups(self, dataset, task):
        config = small_config(**{"train.epochs": 1, "train.episodes_per_epoch": 12,
                                 "train.meta_batch": 2})
        result = meta_train(config, dataset, task)
        assert sum(result.group_counts.values()) == 24
        assert set(result.group_counts) == {"g0", "g1", "g2"}

    def test_target_never_seen_in_training(self, config, dataset, task):
        audit = IdAudit()
        meta_train(config, dataset, task, audit)
        assert audit.consumed("g4") == set()
        pooled = set(dataset.ids[task.pools["g0"].all])
        assert audit.consumed("g0", phase="meta-train") <= pooled

    def test_divergence_keeps_last_good_checkpoint(self, config, dataset, task, monkeypatch):
        calls = {"n": 0}
        real = training.meta_gradient

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] > config.train.episodes_per_epoch:
                raise NumericError("synthetic failure", node="test")
            return real(*args, **kwargs)

        monkeypatch.setattr(training, "meta_gradient", flaky)
        with pytest.raises(TrainingDiverged) as info:
            meta_train(config, dataset, task)
        assert info.value.checkpoint.epoch == 1
        assert len(info.value.trace) == 1

    @pytest.mark.parametrize("name", ["maml", "reptile", "protomaml", "fo_protomaml"])
    def test_other_algorithms_run(self, name, dataset, task):
        config = small_config(algorithm=name, **{"train.epochs": 1})
        result = meta_train(config, dataset, task)
        assert np.isfinite(result.trace[0]["dev_loss"])


class TestMetaTest:
    def test_untrained_near_chance(self):
        config = desk_config(0.0, "fomaml", **{"eval.test_finetune_steps": 0})
        dataset, task = setup(config)
        accs = [run_meta_test(untrained_checkpoint(config, dataset, init=i), g, config, 1, task).accuracy
                for i in range(5) for g in ("g3", "g4")]
        assert abs(np.mean(accs) - 0.25) <= 0.05

    def test_support_as_query_is_perfect(self):
        from metalearn.harness.evaluation import predictor, support_indices
        config = desk_config(0.0, "protonet", **{"synth.noise": 0.15})
        dataset, task = setup(config)
        ck = untrained_checkpoint(config, dataset, "protonet")
        support = task.batch(support_indices(task, "g4", 1, 16))
        preds = predictor(ck, support, config)(support.x).argmax(1)
        assert np.mean(preds == support.y) == 1.0

    def test_small_support_rejected(self, dataset, task):
        config = small_config(**{"eval.support_size": 8})
        with pytest.raises(ProtocolError):
            run_meta_test(untrained_checkpoint(config, dataset), "g4", config, 1, task)

    def test_audit_counts(self, config, dataset, task):
        audit = IdAudit()
        evaluate_with_seeds(untrained_checkpoint(config, dataset), ["g4"], config, task, audit=audit)
        test_ids = set(dataset.ids[task.splits["g4"].test])
        for seed in config.eval.seeds:
            train_ids = audit.consumed("g4", seed=seed)
            assert len(train_ids) == 16 and not train_ids & test_ids
            assert audit.consumed("g4", seed=seed, role="score") == test_ids

    def test_report_bit_for_bit(self, config, dataset, task):
        ck = untrained_checkpoint(config, dataset)
        a = evaluate_with_seeds(ck, ["g3", "g4"], config, task).to_csv()
        b = evaluate_with_seeds(ck, ["g3", "g4"], config, task).to_csv()
        assert a == b


class TestReport:
    def test_single_seed_std_zero(self):
        report = EvalReport((1,), {"a": GroupScore("a", (0.7,), (0.5,))})
        assert report.groups["a"].std == 0.0

    def test_delta_unweighted(self):
        report = EvalReport((1, 2), {"a": GroupScore("a", (0.8, 0.8), (1, 1)),
                                     "b": GroupScore("b", (0.9, 0.9), (1, 1))})
        assert report.delta == pytest.approx(0.85)
        assert report.to_csv().splitlines()[-1].startswith("delta,0.85")

    def test_seed_count_checked(self):
        with pytest.raises(ValueError):
            EvalReport((1, 2), {"a": GroupScore("a", (0.8,), (1.0,))})


class TestBaselines:
    def test_merged_pool_size(self):
        config = desk_config(1.0)
        _, task = setup(config)
        assert task.merged_training().size == 3 * 64

    def test_baseline_comparable_at_zero_drift(self):
        config = desk_config(0.0, **SANITY, **{"train.baseline_epochs": 10, "train.baseline_lr": 3e-2})
        dataset, task = setup(config)
        base = train_non_episodic(config, dataset, task)
        meta = meta_train(config, dataset, task)
        a = evaluate_with_seeds(base.checkpoint, ["g4"], config, task).delta
        b = evaluate_with_seeds(meta.checkpoint, ["g4"], config, task).delta
        assert abs(a - b) <= 0.05

    def test_baseline_audit_covers_merged_pool(self, config, dataset, task):
        audit = IdAudit()
        train_non_episodic(small_config(**{"train.baseline_epochs": 1}), dataset, task, audit)
        merged = set(dataset.ids[task.merged_training()])
        used = set().union(*(audit.consumed(g, phase="baseline-train") for g in ("g0", "g1", "g2")))
        assert used == merged

    def test_zero_shot_requires_src(self, config, dataset, task):
        with pytest.raises(ConfigError, match="split.src"):
            zero_shot_eval(config, dataset, task)

    @pytest.mark.parametrize("drift, check", [(0.0, "close"), (3.0, "drop")])
    def test_zero_shot_shift(self, drift, check):
        config = desk_config(drift, **{"synth.n_groups": 6, "split.src": "g5", "synth.noise": 0.15,
                                       "train.baseline_epochs": 10, "train.baseline_lr": 3e-2})
        dataset, task = setup(config)
        audit = IdAudit()
        result = zero_shot_eval(config, dataset, task, audit)
        assert audit.consumed("g4") == set()
        if check == "close":
            assert abs(result.report.delta - result.src_accuracy) <= 0.05
        else:
            assert result.report.delta <= result.src_accuracy - 0.10


class TestGrid:
    def test_sizes(self):
        assert len(grid_cells(table1_grid("fo_protomaml_n"))) == 54
        assert len(grid_cells(table1_grid("reptile"))) == 18

    def test_protonet_has_no_grid(self):
        with pytest.raises(ConfigError):
            table1_grid("protonet")

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            grid_cells({})

    def test_single_cell(self, config, dataset, task):
        results = grid_search({"inner.lr": (1e-1,)}, small_config(**{"train.grid_epochs": 1}),
                              dataset, task)
        assert len(results) == 1 and results[0].overrides == {"inner.lr": 0.1}

    def test_rank_by_dev_loss(self):
        cells = [GridResult(0, {}, 0.5, 0.7, 1), GridResult(1, {}, 0.3, 0.6, 1),
                 GridResult(2, {}, 0.3, 0.8, 1)]
        assert [r.index for r in rank(cells)] == [2, 1, 0]


class TestCheckpoint:
    def test_byte_stable_round_trip(self, config, dataset, task, tmp_path):
        result = meta_train(small_config(**{"train.epochs": 1}), dataset, task)
        text = checkpoint_to_json(result.checkpoint)
        assert checkpoint_to_json(checkpoint_from_json(text)) == text
        save_checkpoint(result.checkpoint, tmp_path / "ck.json")
        back = load_checkpoint(tmp_path / "ck.json")
        for k, v in result.checkpoint.params.to_arrays().items():
            np.testing.assert_array_equal(back.params[k].data, v)

    def test_evaluation_survives_round_trip(self, config, dataset, task):
        ck = untrained_checkpoint(config, dataset)
        back = checkpoint_from_json(checkpoint_to_json(ck))
        a = evaluate_with_seeds(ck, ["g4"], config, task).to_csv()
        assert evaluate_with_seeds(back, ["g4"], config, task).to_csv() == a

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="nope.json"):
            load_checkpoint(tmp_path / "nope.json")

    def test_init_from_checkpoint(self, dataset, task, tmp_path):
        first = meta_train(small_config(**{"train.epochs": 1}), dataset, task)
        save_checkpoint(first.checkpoint, tmp_path / "ck.json")
        config = small_config(**{"init_from_checkpoint": str(tmp_path / "ck.json"), "inner.steps": 3})
        params = training.initial_parameters(config, dataset)
        np.testing.assert_array_equal(params["enc0.W"].data, first.checkpoint.params["enc0.W"].data)
        assert params.config.n_ln_copies == 4


class TestStabilityMetrics:
    def test_diff_std(self):
        assert epoch_diff_std([0.5, 0.6, 0.7]) == pytest.approx(0.0)
        assert epoch_diff_std([0.5]) == 0.0

    def test_epochs_to_fraction(self):
        assert epochs_to_fraction([0.1, 0.5, 0.95, 1.0]) == 3
