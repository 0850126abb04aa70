import pytest

from metalearn.harness import (
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
from metalearn.harness.config import from_flat, get_key, parse_value


class TestFlatFormat:
    def test_dump_parse_closure(self):
        config = apply_overrides(RunConfig(), ["eval.seeds=3,4", "split.src=g9", "encoder.hidden_dims="])
        text = dump_config(config)
        assert dump_config(parse_config_text(text)) == text

    def test_flat_round_trip(self):
        config = RunConfig()
        assert to_flat(from_flat(to_flat(config))) == to_flat(config)

    def test_comments_and_blank_lines(self):
        config = parse_config_text("# comment\n\nalgorithm = reptile  # inline\nseed=7\n")
        assert config.algorithm == "reptile" and config.seed == 7

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="train.bogus"):
            parse_config_text("train.bogus=1\n")

    def test_error_names_line(self):
        with pytest.raises(ConfigError, match="cfg.txt:2"):
            parse_config_text("seed=1\nnot an assignment\n", source="cfg.txt")

    def test_bad_value_named(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            parse_config_text("train.epochs=many\n")

    def test_value_types(self):
        assert parse_value("eval.seeds", "1,2,3") == (1, 2, 3)
        assert parse_value("split.src", "none") is None
        assert parse_value("train.simpleshot", "false") is False
        assert parse_value("encoder.hidden_dims", "") == ()


class TestOverrides:
    def test_applied_after_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed=1\ntrain.epochs=7\n", encoding="utf-8")
        config = apply_overrides(load_config(path), ["seed=2"])
        assert config.seed == 2 and config.train.epochs == 7

    def test_last_override_wins(self):
        assert apply_overrides(RunConfig(), ["seed=2", "seed=5"]).seed == 5

    def test_mapping_with_native_values(self):
        config = apply_overrides(RunConfig(), {"train.outer_lr": 1e-3, "eval.seeds": "1"})
        assert config.train.outer_lr == 1e-3 and config.eval.seeds == (1,)

    def test_original_untouched(self):
        base = RunConfig()
        apply_overrides(base, ["seed=9"])
        assert base.seed == 0

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(ConfigError, match="absent.cfg"):
            load_config(tmp_path / "absent.cfg")


class TestResolution:
    def test_per_algorithm_defaults(self):
        reptile = apply_overrides(RunConfig(), ["algorithm=reptile"]).resolved()
        maml = apply_overrides(RunConfig(), ["algorithm=maml"]).resolved()
        assert (reptile.inner.lr, reptile.inner.head_multiplier) == (5e-5, 1.0)
        assert (maml.inner.lr, maml.inner.head_multiplier) == (1e-5, 10.0)

    def test_explicit_value_kept(self):
        assert apply_overrides(RunConfig(), ["inner.lr=0.1"]).resolved().inner.lr == 0.1

    def test_cited_defaults(self):
        c = RunConfig()
        assert (c.train.epochs, c.train.episodes_per_epoch, c.train.meta_batch) == (100, 100, 4)
        assert c.train.outer_lr == 3e-5 and c.train.patience == 3
        assert len(c.eval.seeds) == 5 and c.eval.test_finetune_steps == 5

    def test_validation_names_key(self):
        with pytest.raises(ConfigError, match="train.meta_batch"):
            apply_overrides(RunConfig(), ["train.meta_batch=0"]).validate()
        with pytest.raises(ConfigError, match="algorithm"):
            apply_overrides(RunConfig(), ["algorithm=bogus"]).validate()

    def test_algorithm_names(self):
        assert {"protonet", "maml", "fomaml", "reptile", "protomaml", "fo_protomaml_n"} <= set(ALGORITHM_NAMES)

    def test_save_load(self, tmp_path):
        config = apply_overrides(RunConfig(), ["synth.drift=0.25"])
        save_config(config, tmp_path / "c.cfg")
        assert get_key(load_config(tmp_path / "c.cfg"), "synth.drift") == 0.25
