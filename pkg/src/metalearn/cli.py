"""Command-line entry point: ``metalearn <subcommand> [--config FILE] [--out DIR] [key=value ...]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checks import GRADCHECK_TOLERANCE, run_oracle_suite
from .episodes import DataError, SamplingError, StratificationError, gen_synthetic, write_jsonl
from .harness import (
    ConfigError,
    IdAudit,
    ProtocolError,
    RunConfig,
    TrainingDiverged,
    apply_overrides,
    evaluate_with_seeds,
    load_checkpoint,
    load_config,
    load_dataset,
    meta_train,
    save_checkpoint,
    save_config,
    task_for,
    train_non_episodic,
    write_metrics,
    zero_shot_eval,
)
from .harness.data import synth_config
from .harness.grid import grid_csv, grid_search, table1_grid
from .tensor_core import ContractError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SUBCOMMANDS = ("meta-train", "meta-test", "baseline-train", "zero-shot", "grid-search",
               "synth-gen", "gradcheck")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metalearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides, applied after the file")
        if name == "meta-test":
            p.add_argument("--checkpoint", required=True, help="checkpoint to evaluate")
        if name == "gradcheck":
            p.add_argument("--cases", type=int, default=100, help="randomized cases per primitive")
    return parser


def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(config, args.overrides).resolved()


def _target_groups(config: RunConfig) -> list[str]:
    return list(config.split.target)


def _write_report(report, out: Path) -> None:
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")


def _cmd_meta_train(config: RunConfig, out: Path, args) -> int:
    dataset = load_dataset(config)
    task = task_for(config, dataset)
    audit = IdAudit()
    try:
        result = meta_train(config, dataset, task, audit)
    finally:
        audit.to_jsonl(out / "audit.jsonl")
    write_metrics(result.trace, out / "metrics.jsonl")
    save_checkpoint(result.checkpoint, out / "checkpoint.json")
    report = evaluate_with_seeds(result.checkpoint, _target_groups(config), config, task, audit=audit)
    audit.to_jsonl(out / "audit.jsonl")
    _write_report(report, out)
    print(f"best epoch {result.best_epoch}/{result.epochs_run}; delta {report.delta:.4f}; "
          f"lr clamp events {result.lr_clamp_events}")
    return EXIT_OK


def _cmd_meta_test(config: RunConfig, out: Path, args) -> int:
    ck = load_checkpoint(args.checkpoint)
    dataset = load_dataset(config)
    task = task_for(config, dataset)
    audit = IdAudit()
    report = evaluate_with_seeds(ck, _target_groups(config), config, task, audit=audit)
    audit.to_jsonl(out / "audit.jsonl")
    _write_report(report, out)
    print(report.to_csv(), end="")
    return EXIT_OK


def _cmd_baseline_train(config: RunConfig, out: Path, args) -> int:
    dataset = load_dataset(config)
    task = task_for(config, dataset)
    audit = IdAudit()
    result = train_non_episodic(config, dataset, task, audit)
    write_metrics(result.trace, out / "metrics.jsonl")
    save_checkpoint(result.checkpoint, out / "checkpoint.json")
    report = evaluate_with_seeds(result.checkpoint, _target_groups(config), config, task, audit=audit)
    audit.to_jsonl(out / "audit.jsonl")
    _write_report(report, out)
    print(f"best epoch {result.best_epoch}; delta {report.delta:.4f}")
    return EXIT_OK


def _cmd_zero_shot(config: RunConfig, out: Path, args) -> int:
    dataset = load_dataset(config)
    task = task_for(config, dataset)
    audit = IdAudit()
    result = zero_shot_eval(config, dataset, task, audit)
    write_metrics(result.train.trace, out / "metrics.jsonl")
    save_checkpoint(result.train.checkpoint, out / "checkpoint.json")
    audit.to_jsonl(out / "audit.jsonl")
    _write_report(result.report, out)
    print(f"src accuracy {result.src_accuracy:.4f}; target delta {result.report.delta:.4f}")
    return EXIT_OK


def _cmd_grid_search(config: RunConfig, out: Path, args) -> int:
    dataset = load_dataset(config)
    task = task_for(config, dataset)
    results = grid_search(table1_grid(config.algorithm), config, dataset, task)
    (out / "grid.csv").write_text(grid_csv(results), encoding="utf-8")
    best = results[0]
    print(f"{len(results)} cells; best: {best.label()} (dev loss {best.dev_loss:.4f})")
    return EXIT_OK


def _cmd_synth_gen(config: RunConfig, out: Path, args) -> int:
    records = gen_synthetic(synth_config(config))
    n = write_jsonl(records, out / "synthetic.jsonl")
    print(f"wrote {n} records to {out / 'synthetic.jsonl'}")
    return EXIT_OK


def _cmd_gradcheck(config: RunConfig, out: Path, args) -> int:
    report = run_oracle_suite(args.cases, config.seed)
    summary = {
        "max_rel_error": report.max_gradcheck_error,
        "n_checks": len(report.primitive) + len(report.encoder),
        "scalar_fixture_error": report.scalar_error,
        "maml_network_rel_error": report.network.rel_error,
        "passed": report.passed,
    }
    (out / "gradcheck.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    print(f"max rel. error {report.max_gradcheck_error:.3e} over {summary['n_checks']} checks "
          f"(tolerance {GRADCHECK_TOLERANCE:g}); MAML network rel. error "
          f"{report.network.rel_error:.3e}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


COMMANDS = {
    "meta-train": _cmd_meta_train,
    "meta-test": _cmd_meta_test,
    "baseline-train": _cmd_baseline_train,
    "zero-shot": _cmd_zero_shot,
    "grid-search": _cmd_grid_search,
    "synth-gen": _cmd_synth_gen,
    "gradcheck": _cmd_gradcheck,
}


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        config = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        save_config(config, out / "config.resolved")
        return COMMANDS[args.command](config, out, args)
    except TrainingDiverged as exc:
        save_checkpoint(exc.checkpoint, out / "checkpoint.json")
        write_metrics(exc.trace, out / "metrics.jsonl")
        print(f"error: {exc} (last good checkpoint saved)", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, ProtocolError, SamplingError, StratificationError,
            ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
