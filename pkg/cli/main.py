# cli/main.py

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from consistency.gradcheck_suite import run_gradcheck_suite
from database.ledger import RunLedger
from runtime.distributed import SWEEP_CSV, distributed_train, staleness_sweep, sweep_frame
from runtime.errors import RuntimeProtocolError
from runtime.report import staleness_report
from synth.datasets import save_dataset
from training.checkpoints import load_task_params
from training.errors import TrainingError
from training.evaluation import evaluate
from training.experiments import (
    FINAL_CSV,
    METRICS_CSV,
    build_datasets,
    build_task_specs,
    eval_options,
    final_frame_rows,
    run_experiment,
)
from utils.config import ExperimentConfig, apply_overrides, load_config
from utils.errors import ConfigError
from utils.settings import get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

LEDGER_NAME = "ledger.db"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; usage errors here are exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fraction(value: str) -> float:
    try:
        fraction = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}")
    if not 0.0 <= fraction <= 1.0:
        raise argparse.ArgumentTypeError(f"label fraction must lie in [0, 1], got {fraction}")
    return fraction


def _staleness(value: str) -> int:
    try:
        steps = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}")
    if steps < 0:
        raise argparse.ArgumentTypeError(f"staleness must be non-negative, got {steps}")
    return steps


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cotrain", description="Collective multi-task training through consistency losses.")
    parser.add_argument("--log-level", default=None, help="overrides COTRAIN_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def experiment_command(name: str, help: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help)
        sub.add_argument("--config", required=True, type=Path)
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
        sub.add_argument("--label-fraction", type=_fraction, default=None)
        sub.add_argument("--deterministic", action="store_true", default=None)
        sub.add_argument("--ledger", default=None, help="SQLAlchemy URL of the run ledger")
        return sub

    experiment_command("gen-data", "generate every dataset of a config and save it under --out")

    gradcheck = commands.add_parser("gradcheck", help="finite-difference check of every consistency loss")
    gradcheck.add_argument("--configurations", type=int, default=20)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--out", type=Path, default=None, help="optional CSV of the results")

    train = experiment_command("train", "single-machine collective training")
    train.add_argument("--resume", action="store_true", help="continue from the checkpoint under the output directory")

    distributed = experiment_command("train-distributed", "one node per task exchanging predictions only")
    distributed.add_argument("--staleness-steps", type=_staleness, action="append", default=None,
                             help="refresh interval in steps; repeat for a sweep")
    distributed.add_argument("--transport", choices=["inprocess", "http"], default=None)
    distributed.add_argument("--steps", type=int, default=None)

    evaluation = experiment_command("eval", "evaluate checkpointed tasks on the config's [eval] dataset")
    evaluation.add_argument("--checkpoint", required=True, type=Path)

    report = commands.add_parser("staleness-report", help="series and summary tables of a staleness sweep")
    report.add_argument("--input", required=True, type=Path, help=f"sweep directory holding {SWEEP_CSV}")
    report.add_argument("--task", default=None)
    report.add_argument("--metric", default="abs_rel")
    report.add_argument("--threshold", type=float, default=None)
    report.add_argument("--higher-is-better", action="store_true")
    report.add_argument("--steps-per-minute", type=float, default=None)
    report.add_argument("--out", type=Path, default=None)
    return parser


def _config(args) -> ExperimentConfig:
    config = load_config(args.config)
    return apply_overrides(
        config,
        seed=args.seed,
        output_dir=str(args.out) if args.out is not None else None,
        label_fraction=args.label_fraction,
        deterministic=args.deterministic,
    )


def _ledger(args, config: ExperimentConfig) -> RunLedger:
    """--ledger, then COTRAIN_LEDGER_URL, then a ledger file inside the run's output directory."""
    url = args.ledger or get_settings().ledger_url
    if url is None:
        config.output_dir.mkdir(parents=True, exist_ok=True)
        url = f"sqlite:///{(config.output_dir / LEDGER_NAME).resolve()}"
    return RunLedger(url)


# --- Commands ---

def cmd_gen_data(args) -> int:
    config = _config(args)
    out = config.output_dir
    for name, dataset in sorted(build_datasets(config).items()):
        save_dataset(dataset, out / name)
        print(f"{name}: {len(dataset)} samples ({dataset.role.value}, {dataset.n_labeled} labeled) -> {out / name}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite(configurations=args.configurations, seed=args.seed)
    frame = pd.DataFrame(
        [{"loss": r.name, "passed": r.passed, "configurations": r.configurations, "max_error": r.max_error} for r in results]
    )
    print(frame.to_string(index=False))
    for result in results:
        for failure in result.failures[:3]:
            print(f"  {result.name}: {failure}")
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out, index=False, float_format="%.10g")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def cmd_train(args) -> int:
    config = _config(args)
    result = run_experiment(config, ledger=_ledger(args, config), resume=args.resume)
    print(f"{result.name}: {len(result.history)} metric rows -> {result.output_dir / METRICS_CSV}")
    for task_id, bundle in sorted(result.final.items()):
        for name, value in sorted(bundle.values.items()):
            print(f"  {task_id} {name} = {value:.6g}")
    return EXIT_OK


def cmd_train_distributed(args) -> int:
    config = _config(args)
    ledger = _ledger(args, config)
    out = config.output_dir
    values = args.staleness_steps or config.distributed.staleness_steps
    if values:
        runs = staleness_sweep(config, values, args.steps, args.transport, ledger, out)
        for staleness, run in sorted(runs.items()):
            audit = run.audit()
            print(f"staleness {staleness}: {len(audit)} served requests, max age {audit.age.max() if len(audit) else 0}")
        dist = config.distributed
        report = staleness_report(sweep_frame(runs), dist.report_task, dist.report_metric, dist.report_threshold)
        report.write(out)
        print(f"sweep -> {out / SWEEP_CSV}")
        return EXIT_OK

    run = distributed_train(config, steps=args.steps, transport=args.transport, ledger=ledger)
    run.combined_history().to_csv(out / METRICS_CSV)
    run.audit().to_csv(out / "version_log.csv", index=False)
    print(f"{config.experiment.name}: {len(run.nodes)} nodes -> {out / METRICS_CSV}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config(args)
    if config.eval.dataset is None:
        raise ConfigError("eval needs an [eval] section naming a dataset")
    if not args.checkpoint.is_dir():
        raise TrainingError(f"checkpoint directory not found: {args.checkpoint}")
    datasets = build_datasets(config)
    specs = build_task_specs(config, datasets)
    tasks = {spec.task_id: (spec.model, load_task_params(args.checkpoint, spec.task_id, trainable=False)) for spec in specs}
    final = evaluate(tasks, datasets[config.eval.dataset], **eval_options(config))

    rows = []
    for task_id, bundle in sorted(final.items()):
        for row in bundle.rows():
            rows.append({"task_id": task_id, **row})
    print(pd.DataFrame(rows, columns=["task_id", "metric", "value", "unit"]).to_string(index=False))
    final_frame_rows(0, final).to_csv(config.output_dir / FINAL_CSV)
    return EXIT_OK


def cmd_staleness_report(args) -> int:
    path = args.input / SWEEP_CSV if args.input.is_dir() else args.input
    if not path.exists():
        raise ConfigError(f"no sweep results at {path}")
    runs = pd.read_csv(path)
    report = staleness_report(
        runs,
        task_id=args.task,
        metric=args.metric,
        threshold=args.threshold,
        higher_is_better=args.higher_is_better,
        steps_per_minute=args.steps_per_minute,
    )
    report.write(args.out or path.parent)
    print(report.summary.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "train-distributed": cmd_train_distributed,
    "eval": cmd_eval,
    "staleness-report": cmd_staleness_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=(args.log_level or get_settings().log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (TrainingError, RuntimeProtocolError, OSError, ValueError, TimeoutError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
