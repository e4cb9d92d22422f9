"""
Command-line front end: train, sweep, cost, bench, gen-data, verify

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 runtime failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from app.models.schemas import CostModel, RunConfig, TaskKind
from app.network.builder import resolve_layers
from app.network.graph import build_network
from app.services.bench_service import bench_throughput
from app.services.cost_service import (
    REFERENCE_DEPLOYMENTS,
    cost_model_from_bench,
    cost_per_billion,
    format_usd,
    required_replicas,
    speedup,
)
from app.services.dataset_service import Dataset, build_dataset, write_dataset_csv
from app.services.experiment_service import run_experiment
from app.services.report_service import (
    format_compression_summary,
    format_cost_table,
    write_bench_csv,
    write_cost_csv,
    write_cost_pdf,
    write_report_csv,
)
from app.services.sweep_service import run_sweep, write_sweep
from app.services.verification_service import run_verification
from app.storage.weight_file import load_model, save_weights
from app.utils.config import config, load_run_config
from app.utils.exceptions import (
    ConfigurationError,
    DataError,
    DimensionError,
    DomainError,
    FormatError,
    UsageError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DEFAULTS = RunConfig()
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad arguments"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def _output_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(cfg: RunConfig) -> Dataset:
    data = build_dataset(cfg.dataset, cfg.seed)
    expected = math.prod(cfg.network.input_shape)
    if data.features != expected:
        raise DataError(f"dataset has {data.features} features, network input {cfg.network.input_shape} needs {expected}")
    outputs = resolve_layers(cfg.network)[-1].out_shape[0]
    if outputs != data.n_classes:
        raise DataError(f"network has {outputs} outputs but the dataset has {data.n_classes} classes")
    return data


# ========== COMMANDS ==========

def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "record_timing": args.record_timing or None,
        "network.width_multiplier": args.width,
        "pb.max_cycles": args.cycles,
        "pb.lr_main": args.lr,
        "pb.lr_candidate": args.lr_candidate,
        "pb.pool_size": args.pool_size,
        "pb.batch_size": args.batch_size,
        "pb.task": args.task,
        "pb.cascade_dendrites": False if args.no_cascade else None,
    })
    out = _output_dir(cfg)
    data = _load_dataset(cfg)
    spec = cfg.network.model_copy(update={"seed": cfg.seed})
    logger.info(f"🚀 Training on {data.name}: {data.train.size}/{data.val.size}/{data.test.size} samples, "
                f"m={spec.width_multiplier:g}, up to {cfg.pb.max_cycles} dendrite cycles")

    outcome = run_experiment(spec, data, cfg.pb, cfg.seed, record_timing=cfg.record_timing)
    write_report_csv(outcome.report, out / "report.csv")
    save_weights(outcome.model, args.weights or out / "model.pbw")

    record = outcome.record
    print(f"cycles={record.dendrite_cycles} params={record.params} train_acc={record.train_acc:.4f} "
          f"val_acc={record.val_acc:.4f} test_acc={record.test_acc:.4f}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "record_timing": args.record_timing or None,
        "sweep.width_multipliers": args.widths,
        "sweep.dendrite_cycles": args.cycles,
        "sweep.seeds": args.seeds,
        "sweep.workers": args.workers,
    })
    out = _output_dir(cfg)
    data = _load_dataset(cfg)
    result = run_sweep(cfg.sweep_config(), data)
    write_sweep(result, out)
    print(format_compression_summary(result.baseline, result.compression))
    return EXIT_OK if not result.failures else EXIT_RUNTIME


def cmd_cost(args: argparse.Namespace) -> int:
    out = Path(args.output_dir or config.OUTPUT_DIR)
    lines: List[str] = []
    if args.reference:
        models = list(REFERENCE_DEPLOYMENTS)
    else:
        if args.hourly is None or args.tps is None:
            raise UsageError("cost needs --hourly and --tps, or --reference")
        value = cost_per_billion(args.hourly, args.tps)
        models = [CostModel(hourly_cost_usd=args.hourly, throughput=args.tps,
                            instance_label=args.label, experiment=args.experiment)]
        lines.append(format_usd(value))
        if args.target is not None:
            lines.append(f"replicas: {required_replicas(args.target, args.tps)}")
        if args.baseline_tps is not None:
            lines.append(f"speedup: {speedup(args.tps, args.baseline_tps):.2f}")

    table = format_cost_table(models)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cost.txt").write_text(table, encoding="utf-8")
    write_cost_csv(models, out / "cost.csv")
    if args.pdf:
        write_cost_pdf(models, out / "cost.pdf")
    print("\n".join(lines) if lines else table, end="\n" if lines else "")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "bench.batch_sizes": args.batch_sizes,
        "bench.min_duration_s": args.min_duration,
        "bench.threads": args.threads,
        "bench.width_multipliers": args.widths,
        "bench.hourly_cost_usd": args.hourly,
    })
    out = _output_dir(cfg)
    settings = cfg.bench
    if args.weights and len(settings.width_multipliers) != 1:
        raise UsageError("--weights needs exactly one width multiplier")

    results = []
    for multiplier in settings.width_multipliers:
        spec = cfg.network.model_copy(update={"width_multiplier": multiplier, "seed": cfg.seed})
        model = load_model(spec, args.weights, cfg.pb) if args.weights else build_network(spec)
        results.append(bench_throughput(model, settings.batch_sizes, settings.min_duration_s,
                                        settings.threads, cfg.seed, label=f"m{multiplier:g}"))
    write_bench_csv(results, out / "bench.csv")

    if settings.hourly_cost_usd is not None:
        priced = [cost_model_from_bench(r, settings.hourly_cost_usd, settings.instance_label)
                  for r in results if r.best_units_per_s > 0]
        table = format_cost_table(priced)
        (out / "cost.txt").write_text(table, encoding="utf-8")
        print(table, end="")
    for r in results:
        print(f"{r.label}: params={r.params} threads={r.threads} optimal_batch={r.optimal_batch} "
              f"units_per_s={r.best_units_per_s:.0f}")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "dataset.kind": args.kind,
        "dataset.n_per_class": args.n_per_class,
    })
    data = build_dataset(cfg.dataset, cfg.seed)
    path = write_dataset_csv(data, _output_dir(cfg) / "data.csv")
    print(f"{data.size} samples, {data.n_classes} classes -> {path}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    seed = DEFAULTS.seed if args.seed is None else args.seed
    results = run_verification(seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# ========== PARSER ==========

def _common(sub: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        sub.add_argument("--config", help="JSON run config (default: built-in defaults)")
    sub.add_argument("--seed", type=int, help=f"root seed for every random stage (default: {DEFAULTS.seed})")
    sub.add_argument("--output-dir", help=f"artifact directory (default: $PB_OUTPUT_DIR or {DEFAULTS.output_dir})")
    sub.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: off)")


def build_parser() -> CommandParser:
    pb, sweep, bench, dataset = DEFAULTS.pb, DEFAULTS.sweep, DEFAULTS.bench, DEFAULTS.dataset
    parser = CommandParser(prog="pbnet", description="Perforated backpropagation experiments")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)

    train = subparsers.add_parser("train", help="train one network with dendrite cycles")
    _common(train)
    train.add_argument("--cycles", type=int, help=f"maximum dendrite cycles; 0 is the baseline (default: {pb.max_cycles})")
    train.add_argument("--width", type=float, help=f"hidden width multiplier (default: {DEFAULTS.network.width_multiplier})")
    train.add_argument("--lr", type=float, help=f"main learning rate (default: {pb.lr_main})")
    train.add_argument("--lr-candidate", type=float, help=f"candidate learning rate (default: {pb.lr_candidate})")
    train.add_argument("--pool-size", type=int, help=f"candidates per neuron (default: {pb.pool_size})")
    train.add_argument("--batch-size", type=int, help=f"minibatch size (default: {pb.batch_size})")
    train.add_argument("--task", choices=[t.value for t in TaskKind], help=f"task loss (default: {pb.task.value})")
    train.add_argument("--no-cascade", action="store_true", help="dendrites ignore earlier dendrites (default: cascade on)")
    train.add_argument("--record-timing", action="store_true", help="write wall-clock seconds (default: 0.000)")
    train.add_argument("--weights", help="where to save the trained weights (default: <output-dir>/model.pbw)")
    train.set_defaults(handler=cmd_train)

    sw = subparsers.add_parser("sweep", help="width x dendrite-cycle compression sweep")
    _common(sw)
    sw.add_argument("--widths", type=float, nargs="+", help=f"width multipliers (default: {sweep.width_multipliers})")
    sw.add_argument("--cycles", type=int, nargs="+", help=f"dendrite cycle counts (default: {sweep.dendrite_cycles})")
    sw.add_argument("--seeds", type=int, nargs="+", help="run seeds (default: [seed])")
    sw.add_argument("--workers", type=int, help=f"parallel processes (default: $PB_WORKERS or {sweep.workers})")
    sw.add_argument("--record-timing", action="store_true", help="write wall-clock seconds (default: 0.000)")
    sw.set_defaults(handler=cmd_sweep)

    cost = subparsers.add_parser("cost", help="deployment cost per billion units")
    cost.add_argument("--hourly", type=float, help="instance cost in USD per hour (default: none)")
    cost.add_argument("--tps", type=float, help="throughput in units per second (default: none)")
    cost.add_argument("--target", type=float, help="required units per second, prints replicas (default: none)")
    cost.add_argument("--baseline-tps", type=float, help="throughput to compute a speedup against (default: none)")
    cost.add_argument("--label", default="custom", help="instance label (default: %(default)s)")
    cost.add_argument("--experiment", default="", help="experiment name (default: empty)")
    cost.add_argument("--reference", action="store_true", help="tabulate the built-in reference deployments (default: off)")
    cost.add_argument("--pdf", action="store_true", help="also write cost.pdf (default: off)")
    cost.add_argument("--output-dir", help=f"artifact directory (default: $PB_OUTPUT_DIR or {DEFAULTS.output_dir})")
    cost.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: off)")
    cost.set_defaults(handler=cmd_cost)

    be = subparsers.add_parser("bench", help="forward throughput across batch sizes")
    _common(be)
    be.add_argument("--batch-sizes", type=int, nargs="+", help=f"strictly increasing (default: {bench.batch_sizes})")
    be.add_argument("--min-duration", type=float, help=f"seconds per batch size, >= 0.5 (default: {bench.min_duration_s})")
    be.add_argument("--threads", type=int, help=f"concurrent forward passes (default: {bench.threads})")
    be.add_argument("--widths", type=float, nargs="+", help=f"width multipliers (default: {bench.width_multipliers})")
    be.add_argument("--hourly", type=float, help="price the best throughput at this USD/hour (default: none)")
    be.add_argument("--weights", help="PBW1 file to load before timing (default: fresh init)")
    be.set_defaults(handler=cmd_bench)

    gen = subparsers.add_parser("gen-data", help="write the configured dataset to data.csv")
    _common(gen)
    gen.add_argument("--kind", choices=["two_spirals", "blobs", "idx"], help=f"dataset kind (default: {dataset.kind.value})")
    gen.add_argument("--n-per-class", type=int, help=f"samples per class (default: {dataset.n_per_class})")
    gen.set_defaults(handler=cmd_gen_data)

    verify = subparsers.add_parser("verify", help="run the invariant suite")
    verify.add_argument("--seed", type=int, help=f"root seed (default: {DEFAULTS.seed})")
    verify.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: off)")
    verify.set_defaults(handler=cmd_verify)
    return parser


def _exit_code(error: BaseException) -> int:
    if isinstance(error, (UsageError, ConfigurationError, DomainError, FileNotFoundError)):
        return EXIT_USAGE
    if isinstance(error, (DataError, FormatError, DimensionError, json.JSONDecodeError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and map failures to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version
        return int(e.code or 0)

    _configure_logging(args.verbose)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except Exception as e:
        code = _exit_code(e)
        if code == EXIT_RUNTIME:
            logger.error(f"❌ {args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return code
