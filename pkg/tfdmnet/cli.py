#!/usr/bin/env python3
"""
tfdm - train, evaluate and verify time-frequency domain mixture networks

Usage:
    tfdm train --preset tfdm-lenet --data-dir mnist/ --epochs 5 --seed 1
    tfdm eval --checkpoint runs/<stamp>/best.ckpt --data-dir mnist/
    tfdm verify --level fast --seed 7
    tfdm count-ops --preset tfdm-lenet --compare lenet-cnn
    tfdm presets [--show NAME]

Human-oriented progress goes to stderr; results are key=value lines on stdout.
"""

import argparse
import json
import os
import platform
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from tfdmnet import __version__
from tfdmnet.checkpoint import load_checkpoint, save_checkpoint
from tfdmnet.config import NetworkConfig, config_digest, dump_config, load_config
from tfdmnet.console import Colors, emit, print_error, print_failure, print_info, print_success, print_warning
from tfdmnet.data import load_dataset
from tfdmnet.errors import DivergenceError
from tfdmnet.models import build_network, get_preset, preset_names, presets
from tfdmnet.opcount import C_FFT, compare_report, count_ops
from tfdmnet.training import MetricsLog, TrainRunConfig, evaluate, train
from tfdmnet.validate import format_validation_result, validate_config
from tfdmnet.verify import LEVELS, run_suite

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_DIVERGED = 3
EXIT_INTERRUPTED = 130

DATA_DIR_ENV = "TFDM_DATA_DIR"

EXIT_CODES_HELP = """
Exit codes:
  0    success
  1    verification failure (verify) or unexpected error
  2    input error: bad flags, config, dataset or checkpoint
  3    training diverged (non-finite loss or gradient); last_good.ckpt is written
  130  interrupted
"""


class HelpFormatter(argparse.RawDescriptionHelpFormatter, argparse.ArgumentDefaultsHelpFormatter):
    pass


# =============================================================================
# Helpers
# =============================================================================


def resolve_config(preset: Optional[str], config_path: Optional[str]) -> NetworkConfig:
    """Preset name or YAML path to a validated NetworkConfig."""
    cfg = load_config(Path(config_path)) if config_path else get_preset(preset)
    result = validate_config(cfg)
    if not result.is_valid:
        print(format_validation_result(result, verbose=False), file=sys.stderr)
    for warning in result.warnings:
        print_warning(warning)
    return cfg


def _resolve_other(name: str) -> NetworkConfig:
    if Path(name).is_file():
        return load_config(Path(name))
    return get_preset(name)


def _data_dir(arg: Optional[str]) -> Optional[Path]:
    value = arg or os.environ.get(DATA_DIR_ENV)
    if not value:
        return None
    path = Path(value)
    if not path.is_dir():
        raise FileNotFoundError(f"data directory not found: {path}")
    return path


def _default_out() -> Path:
    return Path("runs") / datetime.now().strftime("%Y%m%d-%H%M%S")


def write_manifest(path: Path, command: str, cfg: NetworkConfig, **fields) -> Path:
    """JSON record of a run (config digest, seed, library versions) written to path."""
    manifest = {
        "command": command,
        "config": cfg.name,
        "config_digest": config_digest(cfg).hex(),
        **fields,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pyyaml": yaml.__version__,
            "tfdmnet": __version__,
        },
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# =============================================================================
# Commands
# =============================================================================


def cmd_train(args):
    """Train a network and write checkpoints, metrics and a manifest."""
    cfg = resolve_config(args.preset, args.config)
    recipe = cfg.recipe
    epochs = args.epochs if args.epochs is not None else recipe.epochs
    batch_size = args.batch_size or recipe.batch_size
    threads = 1 if args.deterministic else max(1, args.threads)

    train_ds, test_ds = load_dataset(
        cfg.dataset, _data_dir(args.data_dir), cfg.input_shape, cfg.classes, seed=args.seed
    )
    if args.subset:
        train_ds = train_ds.subset(args.subset)
    if args.test_subset:
        test_ds = test_ds.subset(args.test_subset)

    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    run_fields = dict(
        seed=args.seed, threads=threads, precision=args.precision,
        deterministic=args.deterministic, epochs=epochs, batch_size=batch_size,
        train_samples=len(train_ds), test_samples=len(test_ds),
    )
    write_manifest(out / "manifest.json", "train", cfg, **run_fields)

    run_config = TrainRunConfig(
        epochs=epochs,
        batch_size=batch_size,
        seed=args.seed,
        lr_schedule=recipe.lr_schedule(args.lr),
        optimizer=args.optimizer or recipe.optimizer,
        momentum=recipe.momentum,
        weight_decay=recipe.weight_decay,
        eval_every=args.eval_every,
        threads=threads,
        deterministic=args.deterministic,
    )
    network = build_network(cfg, seed=args.seed, precision=args.precision)
    metrics = MetricsLog(out / "metrics.csv", deterministic=args.deterministic)

    print(f"\n{Colors.BOLD}Training {cfg.name}{Colors.RESET}", file=sys.stderr)
    print(f"{Colors.DIM}{'─' * 40}{Colors.RESET}", file=sys.stderr)
    print_info(f"{len(train_ds)} train / {len(test_ds)} test samples, {epochs} epochs, "
               f"batch {batch_size}, {run_config.optimizer}, {threads} thread(s)")
    print_info(f"{network.parameter_count():,} stored parameters, "
               f"{network.free_parameter_count():,} free")

    best = {"error": None}

    def on_epoch_end(record, optimizer):
        meta = {"seed": args.seed, "epoch": record.epoch, "step": record.step}
        save_checkpoint(network, out / "last.ckpt", optimizer, meta)
        score = record.test_error if record.test_error is not None else record.train_error
        if best["error"] is None or score < best["error"]:
            best["error"] = score
            save_checkpoint(network, out / "best.ckpt", optimizer, dict(meta, error=score))

    try:
        history = train(network, train_ds, test_ds, run_config, metrics=metrics,
                        on_epoch_end=on_epoch_end, log=print_info)
    except DivergenceError as e:
        snapshot = e.checkpoint
        if snapshot is not None:
            path = save_checkpoint(network, out / "last_good.ckpt", snapshot.optimizer,
                                   {"seed": args.seed, "epoch": snapshot.epoch, "step": snapshot.step})
            print_warning(f"restored weights from epoch {snapshot.epoch} saved to {path}")
        raise

    residual = max((record.imag_residual for record in history), default=0.0)
    emit("run_dir", str(out))
    emit("epochs", len(history))
    if history:
        last = history[-1]
        emit("train_error", last.train_error)
        if last.test_error is not None:
            emit("test_error", last.test_error)
        emit("fixation_leakage", last.fixation_leakage)
        emit("imag_residual", residual)
    if best["error"] is not None:
        emit("best_error", best["error"])
    results = {
        "epochs_run": len(history),
        "best_error": best["error"],
        "imag_residual": residual,
    }
    write_manifest(out / "manifest.json", "train", cfg, **run_fields, results=results)
    print_success(f"run written to {out}")
    return EXIT_OK


def cmd_eval(args):
    """Evaluate a checkpoint on its dataset's test split."""
    ckpt = load_checkpoint(Path(args.checkpoint))
    cfg = ckpt.config
    seed = int(ckpt.meta.get("seed", 0))
    _, test_ds = load_dataset(cfg.dataset, _data_dir(args.data_dir), cfg.input_shape, cfg.classes, seed=seed)
    if args.subset:
        test_ds = test_ds.subset(args.subset)
    print_info(f"{cfg.name} epoch {ckpt.meta.get('epoch', '?')}: {len(test_ds)} test samples")
    threads = max(1, args.threads)
    error = evaluate(ckpt.network, test_ds, batch_size=args.batch_size, threads=threads)
    emit("test_error", error)

    manifest = Path(args.manifest) if args.manifest else Path(args.checkpoint).with_suffix(".eval.json")
    write_manifest(
        manifest, "eval", cfg, seed=seed, threads=threads, checkpoint=str(args.checkpoint),
        epoch=ckpt.meta.get("epoch"), test_samples=len(test_ds), results={"test_error": error},
    )
    print_info(f"manifest written to {manifest}")
    return EXIT_OK


def cmd_verify(args):
    """Run the numerical oracle suite."""
    print(f"\n{Colors.BOLD}Verification ({args.level}, seed {args.seed}){Colors.RESET}", file=sys.stderr)
    print(f"{Colors.DIM}{'─' * 40}{Colors.RESET}", file=sys.stderr)
    results = run_suite(args.level, args.seed, progress=lambda result: print(result.line(), flush=True))
    failed = [result.name for result in results if not result.passed]
    emit("checks", len(results))
    emit("failed", len(failed))
    if failed:
        print_failure(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_VERIFY_FAILED
    print_success(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_count_ops(args):
    """Analytic op counts of one config, or a side-by-side comparison of two."""
    cfg = resolve_config(args.preset, args.config)
    if args.compare:
        comparison = compare_report(cfg, _resolve_other(args.compare), args.c_fft)
        text, table = comparison.render_text(), comparison.to_csv()
        first, second = comparison.first, comparison.second
        emit("first", first.name)
        emit("first_mult_ops", first.mult_total)
        emit("first_grand_total", first.grand_total)
        emit("second", second.name)
        emit("second_mult_ops", second.mult_total)
        emit("second_grand_total", second.grand_total)
        emit("ratio", comparison.ratio)
        emit("grand_ratio", comparison.grand_ratio)
    else:
        report = count_ops(cfg, args.c_fft)
        text, table = report.render_text(), report.to_csv()
        emit("config", report.name)
        emit("mult_ops", report.mult_total)
        emit("dft_ops", report.dft_total)
        emit("grand_total", report.grand_total)
        emit("params", report.param_total)
        emit("free_params", report.free_param_total)
        emit("fixation_ops", report.fixation_total)

    print(text, file=sys.stderr)
    outputs = [path for path in (args.csv, args.report) if path]
    if args.csv:
        Path(args.csv).write_text(table, encoding="utf-8")
        print_info(f"CSV written to {args.csv}")
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
        print_info(f"report written to {args.report}")
    if outputs:
        manifest = Path(outputs[0]).with_suffix(".manifest.json")
        write_manifest(
            manifest, "count-ops", cfg, seed=None, threads=1, c_fft=args.c_fft,
            compare=args.compare, outputs=outputs,
        )
    return EXIT_OK


def cmd_presets(args):
    """List presets, or print one as a YAML config with its validation notes."""
    if args.show:
        cfg = get_preset(args.show)
        print(dump_config(cfg), end="")
        print(format_validation_result(validate_config(cfg), verbose=True), file=sys.stderr)
        return EXIT_OK

    table = presets()
    print(f"\n{Colors.BOLD}Presets{Colors.RESET}", file=sys.stderr)
    print(f"{Colors.DIM}{'─' * 40}{Colors.RESET}", file=sys.stderr)
    for name in preset_names():
        cfg = get_preset(name)
        if name not in table:
            print(f"{name:<26} alias of {cfg.name}")
            continue
        domains = sorted({spec.resolved_domain for spec in cfg.layers} - {None})
        print(f"{name:<26} {cfg.dataset:<9} {len(cfg.layers):>3} layers  domains={','.join(domains)}")
        if args.verbose:
            for note in cfg.assumed:
                print(f"{'':<26} {Colors.DIM}assumed: {note}{Colors.RESET}")
    return EXIT_OK


# =============================================================================
# Entry point
# =============================================================================


def _add_config_source(parser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=preset_names(), metavar="NAME",
                       help="Built-in network (see `tfdm presets`)")
    group.add_argument("--config", metavar="PATH", help="Network config YAML file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfdm",
        description="Frequency-domain layers and time-frequency mixture networks",
        formatter_class=HelpFormatter,
        epilog="""
Examples:
  tfdm train --preset tfdm-lenet --data-dir mnist/ --epochs 5 --seed 1
  tfdm eval --checkpoint runs/20240101-120000/best.ckpt --data-dir mnist/
  tfdm verify --level fast
  tfdm count-ops --preset alexnet-tfdm --compare alexnet-cnn
""" + EXIT_CODES_HELP,
    )
    parser.add_argument("-v", "--version", action="version", version=f"tfdm {__version__}")

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # train
    p_train = subparsers.add_parser(
        "train", help="Train a network", formatter_class=HelpFormatter, epilog=EXIT_CODES_HELP,
        description=f"""Train a preset or config file. Writes manifest.json, config.yaml,
metrics.csv, last.ckpt and best.ckpt under --out. The data directory falls
back to ${DATA_DIR_ENV}. Epochs, batch size, learning rate and optimizer
default to the config's recipe.""",
    )
    _add_config_source(p_train)
    p_train.add_argument("--data-dir", help=f"Dataset directory (default: ${DATA_DIR_ENV})")
    p_train.add_argument("--epochs", type=int, help="Epochs (default: recipe)")
    p_train.add_argument("--batch-size", type=int, help="Batch size, at least 2 (default: recipe)")
    p_train.add_argument("--seed", type=int, default=0, help="Seed for initialization, shuffling and dropout")
    p_train.add_argument("--lr", type=float, help="Base learning rate (default: recipe)")
    p_train.add_argument("--optimizer", choices=["rmsprop", "sgd"], help="Optimizer (default: recipe)")
    p_train.add_argument("--out", help="Run directory (default: ./runs/<timestamp>)")
    p_train.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                         help="Evaluation threads")
    p_train.add_argument("--deterministic", action="store_true",
                         help="Single-threaded, and metrics.csv seconds written as 0")
    p_train.add_argument("--subset", type=int, help="Train on the first N training samples")
    p_train.add_argument("--test-subset", type=int, help="Evaluate on the first N test samples")
    p_train.add_argument("--eval-every", type=int, default=1, help="Evaluate every N epochs")
    p_train.add_argument("--precision", choices=["float32", "float64"], default="float32",
                         help="Floating-point precision")
    p_train.set_defaults(func=cmd_train)

    # eval
    p_eval = subparsers.add_parser(
        "eval", help="Evaluate a checkpoint", formatter_class=HelpFormatter, epilog=EXIT_CODES_HELP,
        description="Print test_error=<value> for a checkpoint on its dataset's test split.",
    )
    p_eval.add_argument("--checkpoint", required=True, help="Checkpoint file")
    p_eval.add_argument("--data-dir", help=f"Dataset directory (default: ${DATA_DIR_ENV})")
    p_eval.add_argument("--batch-size", type=int, default=500, help="Evaluation batch size")
    p_eval.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="Evaluation threads")
    p_eval.add_argument("--subset", type=int, help="Evaluate on the first N test samples")
    p_eval.add_argument("--manifest", metavar="PATH",
                        help="Run manifest path (default: <checkpoint>.eval.json)")
    p_eval.set_defaults(func=cmd_eval)

    # verify
    p_verify = subparsers.add_parser(
        "verify", help="Run the numerical verification suite", formatter_class=HelpFormatter,
        epilog=EXIT_CODES_HELP,
        description="""Self-contained oracle checks: cross-correlation identity, EML versus
convolution, gradient check, Weight Fixation, dropout statistics, Parseval,
BatchNorm correspondence and DFT accuracy. One PASS/FAIL line per check.""",
    )
    p_verify.add_argument("--level", choices=LEVELS, default="fast", help="Suite size")
    p_verify.add_argument("--seed", type=int, default=0, help="Seed for the random inputs")
    p_verify.set_defaults(func=cmd_verify)

    # count-ops
    p_ops = subparsers.add_parser(
        "count-ops", help="Analytic operation counts", formatter_class=HelpFormatter,
        epilog=EXIT_CODES_HELP,
        description="""Per-layer real multiplies and DFT operations per sample. Totals go to
stdout as key=value lines, the table to stderr (and --report / --csv).""",
    )
    _add_config_source(p_ops)
    p_ops.add_argument("--compare", metavar="OTHER", help="Preset name or config path to compare against")
    p_ops.add_argument("--csv", metavar="PATH", help="Write the table as CSV")
    p_ops.add_argument("--report", metavar="PATH", help="Write the text table to a file")
    p_ops.add_argument("--c-fft", type=float, default=C_FFT, help="Constant in c * HW * C * log2(HW)")
    p_ops.set_defaults(func=cmd_count_ops)

    # presets
    p_presets = subparsers.add_parser(
        "presets", help="List built-in networks", formatter_class=HelpFormatter, epilog=EXIT_CODES_HELP,
    )
    p_presets.add_argument("--show", metavar="NAME", help="Print one preset as a config YAML")
    p_presets.add_argument("--verbose", "-v", action="store_true", help="Show assumption notes")
    p_presets.set_defaults(func=cmd_presets)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("\nAborted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except DivergenceError as e:
        print_error(f"training diverged: {e}")
        return EXIT_DIVERGED
    except (ValueError, OSError) as e:
        # ConfigError, DataFormatError, CheckpointError and missing files
        print_error(str(e))
        return EXIT_INPUT_ERROR
    except Exception as e:
        print_error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
