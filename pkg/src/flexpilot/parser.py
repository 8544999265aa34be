"""Argument parser setup for the flexpilot CLI."""

from __future__ import annotations

import argparse
from typing import TYPE_CHECKING

from . import __version__
from .costmodel import VEHICLE_CLASSES
from .dse import OBJECTIVES
from .flexsim import LEGAL_LANES, LEGAL_PES, LEGAL_PRECISIONS

if TYPE_CHECKING:
    from argparse import Namespace
    from typing import Callable

    CommandHandler = Callable[[Namespace], int]


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _dims(value: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in value.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated widths, got {value!r}") from e
    if len(dims) < 2:
        raise argparse.ArgumentTypeError("need at least an input and an output width")
    return dims


def _common_flags() -> argparse.ArgumentParser:
    """Flags every subcommand accepts; they override the config file."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="Pipeline configuration (JSON)")
    common.add_argument("--out", "-o", help="Output directory (default: output_dir from the config)")
    common.add_argument("--seed", type=int, help="Run seed (overrides the config)")
    common.add_argument(
        "--jobs",
        "-j",
        type=_positive_int,
        help="Parallel workers for training and DSE (default: CPU count)",
    )
    common.add_argument(
        "--tolerance",
        type=float,
        help="Max abs error between accelerator and software outputs (default 1e-3)",
    )
    return common


def create_parser(
    *,
    cmd_train: CommandHandler,
    cmd_evaluate: CommandHandler,
    cmd_filter: CommandHandler,
    cmd_quantize: CommandHandler,
    cmd_simulate: CommandHandler,
    cmd_dse: CommandHandler,
    cmd_pipeline: CommandHandler,
    cmd_report: CommandHandler,
    cmd_self_test: CommandHandler,
) -> argparse.ArgumentParser:
    """Create and configure the argument parser.

    Args:
        cmd_*: Command handler functions to attach to subparsers

    Returns:
        Configured ArgumentParser
    """
    parser = argparse.ArgumentParser(
        prog="flexpilot",
        description="Train navigation policies and co-design their FC accelerator",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
    )

    common = _common_flags()
    subparsers = parser.add_subparsers(dest="command", required=True)

    # train command
    train_parser = subparsers.add_parser(
        "train",
        parents=[common],
        help="Train the configured policy variants with DQN",
    )
    train_parser.add_argument(
        "--variant",
        "-v",
        action="append",
        help="Train only this variant (repeatable)",
    )
    train_parser.set_defaults(func=cmd_train)

    # evaluate command
    evaluate_parser = subparsers.add_parser(
        "evaluate",
        parents=[common],
        help="Measure policy success rates on fresh arenas",
    )
    evaluate_parser.add_argument(
        "--weights",
        "-w",
        nargs="+",
        help="FXW1 policy files (default: every policy under <out>/policies)",
    )
    evaluate_parser.add_argument(
        "--episodes",
        "-n",
        type=_positive_int,
        help="Episodes per policy (default: eval_episodes from the config)",
    )
    evaluate_parser.set_defaults(func=cmd_evaluate)

    # filter command
    filter_parser = subparsers.add_parser(
        "filter",
        parents=[common],
        help="Prune policies below the success-rate threshold",
    )
    filter_parser.add_argument(
        "--evaluation",
        help="evaluation.json to read (default: <out>/evaluation.json)",
    )
    filter_parser.add_argument(
        "--threshold",
        "-t",
        type=float,
        help="Minimum success rate (default: success_threshold from the config)",
    )
    filter_parser.set_defaults(func=cmd_filter)

    # quantize command
    quantize_parser = subparsers.add_parser(
        "quantize",
        parents=[common],
        help="Quantize a policy and verify it on the accelerator",
    )
    quantize_parser.add_argument("--weights", "-w", required=True, help="FXW1 policy file")
    quantize_parser.add_argument(
        "--bits",
        "-b",
        type=int,
        choices=LEGAL_PRECISIONS,
        default=8,
        help="Precision (default: 8)",
    )
    quantize_parser.add_argument(
        "--output",
        help="Quantized weight file (default: <weights stem>.q<bits>.fxw next to the input)",
    )
    quantize_parser.set_defaults(func=cmd_quantize)

    # simulate command
    simulate_parser = subparsers.add_parser(
        "simulate",
        parents=[common],
        help="Run a quantized policy on one accelerator configuration",
    )
    simulate_parser.add_argument("--weights", "-w", required=True, help="Quantized FXW1 policy file")
    simulate_parser.add_argument("--pes", type=int, choices=LEGAL_PES, default=8, help="Processing elements")
    simulate_parser.add_argument("--lanes", type=int, choices=LEGAL_LANES, default=16, help="MAC lanes per PE")
    simulate_parser.add_argument(
        "--weight-buffer-kb",
        type=int,
        help="Per-PE weight buffer (default: smallest that fits)",
    )
    simulate_parser.add_argument("--clock-mhz", type=float, default=300.0, help="Clock frequency")
    simulate_parser.add_argument(
        "--inputs",
        "-n",
        type=_positive_int,
        default=1,
        help="Number of sampled observations to run",
    )
    simulate_parser.add_argument("--trace", help="Write the event trace of the first input here")
    simulate_parser.add_argument(
        "--json",
        action="store_true",
        help="Output results as JSON",
    )
    simulate_parser.set_defaults(func=cmd_simulate)

    # dse command
    dse_parser = subparsers.add_parser(
        "dse",
        parents=[common],
        help="Explore the accelerator design space for one policy",
    )
    source = dse_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--weights", "-w", help="FXW1 policy file")
    source.add_argument(
        "--dims",
        type=_dims,
        help="Layer widths for a random-weight network, e.g. 160,64,25",
    )
    dse_parser.add_argument("--objective", choices=OBJECTIVES, help="Selection objective")
    dse_parser.add_argument(
        "--vehicle",
        choices=[name for name, _ in VEHICLE_CLASSES],
        help="Restrict the recommendation to a vehicle class power budget",
    )
    dse_parser.set_defaults(func=cmd_dse)

    # pipeline command
    pipeline_parser = subparsers.add_parser(
        "pipeline",
        parents=[common],
        help="Run train, evaluate, filter, quantize, dse and report",
    )
    pipeline_parser.add_argument(
        "--from-manifest",
        help="Re-run with the configuration embedded in a manifest.json",
    )
    pipeline_parser.set_defaults(func=cmd_pipeline)

    # report command
    report_parser = subparsers.add_parser(
        "report",
        parents=[common],
        help="Re-draw the Pareto plots and summarize a results table",
    )
    report_parser.add_argument("--results", help="results.csv (default: <out>/results.csv)")
    report_parser.set_defaults(func=cmd_report)

    # self-test command
    self_test_parser = subparsers.add_parser(
        "self-test",
        help="Run the built-in test suite",
    )
    self_test_parser.add_argument(
        "--slow",
        action="store_true",
        help="Include long-running checks (DQN learning signal)",
    )
    self_test_parser.add_argument(
        "--filter",
        "-k",
        dest="name_filter",
        help="Only run tests whose name contains this substring",
    )
    self_test_parser.set_defaults(func=cmd_self_test)

    return parser
