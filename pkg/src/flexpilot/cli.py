"""CLI entry point for flexpilot."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from functools import wraps
from pathlib import Path
from typing import Callable

import numpy as np

from .airgym import OBSERVATION_DIM, sample_observations
from .config import PipelineSpec
from .costmodel import CostCoefficients
from .dse import DesignSpace, recommend, run_dse
from .flexsim import AcceleratorConfig, auto_weight_buffer_kb, load_programmed, run_network, write_trace
from .log import get_log_file, log_cli_call, log_debug, log_error, log_info
from .manifest import ManifestError
from .parser import create_parser
from .paths import resolve_output_dir
from .pipeline import (
    CALIBRATION_STREAM,
    EVALUATION_FILENAME,
    PIPELINE_ERRORS,
    POLICY_DIR,
    PRUNING_FILENAME,
    VERIFY_STREAM,
    default_jobs,
    evaluate_policies,
    evaluation_dict,
    filter_policies,
    load_policies,
    plan_training,
    prune,
    quantize_and_verify,
    run_pipeline,
    save_policy,
    spec_from_manifest,
    stream_seed,
    train_policies,
)
from .quantnet import NetworkSpec, WeightSet, dequantize
from .report import (
    PLOT_FILES,
    RECOMMENDATION_FILENAME,
    RESULTS_FILENAME,
    plot_pareto,
    points_from_rows,
    read_results_csv,
    recommendation_dict,
    summary_lines,
    write_json,
    write_plots,
    write_results_csv,
)
from .weights import read_fxw, read_sidecar, write_fxw

# Errors a command reports as "Error: ..." with exit code 1
CLI_ERRORS = PIPELINE_ERRORS + (ManifestError, OSError, ValueError)


def reports_errors(func: Callable[[argparse.Namespace], int]) -> Callable[[argparse.Namespace], int]:
    """Log the invocation and turn package errors into exit code 1."""

    @wraps(func)
    def wrapper(args: argparse.Namespace) -> int:
        cmd_name = func.__name__.removeprefix("cmd_")
        params = {k: v for k, v in vars(args).items() if k not in ("func", "command") and v is not None}
        log_cli_call(cmd_name, params or None)
        try:
            return func(args)
        except CLI_ERRORS as e:
            log_error(f"{cmd_name}: {e}", stage=cmd_name)
            print(f"Error: {e}", file=sys.stderr)
            print(f"Details: {get_log_file()}", file=sys.stderr)
            return 1

    return wrapper


def _load_spec(args: argparse.Namespace) -> tuple[PipelineSpec, Path]:
    """Config file (or defaults) with the global flags applied, plus the output directory."""
    spec = PipelineSpec.load(Path(args.config)) if args.config else PipelineSpec()
    spec = spec.with_overrides(seed=args.seed, tolerance=args.tolerance)
    return spec, resolve_output_dir(args.out, spec.output_dir)


def _jobs(args: argparse.Namespace) -> int:
    return args.jobs or default_jobs()


def _sample_inputs(spec: PipelineSpec, net: NetworkSpec, count: int, stream: int) -> np.ndarray:
    """Observations for policies, uniform [-1, 1] vectors for other networks."""
    seed = stream_seed(spec.seed, stream)
    if net.input_dim == OBSERVATION_DIM:
        return sample_observations(spec.task.arena, count, seed, spec.task.obstacle_range)
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(count, net.input_dim))


# =============================================================================
# Policy commands
# =============================================================================


@reports_errors
def cmd_train(args: argparse.Namespace) -> int:
    """Train policy variants; succeeds when at least one instance trains."""
    spec, out_dir = _load_spec(args)
    jobs = plan_training(spec, args.variant)
    outcomes = train_policies(jobs, _jobs(args))

    trained = 0
    for outcome in outcomes:
        if outcome.succeeded:
            weights_path, _ = save_policy(outcome, out_dir)
            trained += 1
            print(f"{outcome.job.name:16} seed={outcome.job.seed:<10}  {weights_path}")
        else:
            print(f"{outcome.job.name:16} seed={outcome.job.seed:<10}  FAILED: {outcome.error}")

    log_info(f"train: {trained}/{len(outcomes)} instances trained", stage="train")
    if not trained:
        print("Error: every training instance failed", file=sys.stderr)
        return 1
    return 0


@reports_errors
def cmd_evaluate(args: argparse.Namespace) -> int:
    """Evaluate policies and write evaluation.json."""
    spec, out_dir = _load_spec(args)
    if args.episodes:
        spec = replace(spec, task=replace(spec.task, eval_episodes=args.episodes))
    paths = [Path(p) for p in args.weights] if args.weights else sorted((out_dir / POLICY_DIR).glob("*.fxw"))
    if not paths:
        print(f"Error: no policies found under {out_dir / POLICY_DIR}", file=sys.stderr)
        return 1

    reports = evaluate_policies(spec, load_policies(paths))
    write_json(out_dir / EVALUATION_FILENAME, evaluation_dict(reports, spec))
    for name, report in reports.items():
        print(
            f"{name:16} success={report.success_rate:.3f}  collisions={report.collisions}  "
            f"timeouts={report.timeouts}  mean_reward={report.mean_reward:.1f}"
        )
    return 0


@reports_errors
def cmd_filter(args: argparse.Namespace) -> int:
    """Prune by success rate; exit 1 when nothing survives."""
    spec, out_dir = _load_spec(args)
    source = Path(args.evaluation) if args.evaluation else out_dir / EVALUATION_FILENAME
    data = json.loads(source.read_text(encoding="utf-8"))
    rates = {name: float(entry["success_rate"]) for name, entry in data["policies"].items()}
    threshold = spec.task.success_threshold if args.threshold is None else args.threshold

    write_json(out_dir / PRUNING_FILENAME, prune(rates, threshold).to_dict())
    report = filter_policies(rates, threshold)
    for name in report.kept:
        print(f"keep   {name:16} {rates[name]:.3f}")
    for name in report.pruned:
        print(f"prune  {name:16} {rates[name]:.3f}")
    return 0


# =============================================================================
# Hardware commands
# =============================================================================


@reports_errors
def cmd_quantize(args: argparse.Namespace) -> int:
    """Quantize a policy at one precision and verify it; exit 1 on failure."""
    spec, _ = _load_spec(args)
    source = Path(args.weights)
    net, weights, meta = read_fxw(source)
    acc = spec.accelerator
    outcome = quantize_and_verify(
        net,
        weights,
        _sample_inputs(spec, net, acc.calibration_samples, CALIBRATION_STREAM),
        _sample_inputs(spec, net, acc.verify_samples, VERIFY_STREAM),
        acc.space.with_precisions([args.bits]),
        acc.tolerance,
        acc.drift_tolerance,
    )
    report = outcome.reports[args.bits]
    target = Path(args.output) if args.output else source.with_name(f"{source.stem}.q{args.bits}.fxw")
    write_fxw(target, net, weights, outcome.networks[args.bits], extra=meta.get("extra"))

    print(f"{target}  bits={args.bits}")
    print(
        f"max_err={report.max_err:.3g} (<= {report.tolerance:g})  "
        f"rel_drift={report.rel_drift:.3g} (<= {report.drift_tolerance:g})  "
        f"action_agreement={report.action_agreement:.2f}"
    )
    return 0


@reports_errors
def cmd_simulate(args: argparse.Namespace) -> int:
    """Run sampled inputs through one programmed accelerator."""
    spec, _ = _load_spec(args)
    path = Path(args.weights)
    quant = read_sidecar(path).get("quantization")
    if not quant:
        print(f"Error: {path} is not quantized; run quantize first", file=sys.stderr)
        return 1
    net, _, _ = read_fxw(path)
    bits = int(quant["bits"])
    config = AcceleratorConfig(
        num_pes=args.pes,
        mac_lanes=args.lanes,
        precision_bits=bits,
        weight_buffer_kb=args.weight_buffer_kb or auto_weight_buffer_kb(net, args.pes, bits),
        clock_mhz=args.clock_mhz,
    )
    acc = load_programmed(config, path)
    inputs = _sample_inputs(spec, net, args.inputs, VERIFY_STREAM)

    runs = []
    for i, x in enumerate(inputs):
        result = run_network(acc, x)
        if i == 0 and args.trace:
            write_trace(result.trace, Path(args.trace))
        q_values = dequantize(result.output)
        runs.append(
            {
                "cycles": result.cycle_count,
                "latency_us": result.latency_us(config),
                "action": int(np.argmax(q_values)),
                "layer_cycles": list(result.layer_cycles),
            }
        )

    if args.json:
        print(json.dumps({"config": config.to_dict(), "runs": runs}, indent=2))
        return 0
    print(f"{config.config_id}  weight_buffer={config.weight_buffer_kb} kB  clock={config.clock_mhz:g} MHz")
    for i, run in enumerate(runs):
        print(f"input {i}: {run['cycles']} cycles  {run['latency_us']:.3f} us  action={run['action']}")
    return 0


@reports_errors
def cmd_dse(args: argparse.Namespace) -> int:
    """Explore the design space; exit 0 iff a knee is found."""
    spec, out_dir = _load_spec(args)
    if args.weights:
        net, weights, _ = read_fxw(Path(args.weights))
    else:
        net = NetworkSpec.from_dims(args.dims)
        weights = WeightSet.random(net, np.random.default_rng(spec.seed))
    acc = spec.accelerator
    space: DesignSpace = acc.space
    coeffs = CostCoefficients.load(acc.coefficients)

    report = run_dse(
        space,
        net,
        weights,
        coeffs,
        _sample_inputs(spec, net, acc.calibration_samples, CALIBRATION_STREAM),
        _sample_inputs(spec, net, acc.verify_samples, VERIFY_STREAM),
        acc.tolerance,
        acc.drift_tolerance,
        _jobs(args),
    )
    write_results_csv(report, out_dir / RESULTS_FILENAME)
    write_plots(report, out_dir)
    objective = args.objective or spec.objective
    vehicle = args.vehicle or spec.target_vehicle_class
    chosen = recommend(report, objective, vehicle)
    write_json(out_dir / RECOMMENDATION_FILENAME, recommendation_dict(report, chosen, objective, vehicle))

    print(f"{len(report.feasible())}/{len(report.records)} feasible candidates -> {out_dir}")
    for pair, config_id in sorted(report.knees.items()):
        print(f"knee {pair}: {config_id}")
    print(f"selected ({objective}): {chosen.config_id} [{chosen.vehicle_class}]")
    return 0 if report.knees else 1


# =============================================================================
# Flow commands
# =============================================================================


@reports_errors
def cmd_pipeline(args: argparse.Namespace) -> int:
    """Run the full flow; exit 0 iff a knee recommendation is produced."""
    if args.from_manifest:
        spec = spec_from_manifest(Path(args.from_manifest))
        out_dir = resolve_output_dir(args.out, spec.output_dir)
    else:
        spec, out_dir = _load_spec(args)

    result = run_pipeline(spec, out_dir, _jobs(args))
    selected = result.recommendation["selected"]
    print(f"output: {out_dir}")
    for pair, config_id in sorted(result.recommendation["knees"].items()):
        print(f"knee {pair}: {config_id}")
    print(
        f"selected: {selected['config_id']}  {selected['latency_us']:.2f} us  "
        f"{selected['power_w']:.3f} W  {selected['area_mm2']:.2f} mm2  [{selected['vehicle_class']}]"
    )
    return 0 if result.has_knee else 1


@reports_errors
def cmd_report(args: argparse.Namespace) -> int:
    """Re-draw plots next to a results table and print its Pareto members."""
    _, out_dir = _load_spec(args)
    source = Path(args.results) if args.results else out_dir / RESULTS_FILENAME
    rows = read_results_csv(source)
    for pair, (filename, _) in PLOT_FILES.items():
        plot_pareto(points_from_rows(rows, pair), pair, source.parent / filename)
    for line in summary_lines(rows):
        print(line)
    return 0


def cmd_self_test(args: argparse.Namespace) -> int:
    """Run the built-in tests; exit 0 iff none fail."""
    from .testing import run_all_tests

    log_cli_call("self-test", {"slow": args.slow, "filter": args.name_filter})
    results, passed, failed = run_all_tests(include_slow=args.slow, name_filter=args.name_filter)
    for result in results:
        mark = "✓" if result.passed else "✗"
        if not result.passed:
            log_debug(f"self-test {result.name} failed: {result.message}", stage="self-test")
        line = f"{mark} {result.name}"
        if not result.passed and result.message:
            line = f"{line}: {result.message}"
        print(line)
    print(f"\n{passed} passed, {failed} failed")
    return 0 if failed == 0 else 1


def main() -> int:
    """Main entry point."""
    parser = create_parser(
        cmd_train=cmd_train,
        cmd_evaluate=cmd_evaluate,
        cmd_filter=cmd_filter,
        cmd_quantize=cmd_quantize,
        cmd_simulate=cmd_simulate,
        cmd_dse=cmd_dse,
        cmd_pipeline=cmd_pipeline,
        cmd_report=cmd_report,
        cmd_self_test=cmd_self_test,
    )
    args = parser.parse_args()
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
