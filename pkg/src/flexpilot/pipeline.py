"""Two-phase flow: train and prune policies, then co-design their accelerator.

Stages run as barriers in order: train, evaluate, filter, quantize (with
verification), dse, report. Training instances and DSE candidates run
concurrently inside their stage and exchange data by value only.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from . import __version__
from .airgym import (
    ArenaGenerationError,
    ArenaSpec,
    DivergenceError,
    DQNHyper,
    EvaluationReport,
    TrainingLog,
    arena_factory,
    dqn_train,
    evaluate,
    sample_observations,
)
from .config import ConfigError, NetVariant, PipelineSpec
from .costmodel import CoefficientsError, CostCoefficients, grid_configs
from .dse import DesignSpace, DseError, DseReport, VerificationFailedError, recommend, run_dse
from .flexsim import FlexsimError, VerificationReport, configure, verify_against_reference
from .log import get_stage_logger
from .manifest import RunManifest
from .quantnet import NetworkSpec, QuantizedNetwork, QuantnetError, WeightSet, quantize_network
from .report import RECOMMENDATION_FILENAME, RESULTS_FILENAME, recommendation_dict, write_json, write_plots, write_results_csv
from .weights import WeightFileError, read_fxw, write_fxw

EVALUATION_FILENAME = "evaluation.json"
PRUNING_FILENAME = "pruning.json"
VERIFICATION_FILENAME = "verification.json"
POLICY_DIR = "policies"
LOG_DIR = "logs"

# Independent random streams derived from the run seed
TRAIN_STREAM = 0
EVAL_STREAM = 1
CALIBRATION_STREAM = 2
VERIFY_STREAM = 3


class NoSurvivorsError(RuntimeError):
    """Every policy fell below the success-rate threshold."""


class StageError(RuntimeError):
    """A pipeline stage failed; downstream stages did not run."""

    def __init__(self, stage: str, message: str) -> None:
        self.stage = stage
        super().__init__(f"{stage}: {message}")


PIPELINE_ERRORS = (
    ArenaGenerationError,
    CoefficientsError,
    ConfigError,
    DivergenceError,
    DseError,
    FlexsimError,
    NoSurvivorsError,
    QuantnetError,
    StageError,
    WeightFileError,
)


def default_jobs() -> int:
    return os.cpu_count() or 1


def stream_seed(seed: int, stream: int) -> int:
    """Seed for one named random stream of a run."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


# =============================================================================
# Training
# =============================================================================


@dataclass(frozen=True)
class TrainJob:
    name: str
    variant: NetVariant
    seed: int
    hyper: DQNHyper
    arena: ArenaSpec
    obstacle_range: tuple[int, int]


@dataclass
class TrainOutcome:
    job: TrainJob
    weights: WeightSet | None = None
    log: TrainingLog | None = None
    error: str | None = None

    @property
    def succeeded(self) -> bool:
        return self.error is None


def plan_training(spec: PipelineSpec, only: Sequence[str] | None = None) -> list[TrainJob]:
    """One job per (variant, instance); every job gets its own seed."""
    variants = [v for v in spec.training.variants if only is None or v.name in only]
    if only is not None and len(variants) != len(set(only)):
        known = [v.name for v in spec.training.variants]
        raise ConfigError(f"unknown variant in {list(only)} (configured: {known})")
    count = len(variants) * spec.training.instances
    children = np.random.SeedSequence([spec.seed, TRAIN_STREAM]).spawn(count)
    jobs = []
    for i, (variant, instance) in enumerate((v, k) for v in variants for k in range(spec.training.instances)):
        name = variant.name if spec.training.instances == 1 else f"{variant.name}-i{instance}"
        jobs.append(
            TrainJob(
                name=name,
                variant=variant,
                seed=int(children[i].generate_state(1)[0]),
                hyper=spec.training.hyper,
                arena=spec.task.arena,
                obstacle_range=spec.task.obstacle_range,
            )
        )
    return jobs


def _train_worker(job: TrainJob) -> TrainOutcome:
    torch.set_num_threads(1)
    factory = arena_factory(job.arena, job.seed, job.obstacle_range)
    try:
        weights, log = dqn_train(factory, job.variant.network(), job.hyper, job.seed)
    except DivergenceError as e:
        get_stage_logger("train", job.name).error(f"diverged: {e}")
        return TrainOutcome(job, error=str(e))
    return TrainOutcome(job, weights, log)


def train_policies(jobs: Sequence[TrainJob], workers: int = 1) -> list[TrainOutcome]:
    """Train every job; a diverging instance is reported without stopping the others."""
    if workers <= 1 or len(jobs) <= 1:
        return [_train_worker(job) for job in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_train_worker, jobs))


def save_policy(outcome: TrainOutcome, out_dir: Path) -> tuple[Path, Path]:
    """Write ``policies/<name>.fxw`` (+ sidecar) and ``logs/<name>.csv``."""
    job = outcome.job
    weights_path = Path(out_dir) / POLICY_DIR / f"{job.name}.fxw"
    write_fxw(weights_path, job.variant.network(), outcome.weights, extra={"variant": job.variant.name, "seed": job.seed})
    log_path = Path(out_dir) / LOG_DIR / f"{job.name}.csv"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    outcome.log.write_csv(log_path)
    return weights_path, log_path


# =============================================================================
# Evaluation and pruning
# =============================================================================


def evaluate_policies(
    spec: PipelineSpec, policies: Mapping[str, tuple[NetworkSpec, WeightSet]]
) -> dict[str, EvaluationReport]:
    """Greedy evaluation of each policy on the same seeded episodes."""
    seed = stream_seed(spec.seed, EVAL_STREAM)
    reports = {}
    for name, (net, weights) in sorted(policies.items()):
        report = evaluate(weights, net, spec.task.arena, spec.task.eval_episodes, seed, spec.task.obstacle_range)
        get_stage_logger("evaluate", name).info(f"success rate {report.success_rate:.3f} over {report.episodes}")
        reports[name] = report
    return reports


def evaluation_dict(reports: Mapping[str, EvaluationReport], spec: PipelineSpec) -> dict:
    return {
        "episodes": spec.task.eval_episodes,
        "seed": stream_seed(spec.seed, EVAL_STREAM),
        "policies": {name: r.to_dict() for name, r in sorted(reports.items())},
    }


@dataclass(frozen=True)
class PruningReport:
    threshold: float
    rates: dict[str, float]
    kept: tuple[str, ...]
    pruned: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "rates": dict(sorted(self.rates.items())),
            "kept": list(self.kept),
            "pruned": list(self.pruned),
        }


def prune(rates: Mapping[str, float], threshold: float) -> PruningReport:
    """Split policies at ``success_rate >= threshold``."""
    if not 0 <= threshold <= 1:
        raise ConfigError(f"threshold must lie in [0, 1], got {threshold}")
    names = sorted(rates)
    kept = tuple(n for n in names if rates[n] >= threshold)
    pruned = tuple(n for n in names if rates[n] < threshold)
    return PruningReport(threshold, dict(rates), kept, pruned)


def filter_policies(rates: Mapping[str, float], threshold: float) -> PruningReport:
    """Like ``prune`` but raises when nothing survives.

    Raises:
        NoSurvivorsError: No policy reaches the threshold
    """
    report = prune(rates, threshold)
    if not report.kept:
        best = max(rates.values(), default=0.0)
        raise NoSurvivorsError(f"no policy reaches success rate {threshold} (best {best:.3f})")
    return report


def select_policy(rates: Mapping[str, float], kept: Sequence[str], sizes: Mapping[str, int]) -> str:
    """Best surviving policy: highest success rate, then fewest weights, then name."""
    return min(kept, key=lambda n: (-rates[n], sizes[n], n))


# =============================================================================
# Quantization with verification fallback
# =============================================================================


@dataclass
class QuantizationOutcome:
    networks: dict[int, QuantizedNetwork] = field(default_factory=dict)
    reports: dict[int, VerificationReport] = field(default_factory=dict)
    attempts: list[dict] = field(default_factory=list)

    @property
    def passed_bits(self) -> list[int]:
        return sorted(bits for bits, r in self.reports.items() if r.passed)

    def to_dict(self) -> dict:
        return {"attempts": self.attempts, "passed_bits": self.passed_bits}


def quantize_and_verify(
    net: NetworkSpec,
    weights: WeightSet,
    calibration: np.ndarray,
    verify_inputs: np.ndarray,
    space: DesignSpace,
    tolerance: float,
    drift_tolerance: Mapping[int, float],
) -> QuantizationOutcome:
    """Quantize at each precision of the space, narrowest first, and verify on the accelerator.

    A precision that fails verification is dropped, so a 4-bit failure falls
    back to 8-bit.

    Raises:
        VerificationFailedError: No precision passes
    """
    log = get_stage_logger("quantize")
    outcome = QuantizationOutcome()
    for bits in sorted(space.precision_choices):
        config = next(
            (
                c
                for c, reason in grid_configs(net, space.pe_choices, space.lane_choices, (bits,), space.clock_choices[:1])
                if reason is None
            ),
            None,
        )
        if config is None:
            outcome.attempts.append({"bits": bits, "status": "infeasible"})
            log.info(f"{bits}-bit: no feasible accelerator in the space")
            continue
        network = quantize_network(net, weights, calibration, bits)
        report = verify_against_reference(
            configure(config, net, network), net, weights, verify_inputs, tolerance, drift_tolerance.get(bits)
        )
        outcome.networks[bits] = network
        outcome.reports[bits] = report
        outcome.attempts.append(
            {"bits": bits, "config_id": config.config_id, "status": "passed" if report.passed else "failed", **report.to_dict()}
        )
        if not report.passed:
            log.info(f"{bits}-bit failed verification, falling back")
    if not outcome.passed_bits:
        raise VerificationFailedError(f"no precision in {sorted(space.precision_choices)} passes verification")
    return outcome


# =============================================================================
# Full run
# =============================================================================


@dataclass
class PipelineResult:
    out_dir: Path
    manifest: RunManifest
    recommendation: dict | None = None
    dse: DseReport | None = None

    @property
    def has_knee(self) -> bool:
        return self.recommendation is not None and bool(self.recommendation.get("knees"))


def run_pipeline(spec: PipelineSpec, out_dir: Path, jobs: int = 1) -> PipelineResult:
    """Run every stage into ``out_dir``; the manifest is written even on failure.

    Raises:
        StageError: A stage failed (the manifest records which)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = spec.digest()[:12]
    log = get_stage_logger("pipeline", run_id)
    manifest = RunManifest(__version__, spec.digest(), spec.to_dict(), seeds={"run": spec.seed})
    result = PipelineResult(out_dir, manifest)
    current = "setup"
    log.info(f"pipeline start -> {out_dir}")
    try:
        coeffs = CostCoefficients.load(spec.accelerator.coefficients)

        current = "train"
        with manifest.stage(current) as stage:
            plan = plan_training(spec)
            manifest.seeds.update({f"train.{job.name}": job.seed for job in plan})
            outcomes = train_policies(plan, jobs)
            trained = [o for o in outcomes if o.succeeded]
            failed = [o for o in outcomes if not o.succeeded]
            for outcome in trained:
                save_policy(outcome, out_dir)
            stage.detail = f"{len(trained)}/{len(outcomes)} instances trained"
            if failed:
                stage.detail += "; failed: " + ", ".join(f"{o.job.name} ({o.error})" for o in failed)
            if not trained:
                raise StageError(current, "every training instance failed")
        policies = {o.job.name: (o.job.variant.network(), o.weights) for o in trained}

        current = "evaluate"
        with manifest.stage(current):
            manifest.seeds["evaluate"] = stream_seed(spec.seed, EVAL_STREAM)
            reports = evaluate_policies(spec, policies)
            write_json(out_dir / EVALUATION_FILENAME, evaluation_dict(reports, spec))
        rates = {name: r.success_rate for name, r in reports.items()}

        current = "filter"
        with manifest.stage(current) as stage:
            pruning = prune(rates, spec.task.success_threshold)
            write_json(out_dir / PRUNING_FILENAME, pruning.to_dict())
            filter_policies(rates, spec.task.success_threshold)
            stage.detail = f"kept {list(pruning.kept)}"

        current = "quantize"
        with manifest.stage(current) as stage:
            chosen = select_policy(rates, pruning.kept, {n: net.weight_count for n, (net, _) in policies.items()})
            net, weights = policies[chosen]
            manifest.seeds["calibration"] = stream_seed(spec.seed, CALIBRATION_STREAM)
            manifest.seeds["verify"] = stream_seed(spec.seed, VERIFY_STREAM)
            calibration = sample_observations(
                spec.task.arena, spec.accelerator.calibration_samples, manifest.seeds["calibration"], spec.task.obstacle_range
            )
            verify_inputs = sample_observations(
                spec.task.arena, spec.accelerator.verify_samples, manifest.seeds["verify"], spec.task.obstacle_range
            )
            quant = quantize_and_verify(
                net,
                weights,
                calibration,
                verify_inputs,
                spec.accelerator.space,
                spec.accelerator.tolerance,
                spec.accelerator.drift_tolerance,
            )
            write_json(out_dir / VERIFICATION_FILENAME, {"policy": chosen, **quant.to_dict()})
            deploy_bits = quant.passed_bits[0]
            write_fxw(
                out_dir / POLICY_DIR / f"{chosen}.fxw",
                net,
                weights,
                quant.networks[deploy_bits],
                extra={"selected": True},
            )
            stage.detail = f"{chosen} passes at {quant.passed_bits} bits"

        current = "dse"
        with manifest.stage(current) as stage:
            dse_report = run_dse(
                spec.accelerator.space.with_precisions(quant.passed_bits),
                net,
                weights,
                coeffs,
                calibration,
                verify_inputs,
                spec.accelerator.tolerance,
                spec.accelerator.drift_tolerance,
                jobs,
            )
            result.dse = dse_report
            stage.detail = f"{len(dse_report.feasible())}/{len(dse_report.records)} feasible, knees {dse_report.knees}"

        current = "report"
        with manifest.stage(current) as stage:
            write_results_csv(dse_report, out_dir / RESULTS_FILENAME)
            write_plots(dse_report, out_dir)
            selected = recommend(dse_report, spec.objective, spec.target_vehicle_class)
            recommendation = recommendation_dict(dse_report, selected, spec.objective, spec.target_vehicle_class)
            recommendation["policy"] = chosen
            write_json(out_dir / RECOMMENDATION_FILENAME, recommendation)
            result.recommendation = recommendation
            stage.detail = f"selected {selected.config_id} ({selected.vehicle_class})"

        manifest.completed = True
        log.info(f"pipeline done: {result.recommendation['selected']['config_id']}")
    except PIPELINE_ERRORS as e:
        log.error(f"stage {current} failed: {e}")
        if isinstance(e, StageError):
            raise
        raise StageError(current, str(e)) from e
    finally:
        manifest.write(out_dir)
    return result


def spec_from_manifest(path: Path) -> PipelineSpec:
    """Rebuild the pipeline configuration embedded in a manifest."""
    manifest = RunManifest.load(path)
    spec = PipelineSpec.from_dict(manifest.config, Path(path).parent)
    if spec.digest() != manifest.config_hash:
        raise ConfigError(f"{path}: embedded config does not match its hash")
    return spec


def load_policies(paths: Sequence[Path]) -> dict[str, tuple[NetworkSpec, WeightSet]]:
    """Read FXW1 files keyed by file stem."""
    return {Path(p).stem: read_fxw(p)[:2] for p in paths}
