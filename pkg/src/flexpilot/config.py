"""Pipeline configuration (JSON, versioned)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .airgym import DEFAULT_ACTIONS, MAX_OBSTACLES, OBSERVATION_DIM, ArenaSpec, DQNHyper
from .costmodel import VEHICLE_CLASSES
from .dse import OBJECTIVES, DesignSpace, DseError
from .flexsim import DEFAULT_DRIFT_TOLERANCE
from .quantnet import NetworkSpec

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid pipeline configuration; the message names the offending key."""


@dataclass(frozen=True)
class NetVariant:
    """One policy architecture to train: hidden layer widths."""

    name: str
    hidden: tuple[int, ...]

    def network(self) -> NetworkSpec:
        return NetworkSpec.from_dims((OBSERVATION_DIM, *self.hidden, len(DEFAULT_ACTIONS)))


@dataclass(frozen=True)
class TaskConfig:
    arena: ArenaSpec = field(default_factory=ArenaSpec)
    obstacle_range: tuple[int, int] = (1, MAX_OBSTACLES)
    success_threshold: float = 0.8
    eval_episodes: int = 100


@dataclass(frozen=True)
class TrainingConfig:
    variants: tuple[NetVariant, ...] = (NetVariant("fc4096", (4096, 2048, 512)),)
    hyper: DQNHyper = field(default_factory=DQNHyper)
    instances: int = 1  # per variant


@dataclass(frozen=True)
class AcceleratorSection:
    space: DesignSpace = field(default_factory=DesignSpace)
    tolerance: float = 1e-3
    drift_tolerance: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_DRIFT_TOLERANCE))
    coefficients: Path | None = None  # None: packaged defaults
    calibration_samples: int = 64
    verify_samples: int = 32


@dataclass(frozen=True)
class PipelineSpec:
    task: TaskConfig = field(default_factory=TaskConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    accelerator: AcceleratorSection = field(default_factory=AcceleratorSection)
    objective: str = "knee"
    target_vehicle_class: str | None = None
    output_dir: str = "flexpilot-run"
    seed: int = 0

    # -------------------------------------------------------------------------

    def to_dict(self) -> dict:
        acc = self.accelerator
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "objective": self.objective,
            "target_vehicle_class": self.target_vehicle_class,
            "task": {
                "arena": asdict(self.task.arena),
                "obstacle_range": list(self.task.obstacle_range),
                "success_threshold": self.task.success_threshold,
                "eval_episodes": self.task.eval_episodes,
            },
            "training": {
                "variants": [{"name": v.name, "hidden": list(v.hidden)} for v in self.training.variants],
                "hyper": self.training.hyper.to_dict(),
                "instances": self.training.instances,
            },
            "accelerator": {
                "space": acc.space.to_dict(),
                "tolerance": acc.tolerance,
                "drift_tolerance": {str(k): v for k, v in sorted(acc.drift_tolerance.items())},
                "coefficients": str(acc.coefficients) if acc.coefficients else None,
                "calibration_samples": acc.calibration_samples,
                "verify_samples": acc.verify_samples,
            },
        }

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(
        self,
        seed: int | None = None,
        output_dir: str | None = None,
        tolerance: float | None = None,
    ) -> PipelineSpec:
        spec = self
        if seed is not None:
            spec = replace(spec, seed=seed)
        if output_dir is not None:
            spec = replace(spec, output_dir=str(output_dir))
        if tolerance is not None:
            if not tolerance > 0:
                raise ConfigError(f"tolerance must be positive, got {tolerance}")
            spec = replace(spec, accelerator=replace(spec.accelerator, tolerance=tolerance))
        return spec

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> PipelineSpec:
        """Validate and build; relative file references resolve against ``base_dir``."""
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        version = data.get("schema_version")
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {CONFIG_SCHEMA_VERSION}, got {version!r}")
        _reject_unknown(
            data,
            {"schema_version", "seed", "output_dir", "objective", "target_vehicle_class", "task", "training", "accelerator"},
            "",
        )
        spec = cls(
            task=_parse_task(_section(data, "task")),
            training=_parse_training(_section(data, "training")),
            accelerator=_parse_accelerator(_section(data, "accelerator"), base_dir),
            objective=_typed(data, "objective", str, "knee"),
            target_vehicle_class=_typed(data, "target_vehicle_class", str, None),
            output_dir=_typed(data, "output_dir", str, "flexpilot-run"),
            seed=_typed(data, "seed", int, 0),
        )
        if spec.objective not in OBJECTIVES:
            raise ConfigError(f"objective: expected one of {OBJECTIVES}, got {spec.objective!r}")
        vehicles = [name for name, _ in VEHICLE_CLASSES]
        if spec.target_vehicle_class is not None and spec.target_vehicle_class not in vehicles:
            raise ConfigError(f"target_vehicle_class: expected one of {vehicles}, got {spec.target_vehicle_class!r}")
        return spec

    @classmethod
    def load(cls, path: Path) -> PipelineSpec:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(data, path.parent)


# =============================================================================
# Section parsers
# =============================================================================


def _section(data: dict, key: str) -> dict:
    value = data.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected an object")
    return value


def _reject_unknown(data: dict, known: set[str], prefix: str) -> None:
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")


def _typed(data: dict, key: str, kind: type, default: Any, prefix: str = "") -> Any:
    if key not in data or data[key] is None:
        return default
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ConfigError(f"{prefix}{key}: expected {kind.__name__}, got {value!r}")
    return value


def _parse_task(data: dict) -> TaskConfig:
    _reject_unknown(data, {"arena", "obstacle_range", "success_threshold", "eval_episodes"}, "task.")
    arena_data = data.get("arena", {})
    known = {f.name for f in fields(ArenaSpec)}
    _reject_unknown(arena_data, known, "task.arena.")
    try:
        arena = ArenaSpec(**arena_data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"task.arena: {e}") from e
    raw_range = data.get("obstacle_range", [1, MAX_OBSTACLES])
    if (
        not isinstance(raw_range, list)
        or len(raw_range) != 2
        or not all(isinstance(v, int) for v in raw_range)
        or not 0 <= raw_range[0] <= raw_range[1] <= MAX_OBSTACLES
    ):
        raise ConfigError(f"task.obstacle_range: expected [lo, hi] within [0, {MAX_OBSTACLES}], got {raw_range!r}")
    threshold = _typed(data, "success_threshold", float, 0.8, "task.")
    if not 0 <= threshold <= 1:
        raise ConfigError(f"task.success_threshold: must lie in [0, 1], got {threshold}")
    episodes = _typed(data, "eval_episodes", int, 100, "task.")
    if episodes < 1:
        raise ConfigError("task.eval_episodes: must be >= 1")
    return TaskConfig(arena, (raw_range[0], raw_range[1]), threshold, episodes)


def _parse_training(data: dict) -> TrainingConfig:
    _reject_unknown(data, {"variants", "hyper", "instances"}, "training.")
    raw_variants = data.get("variants")
    if raw_variants is None:
        variants = TrainingConfig().variants
    else:
        if not isinstance(raw_variants, list) or not raw_variants:
            raise ConfigError("training.variants: expected a non-empty list")
        variants_list = []
        for i, item in enumerate(raw_variants):
            if not isinstance(item, dict) or "name" not in item or "hidden" not in item:
                raise ConfigError(f"training.variants[{i}]: expected {{name, hidden}}")
            hidden = item["hidden"]
            if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
                raise ConfigError(f"training.variants[{i}].hidden: expected a list of positive integers")
            variants_list.append(NetVariant(str(item["name"]), tuple(hidden)))
        names = [v.name for v in variants_list]
        if len(set(names)) != len(names):
            raise ConfigError("training.variants: names must be unique")
        variants = tuple(variants_list)
    hyper_data = data.get("hyper", {})
    _reject_unknown(hyper_data, {f.name for f in fields(DQNHyper)}, "training.hyper.")
    try:
        hyper = DQNHyper(**hyper_data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"training.hyper: {e}") from e
    instances = _typed(data, "instances", int, 1, "training.")
    if instances < 1:
        raise ConfigError("training.instances: must be >= 1")
    return TrainingConfig(variants, hyper, instances)


def _parse_accelerator(data: dict, base_dir: Path | None) -> AcceleratorSection:
    _reject_unknown(
        data,
        {"space", "tolerance", "drift_tolerance", "coefficients", "calibration_samples", "verify_samples"},
        "accelerator.",
    )
    try:
        space = DesignSpace.from_dict(data.get("space", {}))
    except (DseError, TypeError, ValueError) as e:
        raise ConfigError(f"accelerator.space: {e}") from e
    tolerance = _typed(data, "tolerance", float, 1e-3, "accelerator.")
    if not tolerance > 0:
        raise ConfigError("accelerator.tolerance: must be positive")
    drift = dict(DEFAULT_DRIFT_TOLERANCE)
    for key, value in data.get("drift_tolerance", {}).items():
        if key not in ("4", "8") or not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError(f"accelerator.drift_tolerance.{key}: expected a positive number for 4 or 8 bits")
        drift[int(key)] = float(value)
    coefficients = None
    if data.get("coefficients"):
        coefficients = Path(data["coefficients"]).expanduser()
        if not coefficients.is_absolute() and base_dir is not None:
            coefficients = (base_dir / coefficients).resolve()
        if not coefficients.exists():
            raise ConfigError(f"accelerator.coefficients: file not found: {coefficients}")
    calibration = _typed(data, "calibration_samples", int, 64, "accelerator.")
    verify = _typed(data, "verify_samples", int, 32, "accelerator.")
    if calibration < 1 or verify < 1:
        raise ConfigError("accelerator.calibration_samples / verify_samples: must be >= 1")
    return AcceleratorSection(space, tolerance, drift, coefficients, calibration, verify)
