"""Design space exploration over the accelerator template."""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costmodel import (
    NO_VEHICLE_CLASS,
    VEHICLE_CLASSES,
    CandidateMetrics,
    CostCoefficients,
    evaluate_candidate,
    grid_configs,
)
from .flexsim import (
    LEGAL_LANES,
    LEGAL_PES,
    LEGAL_PRECISIONS,
    AcceleratorConfig,
    VerificationReport,
    configure,
    run_network,
    verify_against_reference,
)
from .flexsim.base import DEFAULT_CLOCK_MHZ
from .log import get_stage_logger
from .quantnet import NetworkSpec, QuantizedNetwork, WeightSet, quantize_network

# Objective pairs: (name, x metric, y metric); x is always latency
OBJECTIVE_PAIRS = (
    ("lat_power", "latency_us", "power_w"),
    ("lat_area", "latency_us", "area_mm2"),
)

OBJECTIVES = ("knee", "energy", "latency", "power", "area")

# Signed distances within this of each other count as tied
KNEE_TIE_EPSILON = 1e-12


class DseError(RuntimeError):
    """Exploration could not produce a result."""


class VerificationFailedError(DseError):
    """The quantized network misses the accelerator tolerance."""


class InvalidPointError(ValueError):
    """Non-finite objective values."""


@dataclass(frozen=True)
class DesignSpace:
    """Cartesian product of template choices."""

    pe_choices: tuple[int, ...] = LEGAL_PES
    lane_choices: tuple[int, ...] = LEGAL_LANES
    precision_choices: tuple[int, ...] = LEGAL_PRECISIONS
    clock_choices: tuple[float, ...] = (DEFAULT_CLOCK_MHZ,)

    def __post_init__(self) -> None:
        checks = (
            ("pe_choices", self.pe_choices, LEGAL_PES),
            ("lane_choices", self.lane_choices, LEGAL_LANES),
            ("precision_choices", self.precision_choices, LEGAL_PRECISIONS),
        )
        for name, values, legal in checks:
            if not values:
                raise DseError(f"{name} is empty")
            bad = [v for v in values if v not in legal]
            if bad:
                raise DseError(f"{name} has illegal values {bad} (legal: {legal})")
        if not self.clock_choices or any(not (c > 0 and math.isfinite(c)) for c in self.clock_choices):
            raise DseError(f"clock_choices must be positive, got {self.clock_choices}")

    @property
    def size(self) -> int:
        return len(self.pe_choices) * len(self.lane_choices) * len(self.precision_choices) * len(self.clock_choices)

    def to_dict(self) -> dict:
        return {
            "pes": list(self.pe_choices),
            "lanes": list(self.lane_choices),
            "precisions": list(self.precision_choices),
            "clocks_mhz": list(self.clock_choices),
        }

    @classmethod
    def from_dict(cls, data: dict) -> DesignSpace:
        return cls(
            pe_choices=tuple(int(v) for v in data.get("pes", LEGAL_PES)),
            lane_choices=tuple(int(v) for v in data.get("lanes", LEGAL_LANES)),
            precision_choices=tuple(int(v) for v in data.get("precisions", LEGAL_PRECISIONS)),
            clock_choices=tuple(float(v) for v in data.get("clocks_mhz", (DEFAULT_CLOCK_MHZ,))),
        )

    def with_precisions(self, precisions: Sequence[int]) -> DesignSpace:
        return DesignSpace(self.pe_choices, self.lane_choices, tuple(precisions), self.clock_choices)


@dataclass
class DseRecord:
    """One candidate of the space with its outcome."""

    config: AcceleratorConfig
    feasible: bool
    reject_reason: str = ""
    metrics: CandidateMetrics | None = None
    pareto: dict[str, bool] = field(default_factory=dict)
    knee: dict[str, bool] = field(default_factory=dict)

    @property
    def config_id(self) -> str:
        return self.config.config_id

    @property
    def vehicle_class(self) -> str:
        return self.metrics.vehicle_class if self.metrics else NO_VEHICLE_CLASS


@dataclass(frozen=True)
class ParetoPoint:
    """A feasible candidate seen from one objective pair."""

    config_id: str
    x: float
    y: float
    dominated: bool
    knee: bool


@dataclass
class DseReport:
    records: list[DseRecord]
    coefficients_digest: str
    verification: dict[int, VerificationReport] = field(default_factory=dict)
    knees: dict[str, str] = field(default_factory=dict)  # pair name -> config_id

    def feasible(self) -> list[DseRecord]:
        return [r for r in self.records if r.feasible]

    def record(self, config_id: str) -> DseRecord:
        for r in self.records:
            if r.config_id == config_id:
                return r
        raise KeyError(config_id)

    def points(self, pair: str) -> list[ParetoPoint]:
        _, x_key, y_key = _pair(pair)
        return [
            ParetoPoint(
                r.config_id,
                getattr(r.metrics, x_key),
                getattr(r.metrics, y_key),
                not r.pareto[pair],
                r.knee[pair],
            )
            for r in self.feasible()
        ]

    def to_dict(self) -> dict:
        return {
            "coefficients_sha256": self.coefficients_digest,
            "candidates": len(self.records),
            "feasible": len(self.feasible()),
            "knees": dict(self.knees),
            "verification": {str(bits): report.to_dict() for bits, report in sorted(self.verification.items())},
        }


def _pair(name: str) -> tuple[str, str, str]:
    for pair in OBJECTIVE_PAIRS:
        if pair[0] == name:
            return pair
    raise DseError(f"unknown objective pair {name!r}")


# =============================================================================
# Enumeration, dominance and knee selection
# =============================================================================


def enumerate_space(space: DesignSpace, spec: NetworkSpec) -> list[DseRecord]:
    """All configurations of the space, feasible or not, sorted by config_id."""
    if space.size == 0:
        raise DseError("design space is empty")
    records = [
        DseRecord(config=config, feasible=reason is None, reject_reason=reason or "")
        for config, reason in grid_configs(
            spec, space.pe_choices, space.lane_choices, space.precision_choices, space.clock_choices
        )
    ]
    return sorted(records, key=lambda r: r.config_id)


def _check_points(points: Sequence[Sequence[float]]) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64).reshape(-1, 2) if len(points) else np.zeros((0, 2))
    if not np.all(np.isfinite(arr)):
        raise InvalidPointError("objective values must be finite")
    return arr


def pareto_front(points: Sequence[Sequence[float]]) -> list[bool]:
    """Membership mask for minimizing both coordinates.

    A point is dropped only if another point is no worse on both axes and
    strictly better on one; duplicates all stay on the front.
    """
    arr = _check_points(points)
    n = len(arr)
    member = [True] * n
    order = sorted(range(n), key=lambda i: (arr[i, 0], arr[i, 1]))
    best_y_left = math.inf  # min y among strictly smaller x
    i = 0
    while i < n:
        j = i
        x = arr[order[i], 0]
        while j < n and arr[order[j], 0] == x:
            j += 1
        group = order[i:j]
        group_min = min(arr[k, 1] for k in group)
        for k in group:
            y = arr[k, 1]
            if best_y_left <= y or group_min < y:
                member[k] = False
        best_y_left = min(best_y_left, group_min)
        i = j
    return member


def knee(points: Sequence[Sequence[float]]) -> int:
    """Index of the knee among front members.

    Axes are min-max normalized; the knee is the point farthest below the chord
    joining the two extreme members (lowest x, highest x). Distance is signed:
    points above the chord score negative, so a front with nothing below the
    chord returns its lowest-x member. Ties go to the lower x value. A single
    point is its own knee.
    """
    arr = _check_points(points)
    n = len(arr)
    if n == 0:
        raise InvalidPointError("knee of an empty front")
    if n == 1:
        return 0
    lo = arr.min(axis=0)
    span = arr.max(axis=0) - lo
    norm = (arr - lo) / np.where(span > 0, span, 1.0)

    order = sorted(range(n), key=lambda i: (norm[i, 0], -norm[i, 1], i))
    a, b = norm[order[0]], norm[order[-1]]
    chord = b - a
    length = float(np.hypot(*chord))
    if length == 0.0:
        return order[0]
    rel = norm - a
    # Cross product is negative below the chord; flip so "toward the origin" is positive
    distance = -(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length

    best = order[0]
    for i in order[1:]:
        if distance[i] > distance[best] + KNEE_TIE_EPSILON:
            best = i
        elif abs(distance[i] - distance[best]) <= KNEE_TIE_EPSILON and arr[i, 0] < arr[best, 0]:
            best = i
    return best


def _mark_fronts(records: list[DseRecord]) -> dict[str, str]:
    feasible = [r for r in records if r.feasible]
    knees: dict[str, str] = {}
    for name, x_key, y_key in OBJECTIVE_PAIRS:
        for r in records:
            r.pareto[name] = False
            r.knee[name] = False
        if not feasible:
            continue
        pts = [(getattr(r.metrics, x_key), getattr(r.metrics, y_key)) for r in feasible]
        mask = pareto_front(pts)
        front = [r for r, m in zip(feasible, mask) if m]
        for r in front:
            r.pareto[name] = True
        chosen = front[knee([(getattr(r.metrics, x_key), getattr(r.metrics, y_key)) for r in front])]
        chosen.knee[name] = True
        knees[name] = chosen.config_id
    return knees


# =============================================================================
# Exploration driver
# =============================================================================


def _simulate_and_cost(
    record: DseRecord,
    spec: NetworkSpec,
    network: QuantizedNetwork,
    sample_input: np.ndarray,
    coeffs: CostCoefficients,
) -> CandidateMetrics:
    metrics = evaluate_candidate(record.config, spec, coeffs)
    acc = configure(record.config, spec, network)
    result = run_network(acc, sample_input)
    if result.cycle_count != metrics.cycles:
        raise DseError(
            f"{record.config_id}: simulated {result.cycle_count} cycles, closed form {metrics.cycles}"
        )
    return metrics


def run_dse(
    space: DesignSpace,
    spec: NetworkSpec,
    weights: WeightSet,
    coeffs: CostCoefficients,
    calibration_inputs: np.ndarray,
    verify_inputs: np.ndarray | None = None,
    tolerance: float = 1e-3,
    drift_tolerance: dict[int, float] | None = None,
    jobs: int = 1,
) -> DseReport:
    """Enumerate, verify, simulate and cost every candidate, then mark fronts and knees.

    Raises:
        DseError: No feasible candidate
        VerificationFailedError: A precision in the space misses the tolerance
    """
    log = get_stage_logger("dse")
    records = enumerate_space(space, spec)
    feasible = [r for r in records if r.feasible]
    log.info(f"{len(records)} candidates, {len(feasible)} feasible, coefficients {coeffs.digest()[:12]}")
    if not feasible:
        raise DseError("no feasible candidate in the design space")

    calibration_inputs = np.atleast_2d(np.asarray(calibration_inputs, dtype=np.float64))
    verify_inputs = calibration_inputs if verify_inputs is None else np.atleast_2d(verify_inputs)
    sample_input = calibration_inputs[0]

    networks: dict[int, QuantizedNetwork] = {}
    verification: dict[int, VerificationReport] = {}
    for bits in sorted({r.config.precision_bits for r in feasible}):
        network = quantize_network(spec, weights, calibration_inputs, bits)
        reference = next(r for r in feasible if r.config.precision_bits == bits)
        report = verify_against_reference(
            configure(reference.config, spec, network),
            spec,
            weights,
            verify_inputs,
            tolerance,
            (drift_tolerance or {}).get(bits),
        )
        if not report.passed:
            raise VerificationFailedError(
                f"{bits}-bit network fails verification: max_err={report.max_err:.3g} "
                f"rel_drift={report.rel_drift:.3g}"
            )
        networks[bits] = network
        verification[bits] = report

    def evaluate(record: DseRecord) -> CandidateMetrics:
        return _simulate_and_cost(record, spec, networks[record.config.precision_bits], sample_input, coeffs)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for record, metrics in zip(feasible, pool.map(evaluate, feasible)):
            record.metrics = metrics

    knees = _mark_fronts(records)
    for name, config_id in knees.items():
        log.info(f"knee {name}: {config_id}")
    return DseReport(records, coeffs.digest(), verification, knees)


def recommend(report: DseReport, objective: str = "knee", vehicle: str | None = None) -> DseRecord:
    """Pick the deployment candidate.

    Args:
        report: Finished exploration
        objective: knee (of latency/power), or minimum energy/latency/power/area
        vehicle: Restrict to candidates within that vehicle class's power budget
    """
    if objective not in OBJECTIVES:
        raise DseError(f"unknown objective {objective!r} (expected one of {OBJECTIVES})")
    pool = report.feasible()
    if vehicle is not None:
        budgets = dict(VEHICLE_CLASSES)
        if vehicle not in budgets:
            raise DseError(f"unknown vehicle class {vehicle!r}")
        pool = [r for r in pool if r.metrics.power_w <= budgets[vehicle]]
    if not pool:
        raise DseError(f"no feasible candidate fits vehicle class {vehicle!r}")

    if objective == "knee":
        if vehicle is None and "lat_power" in report.knees:
            return report.record(report.knees["lat_power"])
        pts = [(r.metrics.latency_us, r.metrics.power_w) for r in pool]
        front = [r for r, m in zip(pool, pareto_front(pts)) if m]
        return front[knee([(r.metrics.latency_us, r.metrics.power_w) for r in front])]

    key = {"energy": "energy_uj", "latency": "latency_us", "power": "power_w", "area": "area_mm2"}[objective]
    return min(pool, key=lambda r: (getattr(r.metrics, key), r.metrics.latency_us, r.config_id))
