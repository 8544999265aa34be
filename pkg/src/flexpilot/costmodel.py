"""Latency, power and area estimates for accelerator configurations.

Power and area are affine in PE count, MAC lanes and SRAM size; latency comes
from the closed-form cycle model. Coefficients are loaded from a versioned JSON
file so every result can be traced to the exact numbers used.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .flexsim.base import (
    DEFAULT_CLOCK_MHZ,
    LEGAL_LANES,
    LEGAL_PES,
    LEGAL_PRECISIONS,
    NOMINAL_VECTOR_WIDTH,
    AcceleratorConfig,
    CapacityExceededError,
    auto_weight_buffer_kb,
    check_capacity,
    cycles_to_us,
    network_cycles,
)
from .paths import default_coefficients_path
from .quantnet import NetworkSpec

COEFFICIENTS_SCHEMA_VERSION = 1

# (name, upper power bound in W); first match wins
VEHICLE_CLASSES = (
    ("pico", 0.1),
    ("nano", 5.0),
    ("micro", 50.0),
    ("std", math.inf),
)
NO_VEHICLE_CLASS = "none"

# Grid extremes the default coefficients are tuned to (policy network, full grid)
REFERENCE_RANGES = {
    "latency_us": (4.8, 60.2),
    "power_w": (0.142, 1.091),
    "area_mm2": (4.9, 39.2),
}
CALIBRATION_BAND = 0.30


class CoefficientsError(ValueError):
    """Malformed or incompatible coefficient file."""


@dataclass(frozen=True)
class CostCoefficients:
    """Affine power/area model terms."""

    power_base_w: float
    power_per_pe_w: float
    power_per_lane_w: float  # per PE per lane, nominal vector width, 8-bit
    power_per_sram_kb_w: float
    area_base_mm2: float
    area_per_pe_mm2: float
    area_per_lane_mm2: float
    area_per_sram_kb_mm2: float
    low_precision_mac_factor: float = 0.5  # 4-bit MAC relative to 8-bit
    reference_clock_mhz: float = DEFAULT_CLOCK_MHZ
    schema_version: int = COEFFICIENTS_SCHEMA_VERSION

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise CoefficientsError(f"{f.name} must be a finite non-negative number, got {value!r}")
        if self.schema_version != COEFFICIENTS_SCHEMA_VERSION:
            raise CoefficientsError(f"unsupported coefficients schema_version {self.schema_version}")
        if self.reference_clock_mhz <= 0:
            raise CoefficientsError("reference_clock_mhz must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> CostCoefficients:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"description"}
        if unknown:
            raise CoefficientsError(f"unknown coefficient keys: {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except TypeError as e:
            raise CoefficientsError(str(e)) from e

    @classmethod
    def load(cls, path: Path | None = None) -> CostCoefficients:
        path = Path(path) if path is not None else default_coefficients_path()
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise CoefficientsError(f"coefficients file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise CoefficientsError(f"{path}: invalid JSON ({e})") from e
        return cls.from_dict(data)

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, echoed into DSE reports."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CandidateMetrics:
    config_id: str
    latency_us: float
    power_w: float
    area_mm2: float
    energy_uj: float
    vehicle_class: str
    cycles: int


def _mac_factor(config: AcceleratorConfig, coeffs: CostCoefficients) -> float:
    precision = 1.0 if config.precision_bits == 8 else coeffs.low_precision_mac_factor
    return precision * config.vector_width / NOMINAL_VECTOR_WIDTH[config.precision_bits]


def affine_power(
    coeffs: CostCoefficients, pes: float, lanes_total: float, sram_kb: float, clock_ratio: float = 1.0
) -> float:
    """Power for raw resource counts; dynamic terms scale with clock."""
    dynamic = coeffs.power_per_pe_w * pes + coeffs.power_per_lane_w * lanes_total
    return coeffs.power_base_w + dynamic * clock_ratio + coeffs.power_per_sram_kb_w * sram_kb


def affine_area(coeffs: CostCoefficients, pes: float, lanes_total: float, sram_kb: float) -> float:
    return (
        coeffs.area_base_mm2
        + coeffs.area_per_pe_mm2 * pes
        + coeffs.area_per_lane_mm2 * lanes_total
        + coeffs.area_per_sram_kb_mm2 * sram_kb
    )


def _lanes_total(config: AcceleratorConfig, coeffs: CostCoefficients) -> float:
    return config.num_pes * config.mac_lanes * _mac_factor(config, coeffs)


def power_w(config: AcceleratorConfig, coeffs: CostCoefficients) -> float:
    return affine_power(
        coeffs,
        config.num_pes,
        _lanes_total(config, coeffs),
        config.total_buffer_kb,
        config.clock_mhz / coeffs.reference_clock_mhz,
    )


def area_mm2(config: AcceleratorConfig, coeffs: CostCoefficients) -> float:
    return affine_area(coeffs, config.num_pes, _lanes_total(config, coeffs), config.total_buffer_kb)


def latency_us(config: AcceleratorConfig, spec: NetworkSpec) -> float:
    """End-to-end latency of one inference; the network must fit the buffers."""
    check_capacity(spec, config)
    return cycles_to_us(network_cycles(spec, config), config)


def vehicle_class(power: float) -> str:
    """Smallest vehicle class whose power budget covers ``power`` watts."""
    if not math.isfinite(power) or power < 0:
        return NO_VEHICLE_CLASS
    for name, bound in VEHICLE_CLASSES:
        if power <= bound:
            return name
    return NO_VEHICLE_CLASS


def evaluate_candidate(config: AcceleratorConfig, spec: NetworkSpec, coeffs: CostCoefficients) -> CandidateMetrics:
    """Cost one configuration.

    Raises:
        CapacityExceededError: The network does not fit the configuration
    """
    check_capacity(spec, config)
    cycles = network_cycles(spec, config)
    latency = cycles_to_us(cycles, config)
    power = power_w(config, coeffs)
    return CandidateMetrics(
        config_id=config.config_id,
        latency_us=latency,
        power_w=power,
        area_mm2=area_mm2(config, coeffs),
        energy_uj=power * latency,
        vehicle_class=vehicle_class(power),
        cycles=cycles,
    )


# =============================================================================
# Grid helpers and calibration
# =============================================================================


def grid_configs(
    spec: NetworkSpec,
    pes: Sequence[int] = LEGAL_PES,
    lanes: Sequence[int] = LEGAL_LANES,
    precisions: Sequence[int] = LEGAL_PRECISIONS,
    clocks: Sequence[float] = (DEFAULT_CLOCK_MHZ,),
) -> Iterator[tuple[AcceleratorConfig, str | None]]:
    """Yield (config, reject reason) for the product grid, buffers auto-sized."""
    for p, l, bits, clock in itertools.product(pes, lanes, precisions, clocks):
        config = AcceleratorConfig(
            num_pes=p,
            mac_lanes=l,
            precision_bits=bits,
            weight_buffer_kb=auto_weight_buffer_kb(spec, p, bits),
            clock_mhz=float(clock),
        )
        try:
            check_capacity(spec, config)
        except CapacityExceededError as e:
            yield config, str(e)
        else:
            yield config, None


def calibration_report(spec: NetworkSpec, coeffs: CostCoefficients) -> dict:
    """Min/max of latency, power and area over the feasible legal grid.

    Each extreme is flagged ``in_band`` when within CALIBRATION_BAND of its
    reference value.
    """
    metrics = [evaluate_candidate(c, spec, coeffs) for c, reason in grid_configs(spec) if reason is None]
    if not metrics:
        raise CoefficientsError("no feasible configuration to calibrate against")
    report = {}
    for key, (ref_min, ref_max) in REFERENCE_RANGES.items():
        values = [getattr(m, key) for m in metrics]
        lo, hi = min(values), max(values)
        report[key] = {
            "min": lo,
            "max": hi,
            "reference_min": ref_min,
            "reference_max": ref_max,
            "min_in_band": abs(lo - ref_min) <= CALIBRATION_BAND * ref_min,
            "max_in_band": abs(hi - ref_max) <= CALIBRATION_BAND * ref_max,
        }
    return report


def calibrate_coefficients(
    template: CostCoefficients,
    anchors: Sequence[tuple[AcceleratorConfig, float, float]],
) -> CostCoefficients:
    """Rescale power and area terms to best match (config, power W, area mm^2) anchors.

    One least-squares scale factor per quantity; relative term weights of the
    template are kept.
    """
    if not anchors:
        raise CoefficientsError("calibration needs at least one anchor")
    model_power = np.array([[power_w(c, template)] for c, _, _ in anchors])
    model_area = np.array([[area_mm2(c, template)] for c, _, _ in anchors])
    target_power = np.array([p for _, p, _ in anchors], dtype=np.float64)
    target_area = np.array([a for _, _, a in anchors], dtype=np.float64)
    (k_power,), *_ = np.linalg.lstsq(model_power, target_power, rcond=None)
    (k_area,), *_ = np.linalg.lstsq(model_area, target_area, rcond=None)
    if k_power <= 0 or k_area <= 0:
        raise CoefficientsError("anchors imply a non-positive scale")
    return replace(
        template,
        power_base_w=template.power_base_w * k_power,
        power_per_pe_w=template.power_per_pe_w * k_power,
        power_per_lane_w=template.power_per_lane_w * k_power,
        power_per_sram_kb_w=template.power_per_sram_kb_w * k_power,
        area_base_mm2=template.area_base_mm2 * k_area,
        area_per_pe_mm2=template.area_per_pe_mm2 * k_area,
        area_per_lane_mm2=template.area_per_lane_mm2 * k_area,
        area_per_sram_kb_mm2=template.area_per_sram_kb_mm2 * k_area,
    )
