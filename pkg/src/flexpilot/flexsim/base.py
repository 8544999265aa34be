"""Shared types for the flexsim accelerator template."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..quantnet import NetworkSpec, QuantizedTensor

# Legal template parameters
LEGAL_PES = (2, 4, 8, 16, 32)
LEGAL_LANES = (4, 8, 16)
LEGAL_PRECISIONS = (4, 8)

# Elements per lane per cycle, tied to precision
NOMINAL_VECTOR_WIDTH = {8: 8, 4: 16}

# Per-PE weight buffer bounds (kB)
MIN_WEIGHT_BUFFER_KB = 16
MAX_WEIGHT_BUFFER_KB = 1024

DEFAULT_INPUT_BUFFER_KB = 4
DEFAULT_GLOBAL_BUFFER_KB = 4
DEFAULT_CLOCK_MHZ = 300.0


class FlexsimError(RuntimeError):
    """Base class for accelerator errors."""


class ConfigurationError(FlexsimError):
    """Illegal accelerator parameters or a network/config mismatch."""


class DimensionError(FlexsimError):
    """Input vector does not match the programmed layer."""


class AcceleratorBusyError(FlexsimError):
    """A run is already in flight on this accelerator."""


class CapacityExceededError(FlexsimError):
    """A PE's weight slice does not fit its weight buffer."""

    def __init__(self, layer: int, pe: int, required: int, available: int) -> None:
        self.layer = layer
        self.pe = pe
        self.required = required
        self.available = available
        super().__init__(
            f"layer {layer} overflows PE {pe} weight buffer: "
            f"{required} bytes needed, {available} available"
        )


@dataclass(frozen=True)
class AcceleratorConfig:
    """One point of the accelerator template."""

    num_pes: int
    mac_lanes: int
    precision_bits: int = 8
    weight_buffer_kb: int = MAX_WEIGHT_BUFFER_KB  # per PE
    input_buffer_kb: int = DEFAULT_INPUT_BUFFER_KB  # per PE
    global_buffer_kb: int = DEFAULT_GLOBAL_BUFFER_KB
    clock_mhz: float = DEFAULT_CLOCK_MHZ
    vector_width: int | None = None  # None: nominal for the precision

    def __post_init__(self) -> None:
        if self.num_pes not in LEGAL_PES:
            raise ConfigurationError(f"num_pes {self.num_pes} not in {LEGAL_PES}")
        if self.mac_lanes not in LEGAL_LANES:
            raise ConfigurationError(f"mac_lanes {self.mac_lanes} not in {LEGAL_LANES}")
        if self.precision_bits not in LEGAL_PRECISIONS:
            raise ConfigurationError(f"precision_bits {self.precision_bits} not in {LEGAL_PRECISIONS}")
        if not MIN_WEIGHT_BUFFER_KB <= self.weight_buffer_kb <= MAX_WEIGHT_BUFFER_KB:
            raise ConfigurationError(
                f"weight_buffer_kb {self.weight_buffer_kb} outside "
                f"[{MIN_WEIGHT_BUFFER_KB}, {MAX_WEIGHT_BUFFER_KB}]"
            )
        if self.input_buffer_kb < 1 or self.global_buffer_kb < 1:
            raise ConfigurationError("input and global buffers need at least 1 kB")
        if not (math.isfinite(self.clock_mhz) and self.clock_mhz > 0):
            raise ConfigurationError(f"clock_mhz must be positive, got {self.clock_mhz}")
        if self.vector_width is None:
            object.__setattr__(self, "vector_width", NOMINAL_VECTOR_WIDTH[self.precision_bits])
        elif self.vector_width < 1:
            raise ConfigurationError(f"vector_width must be >= 1, got {self.vector_width}")

    @property
    def config_id(self) -> str:
        """Stable identifier; sorts in (PEs, lanes, precision) order."""
        cid = f"pe{self.num_pes:02d}-l{self.mac_lanes:02d}-b{self.precision_bits}"
        if self.clock_mhz != DEFAULT_CLOCK_MHZ:
            cid += f"-f{self.clock_mhz:g}"
        if self.vector_width != NOMINAL_VECTOR_WIDTH[self.precision_bits]:
            cid += f"-v{self.vector_width}"
        return cid

    @property
    def weight_buffer_bytes(self) -> int:
        return self.weight_buffer_kb * 1024

    @property
    def total_buffer_kb(self) -> int:
        return self.num_pes * (self.weight_buffer_kb + self.input_buffer_kb) + self.global_buffer_kb

    @property
    def macs_per_cycle_per_pe(self) -> int:
        return self.mac_lanes * self.vector_width

    def to_dict(self) -> dict:
        data = asdict(self)
        data["config_id"] = self.config_id
        return data


def partition(out_dim: int, num_pes: int) -> tuple[tuple[int, int], ...]:
    """Contiguous output-neuron ranges per PE; PE 0 takes the remainder first.

    Counts differ by at most one and cover [0, out_dim) exactly once.
    """
    base, extra = divmod(out_dim, num_pes)
    ranges = []
    start = 0
    for pe in range(num_pes):
        count = base + (1 if pe < extra else 0)
        ranges.append((start, start + count))
        start += count
    return tuple(ranges)


def coverage_bitmap(assignments: tuple[tuple[int, int], ...], out_dim: int) -> np.ndarray:
    """How many PE ranges claim each output neuron; a valid assignment is all ones."""
    counts = np.zeros(out_dim, dtype=np.int64)
    for start, stop in assignments:
        if not 0 <= start <= stop <= out_dim:
            raise ConfigurationError(f"range [{start}, {stop}) escapes [0, {out_dim})")
        counts[start:stop] += 1
    return counts


def pe_weight_bytes(spec: NetworkSpec, num_pes: int, bits: int) -> list[int]:
    """Bytes of packed weights each PE must hold for the whole network."""
    usage = [0] * num_pes
    for layer in spec.layers:
        for pe, (start, stop) in enumerate(partition(layer.out_dim, num_pes)):
            usage[pe] += math.ceil((stop - start) * layer.in_dim * bits / 8)
    return usage


def check_capacity(spec: NetworkSpec, config: AcceleratorConfig) -> None:
    """Raise CapacityExceededError at the first layer that overflows a PE."""
    available = config.weight_buffer_bytes
    usage = [0] * config.num_pes
    for index, layer in enumerate(spec.layers):
        for pe, (start, stop) in enumerate(partition(layer.out_dim, config.num_pes)):
            usage[pe] += math.ceil((stop - start) * layer.in_dim * config.precision_bits / 8)
            if usage[pe] > available:
                raise CapacityExceededError(index, pe, usage[pe], available)


def auto_weight_buffer_kb(spec: NetworkSpec, num_pes: int, bits: int) -> int:
    """Smallest power-of-two buffer (kB) holding the largest PE share, clamped to range."""
    need_kb = max(1, math.ceil(max(pe_weight_bytes(spec, num_pes, bits)) / 1024))
    size = 1 << (need_kb - 1).bit_length()
    return min(max(size, MIN_WEIGHT_BUFFER_KB), MAX_WEIGHT_BUFFER_KB)


# =============================================================================
# Closed-form cycle model
# =============================================================================


@dataclass(frozen=True)
class LayerCycles:
    compute: int  # ceil(out/P) * ceil(in/(L*V))
    aggregate: int  # arbiter drains one PE per cycle
    broadcast: int  # global buffer sends V elements per cycle

    @property
    def total(self) -> int:
        return self.compute + self.aggregate + self.broadcast


def layer_cycles(in_dim: int, out_dim: int, config: AcceleratorConfig) -> LayerCycles:
    chunks = math.ceil(in_dim / config.macs_per_cycle_per_pe)
    return LayerCycles(
        compute=math.ceil(out_dim / config.num_pes) * chunks,
        aggregate=config.num_pes,
        broadcast=math.ceil(out_dim / config.vector_width),
    )


def network_cycles(spec: NetworkSpec, config: AcceleratorConfig) -> int:
    return sum(layer_cycles(l.in_dim, l.out_dim, config).total for l in spec.layers)


def cycles_to_us(cycles: int, config: AcceleratorConfig) -> float:
    return cycles / config.clock_mhz


@dataclass(frozen=True)
class TraceEvent:
    """One busy span of a unit; ``end`` is exclusive."""

    start: int
    end: int
    unit: str  # PE<k>, ARB or GB
    phase: str  # compute, aggregate or broadcast
    layer: int = 0

    def line(self) -> str:
        return f"{self.start} {self.end} {self.unit} {self.phase}"


@dataclass
class SimResult:
    """Outcome of one accelerator run."""

    output: QuantizedTensor
    cycle_count: int
    trace: list[TraceEvent] = field(default_factory=list)
    irq_raised: bool = False
    layer_cycles: list[int] = field(default_factory=list)
    phase_cycles: dict[str, int] = field(default_factory=dict)

    def latency_us(self, config: AcceleratorConfig) -> float:
        return cycles_to_us(self.cycle_count, config)
