"""Programming model: ISA commands, PE weight memories and the command channel."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..log import get_stage_logger
from ..quantnet import NetworkSpec, QuantizedNetwork, QuantizedTensor, RequantParams, requantize_scalar
from .base import (
    AcceleratorBusyError,
    AcceleratorConfig,
    CapacityExceededError,
    ConfigurationError,
    SimResult,
    check_capacity,
    coverage_bitmap,
    partition,
)


class Opcode(Enum):
    LOAD_WEIGHTS = "LOAD_WEIGHTS"
    CONFIG_LAYER = "CONFIG_LAYER"
    RUN = "RUN"
    READ_RESULT = "READ_RESULT"


@dataclass(frozen=True)
class Command:
    """One host-to-accelerator command on the command channel."""

    opcode: Opcode
    layer: int = -1
    pe: int = -1
    payload: object = None

    def describe(self) -> str:
        parts = [self.opcode.value]
        if self.layer >= 0:
            parts.append(f"layer={self.layer}")
        if self.pe >= 0:
            parts.append(f"pe={self.pe}")
        return " ".join(parts)


@dataclass(frozen=True)
class LayerProgram:
    """Per-layer configuration written by CONFIG_LAYER."""

    index: int
    in_dim: int
    out_dim: int
    activation: str
    assignments: tuple[tuple[int, int], ...]  # output range per PE
    requant: RequantParams
    output_scale: float

    def __post_init__(self) -> None:
        counts = coverage_bitmap(self.assignments, self.out_dim)
        if not np.all(counts == 1):
            bad = np.flatnonzero(counts != 1)
            raise ConfigurationError(
                f"layer {self.index}: neuron {int(bad[0])} assigned {int(counts[bad[0]])} times"
            )
        covered = 0
        for start, stop in self.assignments:
            if start != covered or stop < start:
                raise ConfigurationError(f"layer {self.index}: assignments are not contiguous")
            covered = stop
        if covered != self.out_dim:
            raise ConfigurationError(f"layer {self.index}: assignments cover {covered} of {self.out_dim} outputs")
        counts = [stop - start for start, stop in self.assignments]
        if max(counts) - min(counts) > 1:
            raise ConfigurationError(f"layer {self.index}: unbalanced assignment {counts}")


@dataclass
class ProcessingElement:
    """A PE: private weight buffer plus a MAC array with its own requant unit."""

    index: int
    capacity_bytes: int
    bits: int
    used_bytes: int = 0
    slices: dict[int, np.ndarray] = field(default_factory=dict)  # layer -> (n, in) codes
    biases: dict[int, np.ndarray] = field(default_factory=dict)
    base_address: dict[int, int] = field(default_factory=dict)  # layer -> byte offset

    def load(self, layer: int, codes: np.ndarray, bias: np.ndarray) -> int:
        size = -(-codes.size * self.bits // 8)
        if self.used_bytes + size > self.capacity_bytes:
            raise CapacityExceededError(layer, self.index, self.used_bytes + size, self.capacity_bytes)
        address = self.used_bytes
        self.slices[layer] = np.ascontiguousarray(codes, dtype=np.int64)
        self.biases[layer] = np.asarray(bias, dtype=np.int64)
        self.base_address[layer] = address
        self.used_bytes += size
        return address

    def neuron_output(self, program: LayerProgram, local: int, x: np.ndarray, qmax: int) -> int:
        """Accumulate one neuron, requantize, clip, then apply the activation."""
        acc = int(np.dot(self.slices[program.index][local], x)) + int(self.biases[program.index][local])
        value = requantize_scalar(acc, program.requant, qmax)
        if program.activation == "relu" and value < 0:
            return 0
        return value


class ProgrammedAccelerator:
    """An accelerator instance with weights loaded and layers configured.

    All host interaction goes through ``submit``; a second RUN while one is in
    flight raises AcceleratorBusyError.
    """

    def __init__(self, config: AcceleratorConfig, network: QuantizedNetwork) -> None:
        self.config = config
        self.network = network
        self.pes = [
            ProcessingElement(k, config.weight_buffer_bytes, config.precision_bits) for k in range(config.num_pes)
        ]
        self.programs: dict[int, LayerProgram] = {}
        self.command_log: list[str] = []
        self.irq_count = 0
        self._last_result: SimResult | None = None
        self._lock = threading.Lock()

    @property
    def spec(self) -> NetworkSpec:
        return self.network.spec

    @property
    def qmax(self) -> int:
        return self.network.qmax

    def address_map(self) -> dict[int, dict[int, int]]:
        """PE index -> {layer: base byte address} as assigned by the buffer manager."""
        return {pe.index: dict(pe.base_address) for pe in self.pes}

    def submit(self, command: Command) -> object:
        self.command_log.append(command.describe())
        if command.opcode is Opcode.LOAD_WEIGHTS:
            codes, bias = command.payload
            return self.pes[command.pe].load(command.layer, codes, bias)
        if command.opcode is Opcode.CONFIG_LAYER:
            program = command.payload
            self.programs[program.index] = program
            return None
        if command.opcode is Opcode.RUN:
            return self._run(command.payload)
        if command.opcode is Opcode.READ_RESULT:
            return self._last_result
        raise ConfigurationError(f"unknown opcode {command.opcode}")

    def _run(self, payload: tuple[str, int, QuantizedTensor]) -> SimResult:
        from .engine import execute

        if not self._lock.acquire(blocking=False):
            raise AcceleratorBusyError("accelerator is already running")
        try:
            scope, layer, tensor = payload
            layers = range(len(self.programs)) if scope == "network" else range(layer, layer + 1)
            result = execute(self, list(layers), tensor)
            # Completion interrupt fires once per RUN
            self.irq_count += 1
            result.irq_raised = True
            self._last_result = result
            return result
        finally:
            self._lock.release()


def configure(config: AcceleratorConfig, spec: NetworkSpec, network: QuantizedNetwork) -> ProgrammedAccelerator:
    """Partition every layer across the PEs and load the weight slices.

    Raises:
        ConfigurationError: Precision or network mismatch
        CapacityExceededError: A PE's slices exceed its weight buffer
    """
    if network.bits != config.precision_bits:
        raise ConfigurationError(
            f"network quantized to {network.bits} bits, accelerator runs {config.precision_bits}"
        )
    if network.spec != spec:
        raise ConfigurationError("quantized network does not match the network description")
    check_capacity(spec, config)

    log = get_stage_logger("simulate")
    acc = ProgrammedAccelerator(config, network)
    for index, (layer, qlayer) in enumerate(zip(spec.layers, network.layers)):
        assignments = partition(layer.out_dim, config.num_pes)
        program = LayerProgram(
            index=index,
            in_dim=layer.in_dim,
            out_dim=layer.out_dim,
            activation=layer.activation,
            assignments=assignments,
            requant=qlayer.requant,
            output_scale=qlayer.output_scale,
        )
        acc.submit(Command(Opcode.CONFIG_LAYER, layer=index, payload=program))
        for pe, (start, stop) in enumerate(assignments):
            if stop == start:
                continue
            payload = (qlayer.weights.values[start:stop], qlayer.bias_codes[start:stop])
            acc.submit(Command(Opcode.LOAD_WEIGHTS, layer=index, pe=pe, payload=payload))
    log.debug(f"configured {config.config_id}: {len(acc.command_log)} commands")
    return acc
