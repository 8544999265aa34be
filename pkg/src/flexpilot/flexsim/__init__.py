"""Parameterized accelerator template for fully-connected networks.

The template is a set of PEs, each with a private weight buffer and
``mac_lanes`` vector MAC lanes, a global buffer holding layer activations and
an arbiter that gathers PE outputs. ``configure`` programs an instance,
``run_layer`` / ``run_network`` execute it event by event.
"""

from __future__ import annotations

from pathlib import Path

from ..quantnet import QuantizedNetwork, rebuild_quantized
from ..weights import WeightFileError, read_fxw
from .base import (
    DEFAULT_CLOCK_MHZ,
    LEGAL_LANES,
    LEGAL_PES,
    LEGAL_PRECISIONS,
    MAX_WEIGHT_BUFFER_KB,
    MIN_WEIGHT_BUFFER_KB,
    NOMINAL_VECTOR_WIDTH,
    AcceleratorBusyError,
    AcceleratorConfig,
    CapacityExceededError,
    ConfigurationError,
    DimensionError,
    FlexsimError,
    LayerCycles,
    SimResult,
    TraceEvent,
    auto_weight_buffer_kb,
    check_capacity,
    coverage_bitmap,
    cycles_to_us,
    layer_cycles,
    network_cycles,
    partition,
    pe_weight_bytes,
)
from .engine import DEFAULT_DRIFT_TOLERANCE, VerificationReport, run_layer, run_network, verify_against_reference, write_trace
from .program import Command, LayerProgram, Opcode, ProcessingElement, ProgrammedAccelerator, configure

__all__ = [
    "LEGAL_PES",
    "LEGAL_LANES",
    "LEGAL_PRECISIONS",
    "MIN_WEIGHT_BUFFER_KB",
    "MAX_WEIGHT_BUFFER_KB",
    "AcceleratorConfig",
    "ProgrammedAccelerator",
    "LayerProgram",
    "SimResult",
    "TraceEvent",
    "VerificationReport",
    "configure",
    "run_layer",
    "run_network",
    "verify_against_reference",
    "write_trace",
    "load_programmed",
    "layer_cycles",
    "network_cycles",
    "cycles_to_us",
    "partition",
    "check_capacity",
    "coverage_bitmap",
    "auto_weight_buffer_kb",
    "pe_weight_bytes",
    "FlexsimError",
    "ConfigurationError",
    "CapacityExceededError",
    "DimensionError",
    "AcceleratorBusyError",
]


def load_programmed(config: AcceleratorConfig, weights_path: Path) -> ProgrammedAccelerator:
    """Program an accelerator from an FXW1 file whose sidecar carries quantization scales."""
    spec, weights, meta = read_fxw(weights_path)
    scales = meta.get("quantization")
    if not scales:
        raise WeightFileError(f"{weights_path}: sidecar has no quantization record; run quantize first")
    network: QuantizedNetwork = rebuild_quantized(spec, weights, scales)
    return configure(config, spec, network)
