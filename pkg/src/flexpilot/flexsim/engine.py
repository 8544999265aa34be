"""Event-driven execution of programmed layers.

Per layer, PEs run in parallel and finish one output neuron every
``ceil(in / (lanes * V))`` cycles. Once the last PE is done the arbiter drains
the PEs into the global buffer one per cycle, then the global buffer
broadcasts the layer output V elements per cycle. The phases do not overlap.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence, TextIO

import numpy as np

from ..log import get_stage_logger
from ..quantnet import (
    InvalidInputError,
    NetworkSpec,
    QuantizedTensor,
    WeightSet,
    dequantize,
    emulated_forward,
    fc_forward_fp,
)
from .base import ConfigurationError, DimensionError, SimResult, TraceEvent
from .program import Command, Opcode

if TYPE_CHECKING:
    from .program import LayerProgram, ProgrammedAccelerator

# Allowed deviation from the unquantized reference, relative to its output range
DEFAULT_DRIFT_TOLERANCE = {8: 0.05, 4: 0.25}

_MAC_DONE = 0
_DRAIN = 1
_BEAT = 2


@dataclass
class _LayerRun:
    output: np.ndarray
    end: int
    events: list[TraceEvent]
    compute: int
    aggregate: int
    broadcast: int


def _run_layer_events(acc: ProgrammedAccelerator, program: LayerProgram, x: np.ndarray, t0: int) -> _LayerRun:
    config = acc.config
    chunks = math.ceil(program.in_dim / config.macs_per_cycle_per_pe)
    beats = math.ceil(program.out_dim / config.vector_width)
    seq = itertools.count()
    queue: list[tuple[int, int, int, int, int]] = []
    partials: dict[int, list[int]] = {}

    for pe, (start, stop) in enumerate(program.assignments):
        if stop > start:
            partials[pe] = []
            heapq.heappush(queue, (t0 + chunks, next(seq), _MAC_DONE, pe, 0))
    pending = len(partials)

    gb = np.zeros(program.out_dim, dtype=np.int64)
    written = np.zeros(program.out_dim, dtype=np.int64)
    events: list[TraceEvent] = []
    compute_end = aggregate_end = end = t0

    while queue:
        t, _, kind, unit, local = heapq.heappop(queue)
        if kind == _MAC_DONE:
            start, stop = program.assignments[unit]
            partials[unit].append(acc.pes[unit].neuron_output(program, local, x, acc.qmax))
            if local + 1 < stop - start:
                heapq.heappush(queue, (t + chunks, next(seq), _MAC_DONE, unit, local + 1))
                continue
            events.append(TraceEvent(t0, t, f"PE{unit}", "compute", program.index))
            pending -= 1
            if pending == 0:
                compute_end = t
                for k in range(config.num_pes):
                    heapq.heappush(queue, (t + k + 1, next(seq), _DRAIN, k, 0))
        elif kind == _DRAIN:
            start, stop = program.assignments[unit]
            if stop > start:
                gb[start:stop] = partials[unit]
                written[start:stop] += 1
            events.append(TraceEvent(t - 1, t, "ARB", "aggregate", program.index))
            if unit == config.num_pes - 1:
                aggregate_end = t
                for b in range(beats):
                    heapq.heappush(queue, (t + b + 1, next(seq), _BEAT, b, 0))
        else:
            events.append(TraceEvent(t - 1, t, "GB", "broadcast", program.index))
            end = t

    if not np.all(written == 1):
        raise ConfigurationError(f"layer {program.index}: global buffer not written exactly once per neuron")
    return _LayerRun(
        output=gb,
        end=end,
        events=events,
        compute=compute_end - t0,
        aggregate=aggregate_end - compute_end,
        broadcast=end - aggregate_end,
    )


def execute(acc: ProgrammedAccelerator, layers: Sequence[int], tensor: QuantizedTensor) -> SimResult:
    """Run consecutive programmed layers; used by the RUN command."""
    if not layers:
        raise DimensionError("nothing to run")
    first = acc.programs[layers[0]]
    if tensor.bits != acc.config.precision_bits:
        raise DimensionError(f"input is {tensor.bits}-bit, accelerator runs {acc.config.precision_bits}-bit")
    if tensor.values.shape != (first.in_dim,):
        raise DimensionError(f"input shape {tensor.values.shape} does not match layer in_dim {first.in_dim}")

    x = tensor.values.astype(np.int64)
    t = 0
    trace: list[TraceEvent] = []
    per_layer: list[int] = []
    phases = {"compute": 0, "aggregate": 0, "broadcast": 0}
    for index in layers:
        run = _run_layer_events(acc, acc.programs[index], x, t)
        trace.extend(run.events)
        per_layer.append(run.end - t)
        phases["compute"] += run.compute
        phases["aggregate"] += run.aggregate
        phases["broadcast"] += run.broadcast
        x = run.output
        t = run.end

    last = acc.programs[layers[-1]]
    output = QuantizedTensor(x, last.output_scale, acc.config.precision_bits)
    return SimResult(output=output, cycle_count=t, trace=trace, layer_cycles=per_layer, phase_cycles=phases)


def run_layer(acc: ProgrammedAccelerator, layer_index: int, input_tensor: QuantizedTensor) -> SimResult:
    """Run a single configured layer on n-bit input codes."""
    if layer_index not in acc.programs:
        raise DimensionError(f"layer {layer_index} is not configured")
    acc.submit(Command(Opcode.RUN, layer=layer_index, payload=("layer", layer_index, input_tensor)))
    return acc.submit(Command(Opcode.READ_RESULT))


def run_network(acc: ProgrammedAccelerator, input_vector: QuantizedTensor | np.ndarray | Sequence[float]) -> SimResult:
    """Run every layer; real-valued input is quantized at the network input scale."""
    if isinstance(input_vector, QuantizedTensor):
        tensor = input_vector
    else:
        arr = np.asarray(input_vector, dtype=np.float64)
        if arr.shape != (acc.spec.input_dim,):
            raise DimensionError(f"input shape {arr.shape} does not match input_dim {acc.spec.input_dim}")
        tensor = acc.network.quantize_input(arr)
    acc.submit(Command(Opcode.RUN, payload=("network", 0, tensor)))
    return acc.submit(Command(Opcode.READ_RESULT))


@dataclass(frozen=True)
class VerificationReport:
    """Accelerator output compared with the software references."""

    max_err: float  # vs the quantized policy run in software
    fp_drift: float  # vs the unquantized forward pass
    rel_drift: float  # fp_drift / output range of the unquantized pass
    action_agreement: float  # fraction of argmax matches with the unquantized pass
    tolerance: float
    drift_tolerance: float
    bits: int
    samples: int
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_against_reference(
    acc: ProgrammedAccelerator,
    spec: NetworkSpec,
    weights: WeightSet,
    inputs: np.ndarray | Sequence[Sequence[float]],
    tolerance: float = 1e-3,
    drift_tolerance: float | None = None,
) -> VerificationReport:
    """Run ``inputs`` through the accelerator and compare against software.

    Passing needs both: ``max_err <= tolerance`` and ``rel_drift <= drift_tolerance``.
    """
    batch = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if batch.size == 0:
        raise InvalidInputError("verification needs at least one input")
    bits = acc.config.precision_bits
    if drift_tolerance is None:
        drift_tolerance = DEFAULT_DRIFT_TOLERANCE[bits]

    hw = np.stack([dequantize(run_network(acc, x).output) for x in batch])
    software = emulated_forward(acc.network, batch)
    reference = fc_forward_fp(spec, weights, batch)

    max_err = float(np.max(np.abs(hw - software)))
    fp_drift = float(np.max(np.abs(hw - reference)))
    span = float(np.max(reference) - np.min(reference))
    if span > 0:
        rel_drift = fp_drift / span
    else:
        rel_drift = 0.0 if fp_drift == 0 else math.inf
    agreement = float(np.mean(np.argmax(hw, axis=1) == np.argmax(reference, axis=1)))
    passed = max_err <= tolerance and rel_drift <= drift_tolerance

    get_stage_logger("verify").info(
        f"{acc.config.config_id}: max_err={max_err:.3g} rel_drift={rel_drift:.3g} "
        f"agreement={agreement:.2f} -> {'pass' if passed else 'FAIL'}"
    )
    return VerificationReport(
        max_err=max_err,
        fp_drift=fp_drift,
        rel_drift=rel_drift,
        action_agreement=agreement,
        tolerance=tolerance,
        drift_tolerance=drift_tolerance,
        bits=bits,
        samples=len(batch),
        passed=passed,
    )


def write_trace(trace: Sequence[TraceEvent], target: Path | TextIO) -> None:
    """Dump ``cycle_start cycle_end unit phase`` lines."""
    lines = "".join(event.line() + "\n" for event in trace)
    if isinstance(target, (str, Path)):
        Path(target).write_text(lines, encoding="utf-8")
    else:
        target.write(lines)
