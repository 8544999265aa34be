"""Self-test functionality for flexpilot."""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

# Widths used across the checks: the full policy, a compact policy and a toy policy
COMPACT_DIMS = (160, 2048, 1024, 256, 25)
SMALL_DIMS = (160, 64, 25)

# 24 degrees of freedom at p = 0.01
CHI2_CRITICAL_24DOF = 42.98


@dataclass
class TestResult:
    """Result of a single test."""

    name: str
    passed: bool
    message: str | None = None


def _raises(func, exc_type) -> tuple[bool, str]:
    """Call ``func``; report whether it raised ``exc_type`` (and the message)."""
    try:
        func()
    except exc_type as e:
        return True, str(e)
    except Exception as e:  # noqa: BLE001 - reported as a failure
        return False, f"raised {type(e).__name__}: {e}"
    return False, "did not raise"


# =============================================================================
# quantnet
# =============================================================================


def test_quantize_examples() -> list[TestResult]:
    """Symmetric quantization: scale, ties away from zero, zero tensors, bad input."""
    from .quantnet import InvalidInputError, dequantize, quantize

    results = []

    q = quantize([0.5, -1.0, 0.25], 8)
    results.append(TestResult(
        "quantize__half_code_rounds_away",
        q.values.tolist() == [64, -127, 32] and math.isclose(q.scale, 1 / 127),
        f"Expected codes [64, -127, 32] at scale 1/127, got {q.values.tolist()} at {q.scale}",
    ))

    q = quantize([2.5, -2.5, 127.0], 8)
    results.append(TestResult(
        "quantize__negative_tie_rounds_away",
        q.values.tolist() == [3, -3, 127],
        f"Expected [3, -3, 127], got {q.values.tolist()}",
    ))

    q = quantize([1.0, -0.5, 0.25], 4)
    results.append(TestResult(
        "quantize__four_bit_range",
        q.values.tolist() == [7, -4, 2] and math.isclose(q.scale, 1 / 7),
        f"Expected [7, -4, 2] at scale 1/7, got {q.values.tolist()} at {q.scale}",
    ))

    q = quantize(np.zeros(5), 8)
    results.append(TestResult(
        "quantize__all_zero_scale_one",
        q.scale == 1.0 and not q.values.any(),
        f"Expected scale 1 and zero codes, got {q.scale} / {q.values.tolist()}",
    ))

    rng = np.random.default_rng(3)
    x = rng.normal(size=400)
    q = quantize(x, 8)
    err = float(np.max(np.abs(dequantize(q) - x)))
    results.append(TestResult(
        "quantize__error_within_half_step",
        err <= q.scale / 2 + 1e-12,
        f"Max error {err} exceeds half a step ({q.scale / 2})",
    ))

    for name, bad in (("empty", []), ("nan", [1.0, float("nan")]), ("inf", [float("inf")])):
        ok, msg = _raises(lambda bad=bad: quantize(bad, 8), InvalidInputError)
        results.append(TestResult(f"quantize__rejects_{name}", ok, msg))

    ok, msg = _raises(lambda: quantize([1.0], 6), InvalidInputError)
    results.append(TestResult("quantize__rejects_unsupported_bits", ok, msg))

    return results


def test_requant_parameters() -> list[TestResult]:
    """Multiplier/shift derivation bounds, overflow and integer rescaling."""
    from .quantnet import (
        InvalidInputError,
        RequantOverflowError,
        RequantParams,
        derive_requant,
        requantize,
        requantize_scalar,
    )

    results = []

    rng = np.random.default_rng(11)
    worst = 0.0
    in_range = True
    for exponent in rng.uniform(-20.0, 20.0, size=10_000):
        ratio = 2.0 ** float(exponent)
        params = derive_requant(ratio, 1.0, 1.0)
        in_range &= 2**30 <= params.multiplier < 2**31 and params.shift >= 0
        worst = max(worst, abs(params.ratio - ratio) / ratio)
    for _ in range(500):
        s_in, s_w, s_out = (10.0 ** rng.uniform(-4, 1) for _ in range(3))
        ratio = s_in * s_w / s_out
        params = derive_requant(s_in, s_w, s_out)
        in_range &= 2**30 <= params.multiplier < 2**31 and params.shift >= 0
        worst = max(worst, abs(params.ratio - ratio) / ratio)
    results.append(TestResult(
        "derive_requant__multiplier_normalized",
        in_range,
        "A multiplier fell outside [2^30, 2^31) or a shift went negative",
    ))
    results.append(TestResult(
        "derive_requant__relative_error_bound",
        worst <= 2.0**-31,
        f"Worst relative error {worst:.3g} > 2^-31",
    ))

    ok, msg = _raises(lambda: derive_requant(2.0**31, 1.0, 1.0), RequantOverflowError)
    results.append(TestResult("derive_requant__overflow_raises", ok, msg))
    ok, msg = _raises(lambda: derive_requant(0.0, 1.0, 1.0), InvalidInputError)
    results.append(TestResult("derive_requant__zero_scale_raises", ok, msg))

    half = derive_requant(1.0, 1.0, 2.0)
    results.append(TestResult(
        "derive_requant__half_ratio",
        (half.multiplier, half.shift) == (2**30, 31),
        f"Expected (2^30, 31), got {(half.multiplier, half.shift)}",
    ))
    unity = derive_requant(1.0, 1.0, 1.0)
    results.append(TestResult(
        "derive_requant__unity_ratio",
        (unity.multiplier, unity.shift) == (2**30, 30),
        f"Expected (2^30, 30), got {(unity.multiplier, unity.shift)}",
    ))

    out = requantize(np.array([100, -100, 3, -3, 1000]), half, 8)
    results.append(TestResult(
        "requantize__round_half_away_and_clip",
        out.tolist() == [50, -50, 2, -2, 127],
        f"Expected [50, -50, 2, -2, 127], got {out.tolist()}",
    ))

    out = requantize(np.array([2**31 - 1, -(2**31)]), RequantParams(2**30, 63), 8)
    results.append(TestResult(
        "requantize__huge_shift_gives_zero",
        not out.any(),
        f"Expected zeros, got {out.tolist()}",
    ))

    accs = rng.integers(-(2**31), 2**31, size=300)
    mismatches = 0
    for _ in range(20):
        params = derive_requant(*(10.0 ** rng.uniform(-3, 0, size=3)))
        vector = requantize(accs, params, 8)
        scalar = [requantize_scalar(int(a), params, 127) for a in accs]
        mismatches += int(np.sum(vector != np.array(scalar)))
    results.append(TestResult(
        "requantize__scalar_matches_vector",
        mismatches == 0,
        f"{mismatches} scalar/vector mismatches",
    ))

    return results


def test_quantized_network() -> list[TestResult]:
    """Network quantization: golden integer forward, emulation and input checks."""
    from .quantnet import (
        InvalidInputError,
        NetworkSpec,
        ShapeError,
        WeightSet,
        emulated_forward,
        fc_forward_fp,
        quantize_network,
        quantized_forward,
    )

    results = []
    spec = NetworkSpec.from_dims(SMALL_DIMS)
    rng = np.random.default_rng(5)
    weights = WeightSet.random(spec, rng)
    inputs = rng.uniform(-1.0, 1.0, size=(64, spec.input_dim))

    results.append(TestResult(
        "network_spec__activations",
        [l.activation for l in spec.layers] == ["relu", "identity"] and spec.dims == SMALL_DIMS,
        f"Unexpected layers {spec.layers}",
    ))

    single = fc_forward_fp(spec, weights, inputs[0])
    batch = fc_forward_fp(spec, weights, inputs)
    results.append(TestResult(
        "fc_forward_fp__single_matches_batch_row",
        single.shape == (25,) and np.array_equal(single, batch[0]),
        "Single-vector forward pass differs from the batch row",
    ))

    for bits in (8, 4):
        qnet = quantize_network(spec, weights, inputs, bits)
        codes = quantized_forward(qnet, qnet.quantize_input(inputs).values)
        golden = qnet.dequantize_output(codes)
        emulated = emulated_forward(qnet, inputs)
        agreement = float(np.mean(np.isclose(golden, emulated, atol=1e-12)))
        results.append(TestResult(
            f"quantized_forward__emulation_agrees_{bits}bit",
            agreement >= 0.99,
            f"Only {agreement:.3f} of outputs agree",
        ))
        qmax = 2 ** (bits - 1) - 1
        results.append(TestResult(
            f"quantized_forward__codes_in_range_{bits}bit",
            int(np.max(np.abs(codes))) <= qmax,
            f"Codes exceed {qmax}",
        ))

    qnet = quantize_network(spec, weights, inputs, 8)
    results.append(TestResult(
        "quantize_network__weight_bytes",
        qnet.weight_bytes == 160 * 64 + 64 * 25,
        f"Expected {160 * 64 + 64 * 25} bytes, got {qnet.weight_bytes}",
    ))

    ok, msg = _raises(lambda: quantize_network(spec, weights, np.zeros((0, 160)), 8), InvalidInputError)
    results.append(TestResult("quantize_network__empty_calibration_raises", ok, msg))

    wrong = WeightSet(weights.weights[::-1], weights.biases[::-1])
    ok, msg = _raises(lambda: quantize_network(spec, wrong, inputs, 8), ShapeError)
    results.append(TestResult("quantize_network__shape_mismatch_raises", ok, msg))

    ok, msg = _raises(lambda: quantized_forward(qnet, np.zeros(10, dtype=np.int64)), ShapeError)
    results.append(TestResult("quantized_forward__wrong_width_raises", ok, msg))

    return results


def _scalar_forward(spec, weights, x) -> list[float]:
    h = [float(v) for v in x]
    for layer, w, b in zip(spec.layers, weights.weights, weights.biases):
        out = []
        for i in range(layer.out_dim):
            s = 0.0
            for j in range(layer.in_dim):
                s += h[j] * float(w[i, j])
            s += float(b[i])
            out.append(max(s, 0.0) if layer.activation == "relu" else s)
        h = out
    return h


def test_fc_reference_oracle() -> list[TestResult]:
    """The floating-point pass equals a plain scalar loop, bit for bit."""
    from .quantnet import LayerSpec, NetworkSpec, WeightSet, fc_forward_fp

    results = []
    rng = np.random.default_rng(17)
    mismatches = []
    for trial in range(20):
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(1, 65, size=depth + 1)]
        spec = NetworkSpec.from_dims(dims)
        weights = WeightSet.random(spec, rng)
        x = rng.uniform(-1.0, 1.0, size=dims[0])
        got = fc_forward_fp(spec, weights, x)
        if not np.array_equal(got, np.array(_scalar_forward(spec, weights, x))):
            mismatches.append(dims)
    results.append(TestResult(
        "fc_forward_fp__matches_scalar_loop",
        not mismatches,
        f"Differs from the scalar loop for {mismatches}",
    ))

    relu = NetworkSpec((LayerSpec(2, 2, "relu"),))
    eye = WeightSet((np.eye(2),), (np.zeros(2),))
    out = fc_forward_fp(relu, eye, [1.0, -2.0])
    results.append(TestResult(
        "fc_forward_fp__relu_clamps_negative",
        out.tolist() == [1.0, 0.0],
        f"Expected [1, 0], got {out.tolist()}",
    ))

    bias = np.array([0.5, -0.25, 3.0])
    zero = NetworkSpec((LayerSpec(4, 3, "relu"),))
    out = fc_forward_fp(zero, WeightSet((np.zeros((3, 4)),), (bias,)), rng.uniform(-1.0, 1.0, size=4))
    results.append(TestResult(
        "fc_forward_fp__zero_weights_give_activated_bias",
        out.tolist() == [0.5, 0.0, 3.0],
        f"Expected [0.5, 0, 3], got {out.tolist()}",
    ))

    return results


def test_weight_files() -> list[TestResult]:
    """FXW1 files: read back with sidecar, malformed files rejected."""
    from .flexsim import AcceleratorConfig, auto_weight_buffer_kb, load_programmed, network_cycles, run_network
    from .quantnet import NetworkSpec, WeightSet, quantize_network
    from .weights import WeightFileError, read_fxw, read_sidecar, sidecar_path, write_fxw

    results = []
    spec = NetworkSpec.from_dims((160, 16, 25))
    rng = np.random.default_rng(8)
    weights = WeightSet.random(spec, rng)
    inputs = rng.uniform(-1.0, 1.0, size=(16, 160))
    qnet = quantize_network(spec, weights, inputs, 8)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "policy.fxw"
        written = write_fxw(path, spec, weights, qnet, extra={"variant": "tiny"})
        read_spec, read_weights, meta = read_fxw(path)

        results.append(TestResult(
            "fxw__writes_sidecar",
            written == [path, sidecar_path(path)] and sidecar_path(path).name == "policy.fxw.json",
            f"Unexpected paths {written}",
        ))
        same = read_spec == spec and all(
            np.array_equal(a, b.astype(np.float32).astype(np.float64))
            for a, b in zip(read_weights.weights + read_weights.biases, weights.weights + weights.biases)
        )
        results.append(TestResult(
            "fxw__float32_contents_survive",
            same,
            "Weights read back differ from their float32 rounding",
        ))
        results.append(TestResult(
            "fxw__sidecar_quantization",
            meta["quantization"]["bits"] == 8
            and len(meta["quantization"]["layers"]) == 2
            and meta.get("extra") == {"variant": "tiny"},
            f"Unexpected sidecar {meta!r}",
        ))

        config = AcceleratorConfig(4, 16, 8, auto_weight_buffer_kb(spec, 4, 8))
        acc = load_programmed(config, path)
        result = run_network(acc, inputs[0])
        results.append(TestResult(
            "fxw__programs_accelerator",
            result.output.values.shape == (25,) and result.cycle_count == network_cycles(spec, config),
            f"Unexpected run: {result.cycle_count} cycles",
        ))

        data = path.read_bytes()
        bad = Path(tmp) / "bad.fxw"
        cases = {
            "bad_magic": b"FXW0" + data[4:],
            "truncated": data[:-4],
            "trailing_bytes": data + b"\0",
            "short_header": data[:3],
        }
        for name, payload in cases.items():
            bad.write_bytes(payload)
            ok, msg = _raises(lambda: read_fxw(bad), WeightFileError)
            results.append(TestResult(f"fxw__{name}_raises", ok, msg))

        plain = Path(tmp) / "plain.fxw"
        write_fxw(plain, spec, weights)
        ok, msg = _raises(lambda: load_programmed(config, plain), WeightFileError)
        results.append(TestResult("fxw__unquantized_cannot_program", ok, msg))

        sidecar_path(plain).write_text("{not json", encoding="utf-8")
        ok, msg = _raises(lambda: read_sidecar(plain), WeightFileError)
        results.append(TestResult("fxw__corrupt_sidecar_raises", ok, msg))

    return results


# =============================================================================
# flexsim
# =============================================================================


def test_accelerator_config() -> list[TestResult]:
    """Template legality, identifiers, partitioning and the closed-form cycle model."""
    from .flexsim import (
        AcceleratorConfig,
        ConfigurationError,
        layer_cycles,
        network_cycles,
        partition,
    )
    from .quantnet import POLICY_DIMS, NetworkSpec

    results = []

    results.append(TestResult(
        "partition__remainder_first",
        partition(10, 4) == ((0, 3), (3, 6), (6, 8), (8, 10)),
        f"Unexpected partition {partition(10, 4)}",
    ))
    results.append(TestResult(
        "partition__more_pes_than_outputs",
        partition(3, 8)[:4] == ((0, 1), (1, 2), (2, 3), (3, 3)),
        f"Unexpected partition {partition(3, 8)}",
    ))

    config = AcceleratorConfig(8, 16, 8)
    results.append(TestResult(
        "config__id_and_vector_width",
        config.config_id == "pe08-l16-b8" and config.vector_width == 8
        and AcceleratorConfig(8, 16, 4).vector_width == 16,
        f"Unexpected config {config}",
    ))
    results.append(TestResult(
        "config__clock_in_id",
        AcceleratorConfig(8, 16, 8, clock_mhz=600.0).config_id == "pe08-l16-b8-f600",
        "Non-default clock missing from config_id",
    ))

    for name, kwargs in (
        ("pes", {"num_pes": 3, "mac_lanes": 16}),
        ("lanes", {"num_pes": 8, "mac_lanes": 12}),
        ("precision", {"num_pes": 8, "mac_lanes": 16, "precision_bits": 2}),
        ("buffer", {"num_pes": 8, "mac_lanes": 16, "weight_buffer_kb": 2048}),
        ("clock", {"num_pes": 8, "mac_lanes": 16, "clock_mhz": 0.0}),
    ):
        ok, msg = _raises(lambda kwargs=kwargs: AcceleratorConfig(**kwargs), ConfigurationError)
        results.append(TestResult(f"config__illegal_{name}_raises", ok, msg))

    cycles = layer_cycles(160, 64, config)
    results.append(TestResult(
        "layer_cycles__phases",
        (cycles.compute, cycles.aggregate, cycles.broadcast, cycles.total) == (16, 8, 8, 32),
        f"Expected (16, 8, 8, 32), got {cycles}",
    ))

    policy = NetworkSpec.from_dims(POLICY_DIMS)
    for (pes, lanes, bits), expected in (((32, 16, 8), 3528), ((32, 16, 4), 1828), ((16, 4, 8), 20644)):
        got = network_cycles(policy, AcceleratorConfig(pes, lanes, bits))
        results.append(TestResult(
            f"network_cycles__policy_pe{pes}_l{lanes}_b{bits}",
            got == expected,
            f"Expected {expected} cycles, got {got}",
        ))

    return results


def test_capacity_checks() -> list[TestResult]:
    """Weight buffers: the full policy needs >= 16 PEs at 8 bits and >= 8 at 4 bits."""
    from .costmodel import grid_configs
    from .flexsim import (
        MAX_WEIGHT_BUFFER_KB,
        AcceleratorConfig,
        CapacityExceededError,
        auto_weight_buffer_kb,
        check_capacity,
    )
    from .quantnet import POLICY_DIMS, NetworkSpec

    results = []
    policy = NetworkSpec.from_dims(POLICY_DIMS)

    error = None
    try:
        check_capacity(policy, AcceleratorConfig(8, 16, 8, MAX_WEIGHT_BUFFER_KB))
    except CapacityExceededError as e:
        error = e
    results.append(TestResult(
        "capacity__overflow_names_layer_and_pe",
        error is not None and (error.layer, error.pe) == (1, 0) and error.required > error.available,
        f"Expected overflow at layer 1 PE 0, got {error!r}",
    ))

    feasible = {
        (c.num_pes, c.precision_bits)
        for c, reason in grid_configs(policy)
        if reason is None
    }
    expected = {(16, 8), (32, 8), (8, 4), (16, 4), (32, 4)}
    results.append(TestResult(
        "capacity__policy_feasible_grid",
        feasible == expected,
        f"Expected feasible (PEs, bits) {sorted(expected)}, got {sorted(feasible)}",
    ))

    # The full policy cannot be placed on the small 8-bit arrays even at the largest buffer,
    # so the PE-count ordering checks run on COMPACT_DIMS instead
    compact = NetworkSpec.from_dims(COMPACT_DIMS)
    for pes in (4, 8):
        config = AcceleratorConfig(pes, 16, 8, MAX_WEIGHT_BUFFER_KB)
        ok, msg = _raises(lambda config=config: check_capacity(policy, config), CapacityExceededError)
        results.append(TestResult(f"capacity__policy_infeasible_{pes}pe_8bit", ok, msg))
        fits, why = True, ""
        try:
            check_capacity(compact, config)
        except CapacityExceededError as e:
            fits, why = False, str(e)
        results.append(TestResult(f"capacity__compact_policy_fits_{pes}pe_8bit", fits, why))
    rejected = {
        c.num_pes
        for c, reason in grid_configs(policy, lanes=(16,), precisions=(8,))
        if reason is not None
    }
    results.append(TestResult(
        "capacity__grid_rejects_small_8bit_arrays",
        rejected == {2, 4, 8},
        f"Expected PEs {{2, 4, 8}} rejected, got {sorted(rejected)}",
    ))

    small = NetworkSpec.from_dims(SMALL_DIMS)
    results.append(TestResult(
        "capacity__auto_buffer_power_of_two",
        auto_weight_buffer_kb(small, 2, 8) == 16 and auto_weight_buffer_kb(policy, 16, 8) == 1024,
        f"Got {auto_weight_buffer_kb(small, 2, 8)} / {auto_weight_buffer_kb(policy, 16, 8)}",
    ))

    return results


def _random_programmed(rng: np.random.Generator, dims, config_args):
    from .flexsim import AcceleratorConfig, auto_weight_buffer_kb, configure
    from .quantnet import NetworkSpec, WeightSet, quantize_network

    pes, lanes, bits = config_args
    spec = NetworkSpec.from_dims(dims)
    weights = WeightSet.random(spec, rng)
    inputs = rng.uniform(-1.0, 1.0, size=(8, spec.input_dim))
    qnet = quantize_network(spec, weights, inputs, bits)
    config = AcceleratorConfig(pes, lanes, bits, auto_weight_buffer_kb(spec, pes, bits))
    return configure(config, spec, qnet), qnet, inputs


def test_event_cycles_match_closed_form() -> list[TestResult]:
    """Event-driven runs reproduce the closed-form cycles and the golden codes."""
    from .flexsim import LEGAL_LANES, LEGAL_PES, LEGAL_PRECISIONS, layer_cycles, network_cycles, run_network
    from .quantnet import quantized_forward

    results = []
    rng = np.random.default_rng(21)
    cycle_failures = []
    code_failures = []
    phase_failures = []
    for trial in range(20):
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(1, 300, size=depth + 1)]
        config_args = (int(rng.choice(LEGAL_PES)), int(rng.choice(LEGAL_LANES)), int(rng.choice(LEGAL_PRECISIONS)))
        acc, qnet, inputs = _random_programmed(rng, dims, config_args)
        result = run_network(acc, inputs[0])

        expected_layers = [layer_cycles(l.in_dim, l.out_dim, acc.config).total for l in acc.spec.layers]
        if result.cycle_count != network_cycles(acc.spec, acc.config) or result.layer_cycles != expected_layers:
            cycle_failures.append(f"{dims} {acc.config.config_id}")

        per_phase = [layer_cycles(l.in_dim, l.out_dim, acc.config) for l in acc.spec.layers]
        phases = {
            "compute": sum(c.compute for c in per_phase),
            "aggregate": sum(c.aggregate for c in per_phase),
            "broadcast": sum(c.broadcast for c in per_phase),
        }
        if result.phase_cycles != phases:
            phase_failures.append(f"{dims} {acc.config.config_id}")

        golden = quantized_forward(qnet, qnet.quantize_input(inputs[0]).values)
        if not np.array_equal(result.output.values, golden):
            code_failures.append(f"{dims} {acc.config.config_id}")

    results.append(TestResult(
        "event_sim__cycles_equal_closed_form",
        not cycle_failures,
        f"Cycle mismatch for {cycle_failures}",
    ))
    results.append(TestResult(
        "event_sim__phase_split",
        not phase_failures,
        f"Phase split mismatch for {phase_failures}",
    ))
    results.append(TestResult(
        "event_sim__codes_equal_golden",
        not code_failures,
        f"Output codes differ for {code_failures}",
    ))

    return results


def test_layer_examples() -> list[TestResult]:
    """Identity layer passes codes through; the 160->4096 layer costs 1024 compute cycles."""
    from .flexsim import AcceleratorConfig, auto_weight_buffer_kb, configure, layer_cycles, run_layer
    from .quantnet import LayerSpec, NetworkSpec, QuantizedTensor, WeightSet, quantize_network

    results = []
    rng = np.random.default_rng(31)
    spec = NetworkSpec((LayerSpec(4, 4, "relu"),))
    eye = WeightSet((np.eye(4),), (np.zeros(4),))
    for bits in (8, 4):
        qnet = quantize_network(spec, eye, [[1.0, -0.5, 0.25, 0.75]], bits)
        acc = configure(AcceleratorConfig(2, 4, bits, auto_weight_buffer_kb(spec, 2, bits)), spec, qnet)
        qmax = 2 ** (bits - 1) - 1
        codes = rng.integers(-qmax, qmax + 1, size=4)
        out = run_layer(acc, 0, QuantizedTensor(codes, qnet.input_scale, bits)).output.values
        results.append(TestResult(
            f"run_layer__identity_passes_relu_codes_{bits}bit",
            np.array_equal(out, np.maximum(codes, 0)),
            f"Input {codes.tolist()} came back as {out.tolist()}",
        ))

    config = AcceleratorConfig(8, 16, 8)
    results.append(TestResult(
        "layer_cycles__policy_input_layer",
        layer_cycles(160, 4096, config).compute == 1024,
        f"Expected 1024 compute cycles, got {layer_cycles(160, 4096, config).compute}",
    ))

    wide = NetworkSpec((LayerSpec(160, 4096, "relu"),))
    weights = WeightSet.random(wide, rng)
    qnet = quantize_network(wide, weights, rng.uniform(-1.0, 1.0, size=(4, 160)), 8)
    acc = configure(AcceleratorConfig(8, 16, 8, auto_weight_buffer_kb(wide, 8, 8)), wide, qnet)
    result = run_layer(acc, 0, qnet.quantize_input(rng.uniform(-1.0, 1.0, size=160)))
    results.append(TestResult(
        "run_layer__policy_input_layer_compute_phase",
        result.phase_cycles["compute"] == 1024,
        f"Expected 1024 compute cycles, got {result.phase_cycles}",
    ))

    return results


def test_compute_monotonicity() -> list[TestResult]:
    """Compute cycles never grow with more PEs or with more MACs per lane cycle."""
    from .flexsim import LEGAL_LANES, LEGAL_PES, LEGAL_PRECISIONS, AcceleratorConfig, layer_cycles

    results = []
    rng = np.random.default_rng(37)
    in_pes = []
    in_macs = []
    for _ in range(200):
        in_dim, out_dim = (int(d) for d in rng.integers(1, 5000, size=2))
        for bits in LEGAL_PRECISIONS:
            for lanes in LEGAL_LANES:
                compute = [layer_cycles(in_dim, out_dim, AcceleratorConfig(p, lanes, bits)).compute for p in LEGAL_PES]
                if any(b > a for a, b in zip(compute, compute[1:])):
                    in_pes.append((in_dim, out_dim, lanes, bits))
            for pes in LEGAL_PES:
                points = []
                for lanes in LEGAL_LANES:
                    for width in (1, 2, 4, 8, 16, 32):
                        config = AcceleratorConfig(pes, lanes, bits, vector_width=width)
                        points.append((lanes * width, layer_cycles(in_dim, out_dim, config).compute))
                points.sort()
                if any(b[1] > a[1] for a, b in zip(points, points[1:]) if b[0] > a[0]):
                    in_macs.append((in_dim, out_dim, pes, bits))

    results.append(TestResult(
        "layer_cycles__non_increasing_in_pes",
        not in_pes,
        f"Compute grew with PEs for {in_pes[:5]}",
    ))
    results.append(TestResult(
        "layer_cycles__non_increasing_in_lane_width",
        not in_macs,
        f"Compute grew with lanes x width for {in_macs[:5]}",
    ))

    return results


def test_partition_coverage() -> list[TestResult]:
    """Every output neuron belongs to exactly one PE; bad assignments are refused."""
    from .flexsim import LEGAL_PES, ConfigurationError, LayerProgram, coverage_bitmap, partition
    from .quantnet import RequantParams

    results = []
    uncovered = [
        (out_dim, pes)
        for out_dim in range(1, 301)
        for pes in LEGAL_PES
        if not np.all(coverage_bitmap(partition(out_dim, pes), out_dim) == 1)
    ]
    results.append(TestResult(
        "partition__covers_each_neuron_once",
        not uncovered,
        f"Coverage broken for (out_dim, PEs) {uncovered[:5]}",
    ))

    overlap = ((0, 3), (2, 5))
    results.append(TestResult(
        "coverage_bitmap__counts_overlap",
        coverage_bitmap(overlap, 5).tolist() == [1, 1, 2, 1, 1],
        f"Got {coverage_bitmap(overlap, 5).tolist()}",
    ))
    gap = ((0, 2), (3, 5))
    results.append(TestResult(
        "coverage_bitmap__shows_gap",
        coverage_bitmap(gap, 5).tolist() == [1, 1, 0, 1, 1],
        f"Got {coverage_bitmap(gap, 5).tolist()}",
    ))
    ok, msg = _raises(lambda: coverage_bitmap(((0, 6),), 5), ConfigurationError)
    results.append(TestResult("coverage_bitmap__out_of_range_raises", ok, msg))

    requant = RequantParams(2**30, 31)
    for name, assignments in (("overlap", overlap), ("gap", gap)):
        ok, msg = _raises(
            lambda assignments=assignments: LayerProgram(0, 4, 5, "relu", assignments, requant, 1.0),
            ConfigurationError,
        )
        results.append(TestResult(f"layer_program__rejects_{name}", ok, msg))

    return results


def test_package_exports() -> list[TestResult]:
    """Every name a package advertises in __all__ can be imported from it."""
    from . import airgym, flexsim

    results = []
    for package in (flexsim, airgym):
        missing = [name for name in package.__all__ if not hasattr(package, name)]
        results.append(TestResult(
            f"exports__{package.__name__.rsplit('.', 1)[-1]}_all_resolves",
            not missing,
            f"Missing from {package.__name__}: {missing}",
        ))

    return results


def test_config_invariance() -> list[TestResult]:
    """Every template configuration computes the same codes for the same network."""
    from .costmodel import grid_configs
    from .flexsim import configure, run_network
    from .quantnet import NetworkSpec, WeightSet, quantize_network, quantized_forward

    results = []
    spec = NetworkSpec.from_dims(SMALL_DIMS)
    rng = np.random.default_rng(13)
    weights = WeightSet.random(spec, rng)
    inputs = rng.uniform(-1.0, 1.0, size=(200, spec.input_dim))
    networks = {bits: quantize_network(spec, weights, inputs, bits) for bits in (4, 8)}
    golden = {bits: quantized_forward(q, q.quantize_input(inputs).values) for bits, q in networks.items()}

    checked = 0
    differing = []
    for config, reason in grid_configs(spec):
        if reason is not None:
            differing.append(f"{config.config_id} infeasible")
            continue
        acc = configure(config, spec, networks[config.precision_bits])
        codes = np.stack([run_network(acc, x).output.values for x in inputs])
        checked += 1
        if not np.array_equal(codes, golden[config.precision_bits]):
            differing.append(config.config_id)

    results.append(TestResult(
        "config_invariance__all_thirty_configs",
        checked == 30 and not differing,
        f"Checked {checked} configs; differing: {differing}",
    ))

    return results


def test_policy_fidelity() -> list[TestResult]:
    """Full-size policy at 8 bits: accelerator matches software within 1e-3."""
    from .flexsim import AcceleratorConfig, auto_weight_buffer_kb, configure, verify_against_reference
    from .quantnet import POLICY_DIMS, NetworkSpec, WeightSet, quantize_network

    results = []
    spec = NetworkSpec.from_dims(POLICY_DIMS)
    rng = np.random.default_rng(0)
    weights = WeightSet.random(spec, rng)
    inputs = rng.uniform(-1.0, 1.0, size=(100, spec.input_dim))
    qnet = quantize_network(spec, weights, inputs, 8)
    config = AcceleratorConfig(16, 16, 8, auto_weight_buffer_kb(spec, 16, 8))
    report = verify_against_reference(configure(config, spec, qnet), spec, weights, inputs, 1e-3)

    results.append(TestResult(
        "policy_fidelity__max_err",
        report.max_err <= 1e-3,
        f"max_err {report.max_err:.3g} > 1e-3",
    ))
    results.append(TestResult(
        "policy_fidelity__drift_within_tolerance",
        report.rel_drift <= report.drift_tolerance and report.passed,
        f"rel_drift {report.rel_drift:.3g} > {report.drift_tolerance}",
    ))
    results.append(TestResult(
        "policy_fidelity__samples",
        report.samples == 100 and report.bits == 8,
        f"Unexpected report {report.to_dict()}",
    ))

    return results


def test_command_channel() -> list[TestResult]:
    """Commands, address map, interrupts, busy and dimension errors, traces."""
    from .flexsim import (
        AcceleratorBusyError,
        AcceleratorConfig,
        ConfigurationError,
        DimensionError,
        configure,
        layer_cycles,
        run_layer,
        run_network,
        write_trace,
    )
    from .quantnet import quantize_network

    results = []
    rng = np.random.default_rng(4)
    acc, qnet, inputs = _random_programmed(rng, SMALL_DIMS, (2, 16, 8))

    results.append(TestResult(
        "command_channel__programming_commands",
        acc.command_log[0] == "CONFIG_LAYER layer=0"
        and acc.command_log[1] == "LOAD_WEIGHTS layer=0 pe=0"
        and len(acc.command_log) == 6,
        f"Unexpected command log {acc.command_log}",
    ))
    results.append(TestResult(
        "command_channel__address_map",
        acc.address_map() == {0: {0: 0, 1: 5120}, 1: {0: 0, 1: 5120}},
        f"Unexpected address map {acc.address_map()}",
    ))

    first = run_network(acc, inputs[0])
    run_network(acc, inputs[1])
    results.append(TestResult(
        "command_channel__irq_per_run",
        acc.irq_count == 2 and first.irq_raised and acc.command_log[-2:] == ["RUN", "READ_RESULT"],
        f"irq_count={acc.irq_count}, tail={acc.command_log[-2:]}",
    ))

    layer = run_layer(acc, 0, qnet.quantize_input(inputs[0]))
    results.append(TestResult(
        "command_channel__single_layer_run",
        layer.output.values.shape == (64,) and layer.cycle_count == layer_cycles(160, 64, acc.config).total,
        f"Unexpected layer run: {layer.output.values.shape}, {layer.cycle_count} cycles",
    ))

    ok, msg = _raises(lambda: run_network(acc, np.zeros(10)), DimensionError)
    results.append(TestResult("command_channel__wrong_input_shape_raises", ok, msg))
    ok, msg = _raises(lambda: run_layer(acc, 5, qnet.quantize_input(inputs[0])), DimensionError)
    results.append(TestResult("command_channel__unconfigured_layer_raises", ok, msg))

    acc._lock.acquire()
    try:
        ok, msg = _raises(lambda: run_network(acc, inputs[0]), AcceleratorBusyError)
    finally:
        acc._lock.release()
    results.append(TestResult("command_channel__second_run_while_busy_raises", ok, msg))

    four_bit = quantize_network(acc.spec, _weights_of(qnet), inputs, 4)
    ok, msg = _raises(lambda: configure(AcceleratorConfig(2, 16, 8), acc.spec, four_bit), ConfigurationError)
    results.append(TestResult("command_channel__precision_mismatch_raises", ok, msg))

    buf = io.StringIO()
    write_trace(first.trace, buf)
    lines = buf.getvalue().splitlines()
    broadcasts = sum(1 for line in lines if line.endswith("GB broadcast"))
    drains = sum(1 for line in lines if line.endswith("ARB aggregate"))
    results.append(TestResult(
        "trace__line_format_and_counts",
        len(lines) == len(first.trace)
        and all(len(line.split()) == 4 for line in lines)
        and broadcasts == 8 + 4
        and drains == 2 * 2,
        f"{len(lines)} lines, {broadcasts} broadcast beats, {drains} drains",
    ))

    return results


def _weights_of(qnet):
    """Float weights equivalent to a quantized network's codes (for re-quantizing in tests)."""
    from .quantnet import WeightSet

    return WeightSet(
        tuple(layer.weights.values * layer.weights.scale for layer in qnet.layers),
        tuple(layer.bias_codes * layer.input_scale * layer.weights.scale for layer in qnet.layers),
    )


# =============================================================================
# costmodel
# =============================================================================


def test_cost_coefficients() -> list[TestResult]:
    """Coefficient files load, validate, round-trip and hash stably."""
    from .costmodel import CoefficientsError, CostCoefficients

    results = []
    coeffs = CostCoefficients.load()
    results.append(TestResult(
        "coefficients__defaults_load",
        coeffs.power_base_w == 0.02 and coeffs.low_precision_mac_factor == 0.5,
        f"Unexpected defaults {coeffs}",
    ))
    results.append(TestResult(
        "coefficients__digest_stable",
        coeffs.digest() == CostCoefficients.load().digest() and len(coeffs.digest()) == 64,
        "Digest changed between loads",
    ))

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "coeffs.json"
        scaled = replace(coeffs, power_base_w=0.03)
        scaled.save(path)
        reloaded = CostCoefficients.load(path)
        results.append(TestResult(
            "coefficients__save_load",
            reloaded == scaled and reloaded.digest() != coeffs.digest(),
            f"Reloaded {reloaded}",
        ))
        ok, msg = _raises(lambda: CostCoefficients.load(Path(tmp) / "missing.json"), CoefficientsError)
        results.append(TestResult("coefficients__missing_file_raises", ok, msg))

    data = coeffs.to_dict()
    ok, msg = _raises(lambda: CostCoefficients.from_dict({**data, "bogus": 1}), CoefficientsError)
    results.append(TestResult("coefficients__unknown_key_raises", ok, msg))
    ok, msg = _raises(lambda: CostCoefficients.from_dict({**data, "power_per_pe_w": -1.0}), CoefficientsError)
    results.append(TestResult("coefficients__negative_term_raises", ok, msg))
    ok, msg = _raises(lambda: CostCoefficients.from_dict({**data, "schema_version": 2}), CoefficientsError)
    results.append(TestResult("coefficients__schema_version_raises", ok, msg))

    return results


def test_cost_model() -> list[TestResult]:
    """Grid extremes for the full policy, vehicle classes, clock and calibration."""
    from .costmodel import (
        CostCoefficients,
        area_mm2,
        calibrate_coefficients,
        calibration_report,
        evaluate_candidate,
        grid_configs,
        power_w,
        vehicle_class,
    )
    from .flexsim import AcceleratorConfig
    from .quantnet import POLICY_DIMS, NetworkSpec

    results = []
    coeffs = CostCoefficients.load()
    policy = NetworkSpec.from_dims(POLICY_DIMS)
    metrics = {c.config_id: evaluate_candidate(c, policy, coeffs) for c, reason in grid_configs(policy) if reason is None}

    def extreme(key, pick):
        chosen = pick(metrics.values(), key=lambda m: getattr(m, key))
        return chosen.config_id, getattr(chosen, key)

    expectations = (
        ("latency_min", extreme("latency_us", min), "pe32-l16-b4", 1828 / 300),
        ("latency_max", extreme("latency_us", max), "pe16-l04-b8", 20644 / 300),
        ("power_min", extreme("power_w", min), "pe08-l04-b4", 0.141824),
        ("power_max", extreme("power_w", max), "pe32-l16-b8", 1.048128),
        ("area_min", extreme("area_mm2", min), "pe08-l04-b4", 5.1284),
        ("area_max", extreme("area_mm2", max), "pe32-l16-b8", 40.9748),
    )
    for name, (config_id, value), want_id, want in expectations:
        results.append(TestResult(
            f"cost_model__policy_{name}",
            config_id == want_id and abs(value - want) <= 1e-3,
            f"Expected {want_id} at {want:.4f}, got {config_id} at {value:.4f}",
        ))

    report = calibration_report(policy, coeffs)
    off = [k for k, v in report.items() if not (v["min_in_band"] and v["max_in_band"])]
    results.append(TestResult(
        "cost_model__calibration_in_band",
        not off,
        f"Out of band: {off}",
    ))

    some = metrics["pe16-l08-b8"]
    results.append(TestResult(
        "cost_model__energy_is_power_times_latency",
        math.isclose(some.energy_uj, some.power_w * some.latency_us),
        f"{some.energy_uj} != {some.power_w} * {some.latency_us}",
    ))

    classes = [vehicle_class(p) for p in (0.05, 0.1, 0.1000001, 5.0, 20.0, 50.0, 60.0, float("nan"), -1.0)]
    results.append(TestResult(
        "vehicle_class__boundaries",
        classes == ["pico", "pico", "nano", "nano", "micro", "micro", "std", "none", "none"],
        f"Got {classes}",
    ))

    base = AcceleratorConfig(8, 16, 8)
    fast = AcceleratorConfig(8, 16, 8, clock_mhz=600.0)
    m_base = evaluate_candidate(base, NetworkSpec.from_dims(SMALL_DIMS), coeffs)
    m_fast = evaluate_candidate(fast, NetworkSpec.from_dims(SMALL_DIMS), coeffs)
    static = coeffs.power_base_w + coeffs.power_per_sram_kb_w * base.total_buffer_kb
    results.append(TestResult(
        "cost_model__clock_scaling",
        math.isclose(m_fast.latency_us, m_base.latency_us / 2)
        and math.isclose(m_fast.power_w - static, 2 * (m_base.power_w - static))
        and m_fast.area_mm2 == m_base.area_mm2,
        f"300 MHz {m_base}, 600 MHz {m_fast}",
    ))

    target = replace(
        coeffs,
        power_base_w=coeffs.power_base_w * 2,
        power_per_pe_w=coeffs.power_per_pe_w * 2,
        power_per_lane_w=coeffs.power_per_lane_w * 2,
        power_per_sram_kb_w=coeffs.power_per_sram_kb_w * 2,
        area_base_mm2=coeffs.area_base_mm2 * 3,
        area_per_pe_mm2=coeffs.area_per_pe_mm2 * 3,
        area_per_lane_mm2=coeffs.area_per_lane_mm2 * 3,
        area_per_sram_kb_mm2=coeffs.area_per_sram_kb_mm2 * 3,
    )
    anchors = [
        (c, power_w(c, target), area_mm2(c, target))
        for c in (AcceleratorConfig(2, 4, 8), AcceleratorConfig(8, 16, 4), AcceleratorConfig(32, 8, 8))
    ]
    fitted = calibrate_coefficients(coeffs, anchors)
    fit_ok = all(
        math.isclose(power_w(c, fitted), p, rel_tol=1e-9) and math.isclose(area_mm2(c, fitted), a, rel_tol=1e-9)
        for c, p, a in anchors
    )
    results.append(TestResult(
        "calibrate_coefficients__recovers_scaling",
        fit_ok,
        "Fitted coefficients miss the anchors",
    ))

    return results


def test_cost_monotonicity() -> list[TestResult]:
    """Power and area grow with compute resources and shrink from 8 to 4 bits."""
    from .costmodel import CostCoefficients, area_mm2, power_w
    from .flexsim import LEGAL_LANES, LEGAL_PES, LEGAL_PRECISIONS, MIN_WEIGHT_BUFFER_KB, AcceleratorConfig

    results = []
    coeffs = CostCoefficients.load()

    def cost(config):
        return power_w(config, coeffs), area_mm2(config, coeffs)

    # Fixed buffers: more MACs per cycle (P * L * V) must cost strictly more
    unordered = []
    for bits in LEGAL_PRECISIONS:
        points = [
            AcceleratorConfig(p, l, bits, MIN_WEIGHT_BUFFER_KB)
            for p in LEGAL_PES
            for l in LEGAL_LANES
        ]
        for a in points:
            for b in points:
                wider = b.num_pes * b.macs_per_cycle_per_pe > a.num_pes * a.macs_per_cycle_per_pe
                if wider and not all(x < y for x, y in zip(cost(a), cost(b))):
                    unordered.append((a.config_id, b.config_id))
    results.append(TestResult(
        "cost_model__strictly_increasing_in_macs",
        not unordered,
        f"Not more expensive: {unordered[:5]}",
    ))

    partial = []
    cheaper = []
    for buffer_kb in (16, 1024):
        for bits in LEGAL_PRECISIONS:
            for l in LEGAL_LANES:
                row = [cost(AcceleratorConfig(p, l, bits, buffer_kb)) for p in LEGAL_PES]
                if not all(x < y for a, b in zip(row, row[1:]) for x, y in zip(a, b)):
                    partial.append(f"PEs at l{l} b{bits} {buffer_kb}kB")
            for p in LEGAL_PES:
                col = [cost(AcceleratorConfig(p, l, bits, buffer_kb)) for l in LEGAL_LANES]
                if not all(x < y for a, b in zip(col, col[1:]) for x, y in zip(a, b)):
                    partial.append(f"lanes at pe{p} b{bits} {buffer_kb}kB")
        for p in LEGAL_PES:
            for l in LEGAL_LANES:
                eight = cost(AcceleratorConfig(p, l, 8, buffer_kb))
                four = cost(AcceleratorConfig(p, l, 4, buffer_kb))
                if not all(x < y for x, y in zip(four, eight)):
                    cheaper.append(f"pe{p} l{l} {buffer_kb}kB")
    results.append(TestResult(
        "cost_model__increasing_in_pes_and_lanes",
        not partial,
        f"Not increasing along {partial[:5]}",
    ))
    results.append(TestResult(
        "cost_model__four_bit_cheaper",
        not cheaper,
        f"4-bit not cheaper at {cheaper[:5]}",
    ))

    return results


# =============================================================================
# dse
# =============================================================================


def _pareto_brute_force(arr: np.ndarray) -> np.ndarray:
    no_worse = np.all(arr[None, :, :] <= arr[:, None, :], axis=2)  # [i, j]: j no worse than i
    better = np.any(arr[None, :, :] < arr[:, None, :], axis=2)
    return ~np.any(no_worse & better, axis=1)


def test_pareto_front() -> list[TestResult]:
    """Front membership agrees with pairwise dominance on random sets."""
    from .dse import InvalidPointError, pareto_front

    results = []
    rng = np.random.default_rng(17)
    mismatches = 0
    for trial in range(1000):
        n = int(rng.integers(1, 201))
        if trial % 2:
            pts = rng.integers(0, 10, size=(n, 2)).astype(np.float64)
        else:
            pts = rng.uniform(0, 1, size=(n, 2))
        if list(pareto_front(pts)) != _pareto_brute_force(pts).tolist():
            mismatches += 1
    results.append(TestResult(
        "pareto_front__matches_brute_force",
        mismatches == 0,
        f"{mismatches} of 1000 sets disagree",
    ))

    results.append(TestResult(
        "pareto_front__duplicates_stay",
        pareto_front([(1, 1), (1, 1), (2, 2)]) == [True, True, False],
        f"Got {pareto_front([(1, 1), (1, 1), (2, 2)])}",
    ))
    results.append(TestResult(
        "pareto_front__empty",
        pareto_front([]) == [],
        "Empty input should give an empty mask",
    ))
    ok, msg = _raises(lambda: pareto_front([(1.0, float("nan"))]), InvalidPointError)
    results.append(TestResult("pareto_front__non_finite_raises", ok, msg))

    return results


def test_knee_selection() -> list[TestResult]:
    """Knee: farthest below the chord, ties to the lower latency."""
    from .dse import InvalidPointError, knee

    results = []
    results.append(TestResult(
        "knee__farthest_from_chord",
        knee([(0.0, 1.0), (0.2, 0.2), (1.0, 0.0)]) == 1,
        f"Got {knee([(0.0, 1.0), (0.2, 0.2), (1.0, 0.0)])}",
    ))
    results.append(TestResult(
        "knee__tie_prefers_lower_x",
        knee([(0.0, 1.0), (0.4, 0.1), (0.1, 0.4), (1.0, 0.0)]) == 2,
        f"Got {knee([(0.0, 1.0), (0.4, 0.1), (0.1, 0.4), (1.0, 0.0)])}",
    ))
    results.append(TestResult(
        "knee__scale_invariant",
        knee([(0.0, 1000.0), (2.0, 200.0), (10.0, 0.0)]) == 1,
        "Knee should not depend on axis units",
    ))
    results.append(TestResult(
        "knee__nothing_below_chord_picks_lowest_x",
        knee([(0.5, 0.9), (0.0, 1.0), (1.0, 0.0)]) == 1,
        f"Got {knee([(0.5, 0.9), (0.0, 1.0), (1.0, 0.0)])}",
    ))
    results.append(TestResult("knee__singleton", knee([(3.0, 4.0)]) == 0, "Single point should be its own knee"))
    ok, msg = _raises(lambda: knee([]), InvalidPointError)
    results.append(TestResult("knee__empty_raises", ok, msg))

    return results


def test_compact_policy_tradeoff() -> list[TestResult]:
    """4/8/32 PEs at 16 lanes and 8 bits: the 8-PE point is the knee on both pairs."""
    from .costmodel import CostCoefficients, evaluate_candidate, grid_configs
    from .dse import OBJECTIVE_PAIRS, knee, pareto_front
    from .quantnet import NetworkSpec

    results = []
    spec = NetworkSpec.from_dims(COMPACT_DIMS)
    coeffs = CostCoefficients.load()
    metrics = [
        evaluate_candidate(c, spec, coeffs)
        for c, reason in grid_configs(spec, pes=(4, 8, 32), lanes=(16,), precisions=(8,))
        if reason is None
    ]
    by_id = {m.config_id: m for m in metrics}
    results.append(TestResult(
        "compact_policy__all_feasible",
        sorted(by_id) == ["pe04-l16-b8", "pe08-l16-b8", "pe32-l16-b8"],
        f"Feasible: {sorted(by_id)}",
    ))
    if len(by_id) != 3:
        return results

    small, mid, large = by_id["pe04-l16-b8"], by_id["pe08-l16-b8"], by_id["pe32-l16-b8"]
    results.append(TestResult(
        "compact_policy__cycles",
        (small.cycles, mid.cycles, large.cycles) == (6082, 3276, 1254),
        f"Got {(small.cycles, mid.cycles, large.cycles)}",
    ))
    results.append(TestResult(
        "compact_policy__orderings",
        small.power_w < mid.power_w < large.power_w
        and small.area_mm2 < mid.area_mm2 < large.area_mm2
        and large.latency_us < mid.latency_us < small.latency_us,
        "Power/area should grow and latency shrink with PEs",
    ))

    for pair, x_key, y_key in OBJECTIVE_PAIRS:
        pts = [(getattr(m, x_key), getattr(m, y_key)) for m in metrics]
        mask = pareto_front(pts)
        front = [m for m, keep in zip(metrics, mask) if keep]
        chosen = front[knee([(getattr(m, x_key), getattr(m, y_key)) for m in front])]
        results.append(TestResult(
            f"compact_policy__knee_{pair}",
            all(mask) and chosen.config_id == "pe08-l16-b8",
            f"Front {mask}, knee {chosen.config_id}",
        ))

    return results


def test_energy_tradeoff() -> list[TestResult]:
    """The lowest-energy design is neither the lowest-power nor the fastest one."""
    from .costmodel import CostCoefficients, evaluate_candidate, grid_configs
    from .quantnet import NetworkSpec

    results = []
    spec = NetworkSpec.from_dims(SMALL_DIMS)
    coeffs = CostCoefficients.load()
    metrics = [evaluate_candidate(c, spec, coeffs) for c, reason in grid_configs(spec) if reason is None]

    min_energy = min(metrics, key=lambda m: m.energy_uj).config_id
    min_power = min(metrics, key=lambda m: m.power_w).config_id
    min_latency = min(metrics, key=lambda m: m.latency_us).config_id
    results.append(TestResult(
        "energy__extremes",
        (min_energy, min_power, min_latency) == ("pe02-l16-b4", "pe02-l04-b4", "pe08-l16-b4"),
        f"Got energy={min_energy} power={min_power} latency={min_latency}",
    ))
    results.append(TestResult(
        "energy__not_monotone_in_latency",
        min_energy not in (min_power, min_latency),
        "Minimum energy coincides with an endpoint",
    ))

    return results


def test_run_dse() -> list[TestResult]:
    """Exploration driver: verification gate, fronts, knees and recommendations."""
    from .costmodel import CostCoefficients, grid_configs
    from .dse import DesignSpace, DseError, VerificationFailedError, enumerate_space, recommend, run_dse
    from .quantnet import POLICY_DIMS, NetworkSpec, WeightSet

    results = []
    spec = NetworkSpec.from_dims(SMALL_DIMS)
    rng = np.random.default_rng(9)
    weights = WeightSet.random(spec, rng)
    calibration = rng.uniform(-1.0, 1.0, size=(32, spec.input_dim))
    coeffs = CostCoefficients.load()
    space = DesignSpace(pe_choices=(2, 8, 32), lane_choices=(4, 16), precision_choices=(8,))

    report = run_dse(space, spec, weights, coeffs, calibration, drift_tolerance={8: 0.5}, jobs=2)
    ids = [r.config_id for r in report.records]
    results.append(TestResult(
        "run_dse__records_sorted_and_feasible",
        ids == sorted(ids) and len(ids) == 6 and len(report.feasible()) == 6,
        f"Records {ids}",
    ))
    results.append(TestResult(
        "run_dse__verification_recorded",
        report.verification[8].passed and report.coefficients_digest == coeffs.digest(),
        f"Verification {report.verification}",
    ))
    knees_on_front = all(report.record(cid).pareto[pair] for pair, cid in report.knees.items())
    results.append(TestResult(
        "run_dse__knees_on_front",
        set(report.knees) == {"lat_power", "lat_area"} and knees_on_front,
        f"Knees {report.knees}",
    ))
    single_knee = all(sum(r.knee[pair] for r in report.records) == 1 for pair in report.knees)
    results.append(TestResult("run_dse__one_knee_per_pair", single_knee, "Expected exactly one knee per pair"))

    energy = recommend(report, "energy")
    best_energy = min(r.metrics.energy_uj for r in report.feasible())
    results.append(TestResult(
        "recommend__min_energy",
        energy.metrics.energy_uj == best_energy,
        f"Chose {energy.config_id}",
    ))
    results.append(TestResult(
        "recommend__knee_default",
        recommend(report).config_id == report.knees["lat_power"],
        "Default recommendation should be the latency/power knee",
    ))
    pico = recommend(report, "knee", "pico")
    results.append(TestResult(
        "recommend__vehicle_budget",
        pico.metrics.power_w <= 0.1 and pico.vehicle_class == "pico",
        f"Chose {pico.config_id} at {pico.metrics.power_w} W",
    ))
    ok, msg = _raises(lambda: recommend(report, "cheapest"), DseError)
    results.append(TestResult("recommend__unknown_objective_raises", ok, msg))
    ok, msg = _raises(lambda: recommend(report, "knee", "jumbo"), DseError)
    results.append(TestResult("recommend__unknown_vehicle_raises", ok, msg))

    ok, msg = _raises(
        lambda: run_dse(space, spec, weights, coeffs, calibration, drift_tolerance={8: 1e-9}),
        VerificationFailedError,
    )
    results.append(TestResult("run_dse__verification_failure_raises", ok, msg))

    ok, msg = _raises(lambda: DesignSpace(pe_choices=(3,)), DseError)
    results.append(TestResult("design_space__illegal_choice_raises", ok, msg))

    policy = NetworkSpec.from_dims(POLICY_DIMS)
    records = enumerate_space(DesignSpace(), policy)
    expected = sum(1 for _, reason in grid_configs(policy) if reason is None)
    results.append(TestResult(
        "enumerate_space__policy_grid",
        len(records) == 30 and sum(r.feasible for r in records) == expected == 15,
        f"{len(records)} records, {sum(r.feasible for r in records)} feasible",
    ))
    rejected = [r for r in records if not r.feasible]
    results.append(TestResult(
        "enumerate_space__reject_reasons",
        all("overflows" in r.reject_reason and r.vehicle_class == "none" for r in rejected),
        "Infeasible records need a reason and no vehicle class",
    ))

    return results


# =============================================================================
# report and manifest
# =============================================================================


def _marked_report():
    """A DSE report over the full policy with one infeasible and two feasible records."""
    from .costmodel import CostCoefficients, evaluate_candidate
    from .dse import DesignSpace, DseReport, _mark_fronts, enumerate_space
    from .quantnet import POLICY_DIMS, NetworkSpec

    policy = NetworkSpec.from_dims(POLICY_DIMS)
    coeffs = CostCoefficients.load()
    records = enumerate_space(DesignSpace(pe_choices=(8, 16, 32), lane_choices=(16,), precision_choices=(8,)), policy)
    for record in records:
        if record.feasible:
            record.metrics = evaluate_candidate(record.config, policy, coeffs)
    knees = _mark_fronts(records)
    return DseReport(records, coeffs.digest(), {}, knees)


def test_results_table() -> list[TestResult]:
    """results.csv: fixed columns, stable bytes, infeasible rows, plots."""
    from .report import (
        RESULTS_COLUMNS,
        points_from_rows,
        read_results_csv,
        recommendation_dict,
        summary_lines,
        write_plots,
        write_results_csv,
    )

    results = []
    report = _marked_report()

    with tempfile.TemporaryDirectory() as tmp:
        first = write_results_csv(report, Path(tmp) / "a" / "results.csv")
        second = write_results_csv(report, Path(tmp) / "b" / "results.csv")
        results.append(TestResult(
            "results_csv__byte_stable",
            first.read_bytes() == second.read_bytes(),
            "Two writes of the same report differ",
        ))

        header = first.read_text(encoding="utf-8").splitlines()[0]
        results.append(TestResult(
            "results_csv__column_order",
            header == ",".join(RESULTS_COLUMNS),
            f"Header {header}",
        ))

        rows = {row["config_id"]: row for row in read_results_csv(first)}
        bad = rows.get("pe08-l16-b8", {})
        results.append(TestResult(
            "results_csv__infeasible_row",
            bad.get("feasible") == "0"
            and bad.get("latency_us") == ""
            and bad.get("vehicle_class") == "none"
            and "overflows" in bad.get("reject_reason", ""),
            f"Row {bad}",
        ))
        good = rows.get("pe32-l16-b8", {})
        results.append(TestResult(
            "results_csv__feasible_row",
            good.get("feasible") == "1"
            and good.get("latency_us") == f"{3528 / 300:.4f}"
            and good.get("pareto_lat_power") == "1"
            and good.get("vehicle_class") == "nano",
            f"Row {good}",
        ))

        points = points_from_rows(list(rows.values()), "lat_power")
        results.append(TestResult(
            "results_csv__points_skip_infeasible",
            sorted(p.config_id for p in points) == ["pe16-l16-b8", "pe32-l16-b8"]
            and sum(p.knee for p in points) == 1,
            f"Points {points}",
        ))

        lines = summary_lines(list(rows.values()))
        results.append(TestResult(
            "summary_lines__front_members",
            len(lines) == 3 and any("knee" in line for line in lines[1:]),
            f"Lines {lines}",
        ))

        plots = write_plots(report, Path(tmp) / "a")
        again = write_plots(report, Path(tmp) / "b")
        results.append(TestResult(
            "plots__svg_written",
            [p.name for p in plots] == ["pareto_latency_power.svg", "pareto_latency_area.svg"]
            and all(p.read_text(encoding="utf-8").lstrip().startswith("<?xml") for p in plots),
            f"Plots {plots}",
        ))
        results.append(TestResult(
            "plots__byte_stable",
            all(a.read_bytes() == b.read_bytes() for a, b in zip(plots, again)),
            "Re-drawn plots differ",
        ))

        bogus = Path(tmp) / "bogus.csv"
        bogus.write_text("a,b\n1,2\n", encoding="utf-8")
        ok, msg = _raises(lambda: read_results_csv(bogus), ValueError)
        results.append(TestResult("results_csv__wrong_columns_raises", ok, msg))

    chosen = report.record(report.knees["lat_power"])
    rec = recommendation_dict(report, chosen, "knee", None)
    results.append(TestResult(
        "recommendation__fields",
        rec["selected"]["config_id"] == chosen.config_id
        and rec["knees"] == report.knees
        and rec["coefficients_sha256"] == report.coefficients_digest,
        f"Recommendation {rec}",
    ))

    return results


def test_run_manifest() -> list[TestResult]:
    """Stage records, artifact hashes and manifest loading."""
    from .manifest import STAGE_FAILED, STAGE_OK, ManifestError, RunManifest, file_sha256

    results = []
    manifest = RunManifest("1.0.0", "abc", {"seed": 1}, seeds={"run": 1})

    with manifest.stage("first") as stage:
        stage.detail = "fine"
    try:
        with manifest.stage("second"):
            raise ValueError("boom")
    except ValueError:
        pass
    results.append(TestResult(
        "manifest__stage_status",
        manifest.stage_status("first") == STAGE_OK
        and manifest.stage_status("second") == STAGE_FAILED
        and manifest.stages[1].detail == "boom"
        and manifest.stage_status("third") is None,
        f"Stages {manifest.stages}",
    ))

    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        (out / "sub").mkdir()
        (out / "sub" / "data.txt").write_text("hello\n", encoding="utf-8")
        path = manifest.write(out)
        loaded = RunManifest.load(path)
        listed = {a.path: a for a in loaded.artifacts}
        results.append(TestResult(
            "manifest__artifacts_hashed",
            listed["sub/data.txt"].sha256 == file_sha256(out / "sub" / "data.txt")
            and listed["manifest.json"].sha256 is None,
            f"Artifacts {loaded.artifacts}",
        ))
        results.append(TestResult(
            "manifest__round_trip",
            loaded.to_dict() == manifest.to_dict(),
            "Loaded manifest differs",
        ))
        results.append(TestResult(
            "manifest__nothing_unlisted",
            loaded.unlisted_files(out) == [],
            f"Unlisted {loaded.unlisted_files(out)}",
        ))
        (out / "late.txt").write_text("x", encoding="utf-8")
        results.append(TestResult(
            "manifest__detects_unlisted",
            loaded.unlisted_files(out) == ["late.txt"],
            f"Unlisted {loaded.unlisted_files(out)}",
        ))

        ok, msg = _raises(lambda: RunManifest.load(out / "nope.json"), ManifestError)
        results.append(TestResult("manifest__missing_raises", ok, msg))
        wrong = out / "wrong.json"
        wrong.write_text(json.dumps({**manifest.to_dict(), "schema_version": 9}), encoding="utf-8")
        ok, msg = _raises(lambda: RunManifest.load(wrong), ManifestError)
        results.append(TestResult("manifest__schema_version_raises", ok, msg))

    return results


# =============================================================================
# airgym
# =============================================================================


def test_reward_function() -> list[TestResult]:
    """Reward examples, bound and vectorized evaluation."""
    from .airgym import reward

    results = []
    for name, args, expected in (
        ("goal_at_speed", (1, 0, 0.0, 2.5), 999.0),
        ("crash", (0, 1, 12.0, 2.5), -113.0),
        ("slow_step", (0, 0, 10.0, 1.0), -12.5),
    ):
        got = reward(*args)
        results.append(TestResult(f"reward__{name}", got == expected, f"Expected {expected}, got {got}"))

    rng = np.random.default_rng(1)
    n = 1_000_000
    alpha = rng.integers(0, 2, size=n)
    beta = (1 - alpha) * rng.integers(0, 2, size=n)
    values = reward(alpha, beta, rng.uniform(0, 40, size=n), rng.uniform(-5, 5, size=n))
    results.append(TestResult(
        "reward__bounded_by_goal_bonus",
        float(np.max(values)) <= 999.0,
        f"Max reward {float(np.max(values))}",
    ))

    return results


def _terminal_violations(transitions: int, seed: int) -> list[str]:
    """Random-walk a cluttered arena and collect transitions that break the terminal rules."""
    from .airgym import ArenaSpec, RewardParams, generate_env, reset_episode, reward, step
    from .airgym.dynamics import Outcome

    params = RewardParams()
    rng = np.random.default_rng(seed)
    arena = generate_env(ArenaSpec(obstacle_count=5, seed=seed))
    radius = params.goal_radius_m
    bad: list[str] = []
    state = reset_episode(arena, rng)
    for i in range(transitions):
        result = step(arena, state, int(rng.integers(25)), params=params)
        outcome, after = result.outcome, result.state
        reached = outcome is Outcome.GOAL
        failed = outcome in (Outcome.COLLISION, Outcome.TIMEOUT)
        expected = reward(
            1.0 if reached else 0.0,
            1.0 if failed else 0.0,
            0.0 if reached else after.goal_distance,
            after.speed,
            params,
        )
        if result.done != (outcome is not Outcome.RUNNING):
            bad.append(f"{i}: done={result.done} with {outcome.value}")
        elif reached and after.goal_distance > radius + 1e-9:
            bad.append(f"{i}: goal at distance {after.goal_distance}")
        elif not reached and after.goal_distance < radius - 1e-9:
            bad.append(f"{i}: {outcome.value} inside the goal disc")
        elif result.reward > 999.0 or result.reward != expected:
            bad.append(f"{i}: reward {result.reward} != {expected}")
        if len(bad) >= 5:
            break
        state = reset_episode(arena, rng) if result.done else after
    return bad


def test_step_dynamics() -> list[TestResult]:
    """Goal, collision, timeout and yaw transitions; terminal outcomes are exclusive."""
    from .airgym import (
        STEP_LIMIT,
        ActionError,
        AgentState,
        ArenaSpec,
        EpisodeFinishedError,
        generate_env,
        step,
    )
    from .airgym.dynamics import DEFAULT_ACTIONS, Outcome

    results = []
    empty = generate_env(ArenaSpec(obstacle_count=0))

    results.append(TestResult(
        "actions__table_layout",
        len(DEFAULT_ACTIONS) == 25
        and [a.kind for a in DEFAULT_ACTIONS.actions].count("forward") == 10
        and [a.kind for a in DEFAULT_ACTIONS.actions].count("backward") == 5
        and [a.kind for a in DEFAULT_ACTIONS.actions].count("yaw") == 10,
        "Expected 10 forward, 5 backward and 10 yaw actions",
    ))

    goal = step(empty, AgentState(5.0, 5.0, 0.0, 0.0, 7.5, 5.0), 4)
    results.append(TestResult(
        "step__reaches_goal",
        goal.outcome is Outcome.GOAL and goal.done and goal.reward == 999.0 and abs(goal.state.x - 6.5) < 1e-9,
        f"Got {goal}",
    ))

    crash = step(empty, AgentState(1.0, 5.0, math.pi, 0.0, 20.0, 20.0), 9)
    results.append(TestResult(
        "step__wall_collision",
        crash.outcome is Outcome.COLLISION and abs(crash.state.x) < 1e-9 and abs(crash.reward + 126.0) < 1e-9,
        f"Got {crash}",
    ))

    last = AgentState(5.0, 5.0, 0.0, 0.0, 8.0, 9.0, STEP_LIMIT - 1)
    timeout = step(empty, last, 15)
    results.append(TestResult(
        "step__timeout",
        timeout.outcome is Outcome.TIMEOUT and timeout.done and abs(timeout.reward - (-100.0 - 5.0 - 2.5 - 1.0)) < 1e-9,
        f"Got {timeout}",
    ))

    yaw = step(empty, AgentState(5.0, 5.0, 0.0, 0.0, 20.0, 5.0), 15)
    results.append(TestResult(
        "step__yaw_turns_in_place",
        yaw.outcome is Outcome.RUNNING
        and (yaw.state.x, yaw.state.y) == (5.0, 5.0)
        and abs(yaw.state.heading + math.radians(108.0)) < 1e-12,
        f"Got {yaw.state}",
    ))

    ok, msg = _raises(lambda: step(empty, last, 25), ActionError)
    results.append(TestResult("step__bad_action_raises", ok, msg))
    ok, msg = _raises(lambda: step(empty, replace(last, step_index=STEP_LIMIT), 0), EpisodeFinishedError)
    results.append(TestResult("step__finished_episode_raises", ok, msg))

    bad = _terminal_violations(2000, seed=6)
    results.append(TestResult(
        "step__terminal_outcomes_consistent",
        not bad,
        f"Inconsistent transitions: {bad}",
    ))

    return results


def test_terminal_exclusivity() -> list[TestResult]:
    """A million random transitions: goal and crash never coincide, rewards match the formula."""
    bad = _terminal_violations(1_000_000, seed=61)
    return [TestResult(
        "step__terminal_exclusive_over_million_transitions",
        not bad,
        f"Inconsistent transitions: {bad}",
    )]


def test_arena_generation() -> list[TestResult]:
    """Seeded arenas: reproducible, separated obstacles, JSON round trip."""
    from .airgym import Arena, ArenaGenerationError, ArenaSpec, generate_env

    results = []
    a = generate_env(ArenaSpec(obstacle_count=5, seed=42))
    b = generate_env(ArenaSpec(obstacle_count=5, seed=42))
    c = generate_env(ArenaSpec(obstacle_count=5, seed=43))
    results.append(TestResult(
        "arena__same_seed_same_arena",
        a.to_json() == b.to_json() and a.to_json() != c.to_json(),
        "Seeded generation is not reproducible",
    ))

    spec = a.spec
    separated = all(
        not o.overlaps(p, spec.clearance_m) for i, o in enumerate(a.obstacles) for p in a.obstacles[i + 1:]
    )
    inside = all(0 <= o.xmin < o.xmax <= spec.width_m and 0 <= o.ymin < o.ymax <= spec.height_m for o in a.obstacles)
    results.append(TestResult(
        "arena__obstacles_placed",
        len(a.obstacles) == 5 and separated and inside,
        f"Obstacles {a.obstacles}",
    ))
    results.append(TestResult(
        "arena__json_round_trip",
        Arena.from_json(a.to_json()) == a,
        "Arena differs after JSON round trip",
    ))

    ok, msg = _raises(
        lambda: generate_env(ArenaSpec(3.0, 3.0, 5, 0, min_obstacle_m=2.0, max_obstacle_m=2.5)),
        ArenaGenerationError,
    )
    results.append(TestResult("arena__overfull_raises", ok, msg))
    ok, msg = _raises(lambda: ArenaSpec(obstacle_count=6), ValueError)
    results.append(TestResult("arena__too_many_obstacles_raises", ok, msg))
    ok, msg = _raises(lambda: ArenaSpec(obstacle_count=-1), ValueError)
    results.append(TestResult("arena__negative_obstacles_raises", ok, msg))
    free = generate_env(ArenaSpec(obstacle_count=0, seed=42))
    results.append(TestResult(
        "arena__empty_arena_allowed",
        len(free.obstacles) == 0,
        f"Expected no obstacles, got {free.obstacles}",
    ))

    return results


def test_goal_uniformity() -> list[TestResult]:
    """Goals over 1000 seeds spread evenly across a 5x5 grid (chi-square, p = 0.01)."""
    from .airgym import ArenaSpec, generate_env, reset_episode

    results = []
    counts = np.zeros((5, 5))
    for seed in range(1000):
        arena = generate_env(ArenaSpec(obstacle_count=1, seed=seed))
        state = reset_episode(arena, np.random.default_rng(seed))
        i = min(int(state.goal_x / (arena.width / 5)), 4)
        j = min(int(state.goal_y / (arena.height / 5)), 4)
        counts[i, j] += 1
    expected = 1000 / 25
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    results.append(TestResult(
        "goal_sampling__uniform",
        chi2 <= CHI2_CRITICAL_24DOF,
        f"chi2 {chi2:.2f} > {CHI2_CRITICAL_24DOF}",
    ))

    return results


def test_depth_sensor() -> list[TestResult]:
    """Observation layout and analytic ray distances."""
    from .airgym import NUM_RAYS, OBSERVATION_DIM, AgentState, Arena, ArenaSpec, Obstacle, generate_env, ray_angles, sense

    results = []
    empty = generate_env(ArenaSpec(obstacle_count=0))
    state = AgentState(12.5, 12.5, 0.3, 2.0, 20.0, 3.0, 100)
    obs = sense(empty, state)
    results.append(TestResult(
        "sense__shape_and_range",
        obs.shape == (OBSERVATION_DIM,) == (160,) and float(np.max(np.abs(obs))) <= 1.0,
        f"Shape {obs.shape}, max {float(np.max(np.abs(obs)))}",
    ))

    expected = []
    for angle in ray_angles(state.heading):
        c, s = math.cos(angle), math.sin(angle)
        candidates = []
        if c > 1e-12:
            candidates.append((empty.width - state.x) / c)
        elif c < -1e-12:
            candidates.append(-state.x / c)
        if s > 1e-12:
            candidates.append((empty.height - state.y) / s)
        elif s < -1e-12:
            candidates.append(-state.y / s)
        expected.append(min(min(candidates), 20.0) / 20.0)
    results.append(TestResult(
        "sense__empty_arena_matches_geometry",
        np.allclose(obs[:NUM_RAYS], expected, atol=1e-12),
        f"Max deviation {float(np.max(np.abs(obs[:NUM_RAYS] - expected)))}",
    ))

    wall = Arena(ArenaSpec(obstacle_count=1), (Obstacle(17.5, 10.0, 18.5, 15.0),))
    ahead = sense(wall, AgentState(12.5, 12.5, 0.0, 0.0, 2.0, 2.0))
    centre = ahead[NUM_RAYS // 2 - 1 : NUM_RAYS // 2 + 1]
    results.append(TestResult(
        "sense__obstacle_five_metres_ahead",
        np.allclose(centre, 0.25, atol=1e-3),
        f"Centre rays {centre.tolist()}",
    ))

    return results


def test_policy_baselines() -> list[TestResult]:
    """Scripted oracle always arrives in free space; random flight rarely does."""
    from .airgym import ArenaSpec, evaluate_policy, random_policy, sample_observations, toward_goal_policy

    results = []
    oracle = evaluate_policy(toward_goal_policy(), ArenaSpec(obstacle_count=0), episodes=20, seed=5)
    results.append(TestResult(
        "baselines__oracle_free_space",
        oracle.success_rate == 1.0,
        f"Oracle success {oracle.success_rate:.2f} ({oracle.to_dict()})",
    ))

    rand = evaluate_policy(random_policy(3), ArenaSpec(obstacle_count=5), episodes=50, seed=11)
    results.append(TestResult(
        "baselines__random_policy_fails",
        rand.success_rate < 0.2 and rand.successes + rand.collisions + rand.timeouts == 50,
        f"Random success {rand.success_rate:.2f}",
    ))

    obs = sample_observations(ArenaSpec(), 12, seed=4, obstacle_range=(1, 5))
    again = sample_observations(ArenaSpec(), 12, seed=4, obstacle_range=(1, 5))
    results.append(TestResult(
        "sample_observations__seeded",
        obs.shape == (12, 160) and np.array_equal(obs, again) and float(np.max(np.abs(obs))) <= 1.0,
        f"Shape {obs.shape}",
    ))

    return results


def test_greedy_policy() -> list[TestResult]:
    """Greedy action is the argmax of the floating-point forward pass."""
    from .airgym import ArenaSpec, generate_env, reset_episode, sense
    from .airgym.evaluate import greedy_policy
    from .quantnet import NetworkSpec, WeightSet, fc_forward_fp

    results = []
    spec = NetworkSpec.from_dims((160, 32, 25))
    rng = np.random.default_rng(2)
    weights = WeightSet.random(spec, rng)
    policy = greedy_policy(spec, weights)
    arena = generate_env(ArenaSpec(seed=2))
    mismatches = 0
    for _ in range(20):
        state = reset_episode(arena, rng)
        obs = sense(arena, state)
        if policy(obs, state, arena) != int(np.argmax(fc_forward_fp(spec, weights, obs))):
            mismatches += 1
    results.append(TestResult("greedy_policy__argmax", mismatches == 0, f"{mismatches} mismatches"))

    return results


def _tiny_trainer(**hyper_overrides):
    from .airgym import ArenaSpec, DQNHyper, DQNTrainer, arena_factory
    from .quantnet import NetworkSpec

    hyper = DQNHyper(
        **{
            "total_steps": 120,
            "replay_size": 64,
            "batch_size": 8,
            "learning_starts": 16,
            "target_sync_steps": 40,
            **hyper_overrides,
        }
    )
    factory = arena_factory(ArenaSpec(obstacle_count=0), seed=0)
    return DQNTrainer(NetworkSpec.from_dims((160, 8, 25)), hyper, factory, seed=0)


def test_dqn_mechanics() -> list[TestResult]:
    """Zero learning rate, target sync, divergence, curriculum and training logs."""
    import torch

    from .airgym import DivergenceError, EpisodeRecord, TrainingLog, ZoneCurriculum
    from .airgym.dqn import module_from_weights, weights_from_module
    from .quantnet import NetworkSpec, ShapeError, WeightSet

    results = []

    trainer = _tiny_trainer(learning_rate=0.0)
    before = weights_from_module(trainer.online)
    after, log = trainer.train()
    unchanged = all(
        np.array_equal(a, b) for a, b in zip(before.weights + before.biases, after.weights + after.biases)
    )
    results.append(TestResult(
        "dqn__zero_learning_rate_keeps_weights",
        unchanged,
        "Weights moved with learning_rate 0",
    ))

    trainer = _tiny_trainer(learning_rate=1e-3)
    trainer.train()
    online, target = trainer.online.state_dict(), trainer.target.state_dict()
    synced = all(torch.equal(online[k], target[k]) for k in online)
    results.append(TestResult(
        "dqn__target_synced_at_interval",
        synced and trainer.last_sync_step == 120,
        f"last_sync_step={trainer.last_sync_step}",
    ))

    trainer = _tiny_trainer(reward_scale=float("inf"), learning_starts=8, batch_size=4, replay_size=16)
    ok, msg = _raises(trainer.train, DivergenceError)
    results.append(TestResult("dqn__non_finite_loss_raises", ok, msg))

    curriculum = ZoneCurriculum(3, 0.5, 4)
    steps = [curriculum.record(True) for _ in range(4)]
    stays = [curriculum.record(False) for _ in range(4)]
    steps += [curriculum.record(True) for _ in range(8)]
    results.append(TestResult(
        "curriculum__advances_and_saturates",
        steps[3] and not any(stays) and curriculum.zone == 2 and sum(steps) == 2,
        f"zone={curriculum.zone}, advances={sum(steps)}",
    ))

    # Constant episode reward 3 makes the cumulative series a line of slope 3
    log = TrainingLog([EpisodeRecord(i, 3.0, 3.0 * (i + 1), 0.5, 0, i % 2 == 0) for i in range(10)])
    losing = TrainingLog([EpisodeRecord(i, -2.0, -2.0 * (i + 1), 0.5, 0, False) for i in range(10)])
    results.append(TestResult(
        "training_log__cumulative_reward_trend",
        abs(log.cumulative_reward_trend() - 3.0) < 1e-9
        and abs(losing.cumulative_reward_trend() + 2.0) < 1e-9
        and log.success_rate(4) == 0.5,
        f"trend={log.cumulative_reward_trend()}/{losing.cumulative_reward_trend()}, "
        f"success={log.success_rate(4)}",
    ))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "log.csv"
        log.write_csv(path)
        results.append(TestResult(
            "training_log__csv",
            TrainingLog.read_csv(path) == log,
            "CSV read-back differs",
        ))

    spec = NetworkSpec.from_dims((160, 8, 25))
    weights = WeightSet.random(spec, np.random.default_rng(0))
    back = weights_from_module(module_from_weights(spec, weights))
    results.append(TestResult(
        "dqn__module_conversion",
        all(
            np.array_equal(a, b.astype(np.float32).astype(np.float64))
            for a, b in zip(back.weights + back.biases, weights.weights + weights.biases)
        ),
        "Weights changed through the torch module",
    ))

    from .airgym import ArenaSpec, DQNHyper, DQNTrainer, arena_factory

    ok, msg = _raises(
        lambda: DQNTrainer(NetworkSpec.from_dims((10, 25)), DQNHyper(), arena_factory(ArenaSpec(), 0)),
        ShapeError,
    )
    results.append(TestResult("dqn__policy_shape_checked", ok, msg))

    from .airgym import AgentState
    from .airgym.dynamics import Outcome, StepResult

    trainer = _tiny_trainer(progress_shaping=10.0, gamma=0.5)
    before = AgentState(0.0, 0.0, 0.0, 0.0, 4.0, 0.0)
    moved = StepResult(AgentState(1.0, 0.0, 0.0, 2.0, 4.0, 0.0, 1), -6.5, False, Outcome.RUNNING)
    arrived = StepResult(AgentState(3.0, 0.0, 0.0, 3.0, 4.0, 0.0, 1), 999.0, True, Outcome.GOAL)
    # 10 * (4 - 0.5 * 3) and 10 * (4 - 0)
    bonuses = (trainer.progress_bonus(before, moved), trainer.progress_bonus(before, arrived))
    results.append(TestResult(
        "dqn__progress_shaping",
        bonuses == (25.0, 40.0) and _tiny_trainer(progress_shaping=0.0).progress_bonus(before, moved) == 0.0,
        f"Got {bonuses}",
    ))
    ok, msg = _raises(lambda: DQNHyper(progress_shaping=-1.0), ValueError)
    results.append(TestResult("dqn__negative_shaping_rejected", ok, msg))

    for double in (True, False):
        trainer = _tiny_trainer(learning_rate=1e-3, double_q=double)
        trainer.train()
        finite = all(bool(torch.isfinite(p).all()) for p in trainer.online.parameters())
        results.append(TestResult(f"dqn__trains_with_double_q_{str(double).lower()}", finite, "Non-finite weights"))

    return results


def test_dqn_learning_signal() -> list[TestResult]:
    """Slow: on a 10x10 m arena with 1-3 obstacles, 2 of 3 seeds learn to fly to the goal.

    A seed counts only if its cumulative reward trends upward and its greedy
    policy reaches the goal in at least 70 of 100 fresh episodes.
    """
    import time

    from .airgym import ArenaSpec, DQNHyper, dqn_train, evaluate
    from .airgym.evaluate import arena_factory
    from .quantnet import NetworkSpec

    results = []
    arena = ArenaSpec(width_m=10.0, height_m=10.0, obstacle_count=1)
    spec = NetworkSpec.from_dims((160, 64, 64, 25))
    hyper = DQNHyper(
        total_steps=150_000,
        replay_size=50_000,
        batch_size=64,
        learning_starts=2_000,
        target_sync_steps=1_000,
        learning_rate=5e-4,
        eps_decay_fraction=0.3,
        eps_end=0.02,
        progress_shaping=10.0,
        double_q=True,
        zones=3,
        zone_threshold=0.5,
    )
    started = time.monotonic()
    trends = []
    reports = []
    for seed in (1, 2, 3):
        weights, log = dqn_train(arena_factory(arena, seed, (1, 3)), spec, hyper, seed)
        trends.append(log.cumulative_reward_trend())
        reports.append(evaluate(weights, spec, arena, 100, seed + 100, (1, 3)))
    elapsed = time.monotonic() - started

    rates = [r.success_rate for r in reports]
    learned = sum(rate >= 0.7 and trend > 0 for rate, trend in zip(rates, trends))
    results.append(TestResult(
        "dqn_learning__two_of_three_seeds",
        learned >= 2,
        f"Cumulative trends {[round(t, 2) for t in trends]}, success {rates}, "
        f"collisions {[r.collisions for r in reports]}, timeouts {[r.timeouts for r in reports]}",
    ))
    results.append(TestResult(
        "dqn_learning__within_budget",
        elapsed < 30 * 60,
        f"Training and evaluation took {elapsed:.0f} s",
    ))

    return results


# =============================================================================
# config and pipeline
# =============================================================================


def test_pipeline_config() -> list[TestResult]:
    """Configuration parsing, key-path errors, overrides and hashing."""
    from .config import ConfigError, PipelineSpec

    results = []
    default = PipelineSpec()
    rebuilt = PipelineSpec.from_dict(default.to_dict())
    results.append(TestResult(
        "config__defaults_round_trip",
        rebuilt.digest() == default.digest(),
        "Digest changed through to_dict/from_dict",
    ))
    results.append(TestResult(
        "config__overrides",
        default.with_overrides(seed=5).seed == 5
        and default.with_overrides(seed=5).digest() != default.digest()
        and default.with_overrides(tolerance=1e-4).accelerator.tolerance == 1e-4,
        "Overrides not applied",
    ))

    base = {"schema_version": 1}
    cases = (
        ("unknown_top_level", {"bogus": 1}, "bogus"),
        ("unknown_arena_key", {"task": {"arena": {"foo": 1}}}, "task.arena.foo"),
        ("unknown_hyper_key", {"training": {"hyper": {"lr": 1}}}, "training.hyper.lr"),
        ("threshold_range", {"task": {"success_threshold": 1.5}}, "task.success_threshold"),
        ("obstacle_range", {"task": {"obstacle_range": [3, 1]}}, "task.obstacle_range"),
        ("drift_key", {"accelerator": {"drift_tolerance": {"16": 0.1}}}, "accelerator.drift_tolerance.16"),
        ("illegal_space", {"accelerator": {"space": {"pes": [3]}}}, "accelerator.space"),
        ("objective", {"objective": "fastest"}, "objective"),
        ("vehicle", {"target_vehicle_class": "jumbo"}, "target_vehicle_class"),
        ("duplicate_variants", {"training": {"variants": [{"name": "a", "hidden": [4]}] * 2}}, "training.variants"),
        ("missing_coefficients", {"accelerator": {"coefficients": "/nonexistent/c.json"}}, "accelerator.coefficients"),
        ("wrong_type", {"seed": "seven"}, "seed"),
    )
    for name, extra, key in cases:
        ok, msg = _raises(lambda extra=extra: PipelineSpec.from_dict({**base, **extra}), ConfigError)
        results.append(TestResult(f"config__{name}_raises", ok and msg.startswith(key), msg))

    ok, msg = _raises(lambda: PipelineSpec.from_dict({"schema_version": 2}), ConfigError)
    results.append(TestResult("config__schema_version_raises", ok, msg))

    with tempfile.TemporaryDirectory() as tmp:
        from .costmodel import CostCoefficients

        CostCoefficients.load().save(Path(tmp) / "c.json")
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text(json.dumps({"schema_version": 1, "accelerator": {"coefficients": "c.json"}}), encoding="utf-8")
        spec = PipelineSpec.load(cfg)
        results.append(TestResult(
            "config__relative_coefficients",
            spec.accelerator.coefficients == (Path(tmp) / "c.json").resolve(),
            f"Resolved to {spec.accelerator.coefficients}",
        ))
        ok, msg = _raises(lambda: PipelineSpec.load(Path(tmp) / "missing.json"), ConfigError)
        results.append(TestResult("config__missing_file_raises", ok, msg))

    return results


def test_policy_pruning() -> list[TestResult]:
    """Success-rate filter and policy selection."""
    from .config import ConfigError
    from .pipeline import NoSurvivorsError, filter_policies, prune, select_policy

    results = []
    rates = {"a": 0.91, "b": 0.40}
    report = filter_policies(rates, 0.8)
    results.append(TestResult(
        "filter__keeps_above_threshold",
        report.kept == ("a",) and report.pruned == ("b",),
        f"Kept {report.kept}",
    ))
    results.append(TestResult(
        "filter__zero_threshold_keeps_all",
        filter_policies(rates, 0.0).kept == ("a", "b"),
        "Threshold 0 should keep every policy",
    ))
    results.append(TestResult(
        "filter__threshold_inclusive",
        prune({"a": 0.8}, 0.8).kept == ("a",),
        "A rate equal to the threshold survives",
    ))
    ok, msg = _raises(lambda: filter_policies({"a": 0.91}, 0.95), NoSurvivorsError)
    results.append(TestResult("filter__no_survivors_raises", ok, msg))
    ok, msg = _raises(lambda: prune(rates, 1.5), ConfigError)
    results.append(TestResult("filter__threshold_range_raises", ok, msg))

    chosen = select_policy({"a": 0.9, "b": 0.9, "c": 0.5}, ["a", "b"], {"a": 100, "b": 50, "c": 10})
    results.append(TestResult(
        "select_policy__rate_then_size",
        chosen == "b",
        f"Chose {chosen}",
    ))

    return results


def test_training_plan() -> list[TestResult]:
    """Job naming, per-instance seeds and divergence isolation."""
    from .airgym import ArenaSpec, DQNHyper
    from .config import ConfigError, NetVariant, PipelineSpec, TrainingConfig
    from .pipeline import TrainJob, plan_training, stream_seed, train_policies

    results = []
    spec = PipelineSpec(
        training=TrainingConfig(variants=(NetVariant("a", (8,)), NetVariant("b", (4,))), instances=2),
    )
    jobs = plan_training(spec)
    results.append(TestResult(
        "plan_training__names",
        [j.name for j in jobs] == ["a-i0", "a-i1", "b-i0", "b-i1"],
        f"Names {[j.name for j in jobs]}",
    ))
    results.append(TestResult(
        "plan_training__distinct_seeds",
        len({j.seed for j in jobs}) == 4 and [j.seed for j in plan_training(spec)] == [j.seed for j in jobs],
        "Seeds must be distinct and reproducible",
    ))
    results.append(TestResult(
        "plan_training__only",
        [j.name for j in plan_training(spec, ["b"])] == ["b-i0", "b-i1"],
        "Variant selection failed",
    ))
    ok, msg = _raises(lambda: plan_training(spec, ["zzz"]), ConfigError)
    results.append(TestResult("plan_training__unknown_variant_raises", ok, msg))

    results.append(TestResult(
        "stream_seed__independent_streams",
        stream_seed(0, 1) == stream_seed(0, 1) and len({stream_seed(0, s) for s in range(4)}) == 4,
        "Streams collide or are not reproducible",
    ))

    hyper = DQNHyper(total_steps=40, replay_size=16, batch_size=4, learning_starts=8, reward_scale=float("inf"))
    job = TrainJob("bad", NetVariant("bad", (4,)), 0, hyper, ArenaSpec(obstacle_count=0), (0, 0))
    outcomes = train_policies([job], workers=1)
    results.append(TestResult(
        "train_policies__divergence_reported",
        len(outcomes) == 1 and not outcomes[0].succeeded and "loss" in (outcomes[0].error or ""),
        f"Outcome {outcomes[0].error!r}",
    ))

    return results


def test_quantization_fallback() -> list[TestResult]:
    """A precision that fails verification falls back to the next one."""
    from .dse import DesignSpace, VerificationFailedError
    from .pipeline import quantize_and_verify
    from .quantnet import NetworkSpec, WeightSet

    results = []
    spec = NetworkSpec.from_dims((160, 16, 25))
    rng = np.random.default_rng(12)
    weights = WeightSet.random(spec, rng)
    calibration = rng.uniform(-1.0, 1.0, size=(16, 160))
    verify = rng.uniform(-1.0, 1.0, size=(8, 160))

    outcome = quantize_and_verify(spec, weights, calibration, verify, DesignSpace(), 1e-3, {4: 1e-9, 8: 0.5})
    results.append(TestResult(
        "quantize_and_verify__falls_back_to_8bit",
        outcome.passed_bits == [8] and [a["status"] for a in outcome.attempts] == ["failed", "passed"],
        f"Attempts {outcome.attempts}",
    ))

    ok, msg = _raises(
        lambda: quantize_and_verify(spec, weights, calibration, verify, DesignSpace(), 1e-3, {4: 1e-9, 8: 1e-9}),
        VerificationFailedError,
    )
    results.append(TestResult("quantize_and_verify__all_fail_raises", ok, msg))

    return results


def _tiny_pipeline_config(**overrides) -> dict:
    config = {
        "schema_version": 1,
        "seed": 7,
        "task": {
            "arena": {"width_m": 10.0, "height_m": 10.0, "obstacle_count": 1},
            "obstacle_range": [0, 1],
            "success_threshold": 0.0,
            "eval_episodes": 2,
        },
        "training": {
            "variants": [{"name": "tiny", "hidden": [16]}],
            "hyper": {"total_steps": 60, "replay_size": 32, "batch_size": 8, "learning_starts": 16, "target_sync_steps": 20},
        },
        "accelerator": {
            "space": {"pes": [2, 4], "lanes": [4, 16], "precisions": [4, 8]},
            "drift_tolerance": {"4": 1.0, "8": 1.0},
            "calibration_samples": 8,
            "verify_samples": 4,
        },
    }
    config.update(overrides)
    return config


def _namespace(**kwargs) -> argparse.Namespace:
    values = {"config": None, "out": None, "seed": None, "jobs": 1, "tolerance": None}
    values.update(kwargs)
    return argparse.Namespace(**values)


def test_pipeline_run() -> list[TestResult]:
    """Full flow on a tiny configuration: artifacts, manifest and re-runs."""
    from .cli import cmd_pipeline
    from .config import PipelineSpec
    from .manifest import STAGE_OK, RunManifest
    from .pipeline import run_pipeline, spec_from_manifest
    from .weights import read_sidecar

    results = []
    spec = PipelineSpec.from_dict(_tiny_pipeline_config())

    with tempfile.TemporaryDirectory() as tmp:
        first = Path(tmp) / "first"
        result = run_pipeline(spec, first, jobs=1)
        manifest = RunManifest.load(first / "manifest.json")

        results.append(TestResult(
            "pipeline__completed_with_knee",
            result.has_knee and manifest.completed,
            f"Recommendation {result.recommendation}",
        ))
        stages = [(s.name, s.status) for s in manifest.stages]
        results.append(TestResult(
            "pipeline__stages_in_order",
            stages == [(n, STAGE_OK) for n in ("train", "evaluate", "filter", "quantize", "dse", "report")],
            f"Stages {stages}",
        ))
        expected = {
            "policies/tiny.fxw",
            "policies/tiny.fxw.json",
            "logs/tiny.csv",
            "evaluation.json",
            "pruning.json",
            "verification.json",
            "results.csv",
            "pareto_latency_power.svg",
            "pareto_latency_area.svg",
            "recommendation.json",
            "manifest.json",
        }
        listed = {a.path for a in manifest.artifacts}
        results.append(TestResult(
            "pipeline__manifest_lists_every_file",
            expected <= listed and manifest.unlisted_files(first) == [],
            f"Missing {sorted(expected - listed)}, unlisted {manifest.unlisted_files(first)}",
        ))
        results.append(TestResult(
            "pipeline__seeds_recorded",
            {"run", "train.tiny", "evaluate", "calibration", "verify"} <= set(manifest.seeds),
            f"Seeds {manifest.seeds}",
        ))
        quant = read_sidecar(first / "policies" / "tiny.fxw").get("quantization") or {}
        results.append(TestResult(
            "pipeline__selected_policy_quantized",
            quant.get("bits") in (4, 8),
            f"Sidecar quantization {quant}",
        ))
        results.append(TestResult(
            "pipeline__spec_from_manifest",
            spec_from_manifest(first / "manifest.json").digest() == spec.digest(),
            "Embedded config does not reproduce the run config",
        ))

        second = Path(tmp) / "second"
        with redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
            rc = cmd_pipeline(_namespace(out=str(second), from_manifest=str(first / "manifest.json")))
        same = all(
            (second / name).exists() and (first / name).read_bytes() == (second / name).read_bytes()
            for name in ("results.csv", "recommendation.json")
        )
        results.append(TestResult(
            "pipeline__rerun_from_manifest_identical",
            rc == 0 and same,
            f"rc={rc}; results differ between runs" if rc == 0 else f"rc={rc}",
        ))

    return results


def test_pipeline_failure() -> list[TestResult]:
    """A failing stage stops the flow and still leaves a manifest behind."""
    from . import pipeline
    from .airgym import EvaluationReport
    from .config import PipelineSpec
    from .manifest import STAGE_FAILED, RunManifest
    from .pipeline import StageError, run_pipeline

    results = []
    spec = PipelineSpec.from_dict(_tiny_pipeline_config(task={
        "arena": {"width_m": 10.0, "height_m": 10.0, "obstacle_count": 0},
        "obstacle_range": [0, 0],
        "success_threshold": 0.5,
        "eval_episodes": 2,
    }))

    original_evaluate_policies = pipeline.evaluate_policies
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp)
        try:
            pipeline.evaluate_policies = lambda spec, policies: {
                name: EvaluationReport(2, 0, 2, 0, -150.0, 3.0) for name in policies
            }
            error = None
            try:
                run_pipeline(spec, out, jobs=1)
            except StageError as e:
                error = e
        finally:
            pipeline.evaluate_policies = original_evaluate_policies

        results.append(TestResult(
            "pipeline_failure__stage_error",
            error is not None and error.stage == "filter",
            f"Got {error!r}",
        ))
        manifest = RunManifest.load(out / "manifest.json")
        results.append(TestResult(
            "pipeline_failure__manifest_written",
            not manifest.completed
            and manifest.stage_status("filter") == STAGE_FAILED
            and manifest.stage_status("quantize") is None
            and (out / "pruning.json").exists()
            and not (out / "results.csv").exists(),
            f"Stages {[(s.name, s.status) for s in manifest.stages]}",
        ))

    return results


# =============================================================================
# CLI
# =============================================================================


def _build_full_parser():
    """Build the full CLI parser wired with no-op handlers (for arg-parsing tests)."""
    from .parser import create_parser

    def noop(_args):  # pragma: no cover - never called in arg-parsing tests
        return 0

    return create_parser(
        cmd_train=noop,
        cmd_evaluate=noop,
        cmd_filter=noop,
        cmd_quantize=noop,
        cmd_simulate=noop,
        cmd_dse=noop,
        cmd_pipeline=noop,
        cmd_report=noop,
        cmd_self_test=noop,
    )


def _parse_fails(parser, argv) -> bool:
    try:
        with redirect_stderr(io.StringIO()):
            parser.parse_args(argv)
    except SystemExit:
        return True
    return False


def test_arg_parsing() -> list[TestResult]:
    """Subcommands parse their flags and reject bad values."""
    results = []
    parser = _build_full_parser()

    ns = parser.parse_args(["pipeline", "-c", "cfg.json", "-o", "out", "-j", "2", "--seed", "3"])
    results.append(TestResult(
        "arg_parsing__pipeline_common_flags",
        (ns.config, ns.out, ns.jobs, ns.seed, ns.from_manifest) == ("cfg.json", "out", 2, 3, None),
        f"Unexpected namespace: {ns!r}",
    ))

    ns = parser.parse_args(["dse", "--dims", "160,64,25", "--objective", "energy", "--vehicle", "nano"])
    results.append(TestResult(
        "arg_parsing__dse_dims",
        ns.dims == (160, 64, 25) and ns.weights is None and ns.objective == "energy" and ns.vehicle == "nano",
        f"Unexpected namespace: {ns!r}",
    ))

    ns = parser.parse_args(["train", "-v", "a", "-v", "b"])
    results.append(TestResult("arg_parsing__train_variants", ns.variant == ["a", "b"], f"Got {ns.variant!r}"))

    ns = parser.parse_args(["simulate", "-w", "p.fxw"])
    results.append(TestResult(
        "arg_parsing__simulate_defaults",
        (ns.pes, ns.lanes, ns.clock_mhz, ns.inputs, ns.json) == (8, 16, 300.0, 1, False),
        f"Unexpected namespace: {ns!r}",
    ))

    ns = parser.parse_args(["quantize", "-w", "p.fxw", "--bits", "4"])
    results.append(TestResult("arg_parsing__quantize_bits", ns.bits == 4, f"Got {ns.bits!r}"))

    ns = parser.parse_args(["self-test", "--slow", "-k", "dqn"])
    results.append(TestResult(
        "arg_parsing__self_test",
        ns.slow is True and ns.name_filter == "dqn",
        f"Unexpected namespace: {ns!r}",
    ))

    for name, argv in (
        ("dse_needs_source", ["dse"]),
        ("dse_exclusive_source", ["dse", "-w", "p.fxw", "--dims", "160,25"]),
        ("dse_bad_dims", ["dse", "--dims", "160"]),
        ("simulate_illegal_pes", ["simulate", "-w", "p.fxw", "--pes", "3"]),
        ("quantize_illegal_bits", ["quantize", "-w", "p.fxw", "--bits", "6"]),
        ("zero_jobs", ["train", "-j", "0"]),
        ("unknown_objective", ["dse", "--dims", "160,25", "--objective", "cheapest"]),
    ):
        results.append(TestResult(f"arg_parsing__rejects_{name}", _parse_fails(parser, argv), f"{argv} parsed"))

    return results


def test_cmd_filter() -> list[TestResult]:
    """`filter` writes pruning.json and exits 1 when nothing survives."""
    from .cli import cmd_filter
    from .log import get_log_file

    results = []
    with tempfile.TemporaryDirectory() as tmp:
        evaluation = Path(tmp) / "evaluation.json"
        evaluation.write_text(
            json.dumps({"policies": {"a": {"success_rate": 0.91}, "b": {"success_rate": 0.40}}}),
            encoding="utf-8",
        )

        buf = io.StringIO()
        with redirect_stdout(buf), redirect_stderr(io.StringIO()):
            rc = cmd_filter(_namespace(out=tmp, evaluation=None, threshold=0.8))
        pruning = json.loads((Path(tmp) / "pruning.json").read_text(encoding="utf-8"))
        results.append(TestResult(
            "cmd_filter__keeps_a",
            rc == 0 and pruning["kept"] == ["a"] and "keep   a" in buf.getvalue(),
            f"rc={rc}, pruning={pruning}",
        ))

        err = io.StringIO()
        with redirect_stdout(io.StringIO()), redirect_stderr(err):
            rc = cmd_filter(_namespace(out=tmp, evaluation=str(evaluation), threshold=0.95))
        results.append(TestResult(
            "cmd_filter__no_survivors_exit_one",
            rc == 1 and err.getvalue().startswith("Error:"),
            f"rc={rc}, stderr={err.getvalue()!r}",
        ))
        results.append(TestResult(
            "cmd_filter__error_points_at_log_file",
            f"Details: {get_log_file()}" in err.getvalue(),
            f"stderr={err.getvalue()!r}",
        ))

    return results


def test_cmd_hardware_flow() -> list[TestResult]:
    """`quantize`, `simulate`, `dse` and `report` on small networks."""
    from .cli import cmd_dse, cmd_quantize, cmd_report, cmd_simulate
    from .flexsim import AcceleratorConfig, auto_weight_buffer_kb, network_cycles
    from .quantnet import NetworkSpec, WeightSet
    from .report import RESULTS_COLUMNS, read_results_csv
    from .weights import read_sidecar, write_fxw

    results = []
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        cfg = root / "cfg.json"
        cfg.write_text(
            json.dumps({
                "schema_version": 1,
                "accelerator": {
                    "space": {"pes": [2, 8], "lanes": [16], "precisions": [8]},
                    "drift_tolerance": {"4": 1.0, "8": 1.0},
                    "calibration_samples": 8,
                    "verify_samples": 4,
                },
            }),
            encoding="utf-8",
        )

        spec = NetworkSpec.from_dims((160, 16, 25))
        policy = root / "policy.fxw"
        write_fxw(policy, spec, WeightSet.random(spec, np.random.default_rng(1)))

        buf = io.StringIO()
        with redirect_stdout(buf), redirect_stderr(io.StringIO()):
            rc = cmd_quantize(_namespace(config=str(cfg), weights=str(policy), bits=8, output=None))
        quantized = root / "policy.q8.fxw"
        results.append(TestResult(
            "cmd_quantize__writes_quantized_copy",
            rc == 0 and quantized.exists() and read_sidecar(quantized)["quantization"]["bits"] == 8,
            f"rc={rc}, output={buf.getvalue()!r}",
        ))

        trace = root / "trace.txt"
        buf = io.StringIO()
        with redirect_stdout(buf), redirect_stderr(io.StringIO()):
            rc = cmd_simulate(_namespace(
                weights=str(quantized), pes=4, lanes=16, weight_buffer_kb=None,
                clock_mhz=300.0, inputs=2, trace=str(trace), json=True,
            ))
        try:
            payload = json.loads(buf.getvalue())
        except json.JSONDecodeError:
            payload = {}
        config = AcceleratorConfig(4, 16, 8, auto_weight_buffer_kb(spec, 4, 8))
        runs = payload.get("runs", [])
        results.append(TestResult(
            "cmd_simulate__json_runs",
            rc == 0 and len(runs) == 2 and all(r["cycles"] == network_cycles(spec, config) for r in runs),
            f"rc={rc}, payload={payload!r}",
        ))
        results.append(TestResult(
            "cmd_simulate__trace_file",
            trace.exists() and all(len(line.split()) == 4 for line in trace.read_text(encoding="utf-8").splitlines()),
            "Trace missing or malformed",
        ))

        err = io.StringIO()
        with redirect_stdout(io.StringIO()), redirect_stderr(err):
            rc = cmd_simulate(_namespace(
                weights=str(policy), pes=4, lanes=16, weight_buffer_kb=None,
                clock_mhz=300.0, inputs=1, trace=None, json=False,
            ))
        results.append(TestResult(
            "cmd_simulate__needs_quantized_policy",
            rc == 1 and "quantize" in err.getvalue(),
            f"rc={rc}, stderr={err.getvalue()!r}",
        ))

        out = root / "dse"
        with redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
            rc = cmd_dse(_namespace(
                config=str(cfg), out=str(out), weights=None, dims=SMALL_DIMS, objective=None, vehicle=None,
            ))
        rows = read_results_csv(out / "results.csv") if (out / "results.csv").exists() else []
        results.append(TestResult(
            "cmd_dse__results_and_plots",
            rc == 0
            and [r["config_id"] for r in rows] == ["pe02-l16-b8", "pe08-l16-b8"]
            and (out / "pareto_latency_power.svg").exists()
            and (out / "recommendation.json").exists(),
            f"rc={rc}, rows={[r['config_id'] for r in rows]}",
        ))
        header = (out / "results.csv").read_text(encoding="utf-8").splitlines()[0] if rows else ""
        results.append(TestResult(
            "cmd_dse__column_order",
            header == ",".join(RESULTS_COLUMNS),
            f"Header {header!r}",
        ))

        buf = io.StringIO()
        with redirect_stdout(buf), redirect_stderr(io.StringIO()):
            rc = cmd_report(_namespace(out=str(out), results=None))
        results.append(TestResult(
            "cmd_report__summary",
            rc == 0 and buf.getvalue().startswith("config") and "pe0" in buf.getvalue(),
            f"rc={rc}, output={buf.getvalue()!r}",
        ))

    return results


def test_paths_and_logging() -> list[TestResult]:
    """State directory override, output resolution and stage-tagged log records."""
    from .log import LOG_FILENAME, get_log_file, get_stage_logger
    from .paths import STATE_DIR_ENV, get_state_dir, resolve_output_dir

    results = []
    original = os.environ.get(STATE_DIR_ENV)
    try:
        os.environ[STATE_DIR_ENV] = "/tmp/flexpilot-state"
        overridden = get_state_dir()
        log_file = get_log_file()
    finally:
        if original is None:
            os.environ.pop(STATE_DIR_ENV, None)
        else:
            os.environ[STATE_DIR_ENV] = original
    results.append(TestResult(
        "paths__state_dir_override",
        overridden == Path("/tmp/flexpilot-state"),
        f"Got {overridden}",
    ))
    results.append(TestResult(
        "log__file_follows_state_dir",
        log_file == Path("/tmp/flexpilot-state") / LOG_FILENAME,
        f"Got {log_file}",
    ))

    out = resolve_output_dir(None, "runs/a")
    results.append(TestResult(
        "paths__output_dir_fallback",
        out.is_absolute() and out.parts[-2:] == ("runs", "a"),
        f"Got {out}",
    ))
    results.append(TestResult(
        "paths__output_dir_flag_wins",
        resolve_output_dir("flag", "config").name == "flag",
        "--out should take precedence",
    ))

    _, kwargs = get_stage_logger("dse", "run1").process("msg", {})
    results.append(TestResult(
        "log__stage_and_run_tags",
        kwargs["extra"] == {"stage": "dse", "run": "run1"},
        f"Got {kwargs}",
    ))

    return results


# Checks that take minutes; run with `self-test --slow`
SLOW_TESTS = (test_terminal_exclusivity, test_dqn_learning_signal)

ALL_TESTS = (
    test_quantize_examples,
    test_requant_parameters,
    test_quantized_network,
    test_fc_reference_oracle,
    test_weight_files,
    test_accelerator_config,
    test_capacity_checks,
    test_event_cycles_match_closed_form,
    test_layer_examples,
    test_compute_monotonicity,
    test_partition_coverage,
    test_package_exports,
    test_config_invariance,
    test_policy_fidelity,
    test_command_channel,
    test_cost_coefficients,
    test_cost_model,
    test_cost_monotonicity,
    test_pareto_front,
    test_knee_selection,
    test_compact_policy_tradeoff,
    test_energy_tradeoff,
    test_run_dse,
    test_results_table,
    test_run_manifest,
    test_reward_function,
    test_step_dynamics,
    test_arena_generation,
    test_goal_uniformity,
    test_depth_sensor,
    test_policy_baselines,
    test_greedy_policy,
    test_dqn_mechanics,
    test_pipeline_config,
    test_policy_pruning,
    test_training_plan,
    test_quantization_fallback,
    test_pipeline_run,
    test_pipeline_failure,
    test_arg_parsing,
    test_cmd_filter,
    test_cmd_hardware_flow,
    test_paths_and_logging,
)


def run_all_tests(include_slow: bool = False, name_filter: str | None = None) -> tuple[list[TestResult], int, int]:
    """Run all tests and return (results, passed, failed)."""
    tests = ALL_TESTS + (SLOW_TESTS if include_slow else ())
    all_results: list[TestResult] = []
    for test in tests:
        if name_filter and name_filter not in test.__name__:
            continue
        try:
            all_results.extend(test())
        except Exception as e:  # noqa: BLE001 - a crashing test counts as one failure
            all_results.append(TestResult(test.__name__, False, f"raised {type(e).__name__}: {e}"))

    passed = sum(1 for r in all_results if r.passed)
    failed = len(all_results) - passed

    return all_results, passed, failed
