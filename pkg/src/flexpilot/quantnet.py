"""Fully-connected policy networks and their symmetric n-bit integer form.

Two reference semantics live here:

- ``fc_forward_fp``: the floating-point forward pass with a fixed summation
  order (ascending input index, bias added last).
- ``quantized_forward``: the integer semantics the accelerator must reproduce
  bit-for-bit (saturating 32-bit accumulation, multiplier/shift requantization,
  clip, then activation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Reference policy: 160 sensor features -> 3 hidden layers -> 25 actions
POLICY_DIMS = (160, 4096, 2048, 512, 25)

ACTIVATIONS = ("relu", "identity")
SUPPORTED_BITS = (4, 8)

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1

# Above this shift every int32 accumulator requantizes to zero
MAX_USEFUL_SHIFT = 62


class QuantnetError(ValueError):
    """Base class for network / quantization errors."""


class InvalidInputError(QuantnetError):
    """Empty, non-finite or out-of-domain numeric input."""


class ShapeError(QuantnetError):
    """Layer dimensions do not chain or do not match the data."""


class RequantOverflowError(QuantnetError):
    """Requantization ratio too large for a non-negative shift."""


def qmax_for(bits: int) -> int:
    """Largest code magnitude for a symmetric signed n-bit format."""
    if bits not in SUPPORTED_BITS:
        raise InvalidInputError(f"unsupported precision {bits} bits (expected one of {SUPPORTED_BITS})")
    return 2 ** (bits - 1) - 1


def round_half_away(values: np.ndarray | float) -> np.ndarray:
    """Round to nearest, ties away from zero."""
    arr = np.asarray(values, dtype=np.float64)
    return np.sign(arr) * np.floor(np.abs(arr) + 0.5)


# =============================================================================
# Network description
# =============================================================================


@dataclass(frozen=True)
class LayerSpec:
    """One fully-connected layer."""

    in_dim: int
    out_dim: int
    activation: str = "relu"


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered chain of fully-connected layers."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ShapeError("network has no layers")
        for i, layer in enumerate(self.layers):
            if layer.in_dim < 1 or layer.out_dim < 1:
                raise ShapeError(f"layer {i}: dimensions must be >= 1, got {layer.in_dim}x{layer.out_dim}")
            if layer.activation not in ACTIVATIONS:
                raise ShapeError(f"layer {i}: unknown activation {layer.activation!r}")
            if i > 0 and self.layers[i - 1].out_dim != layer.in_dim:
                raise ShapeError(
                    f"layer {i}: in_dim {layer.in_dim} does not match previous out_dim "
                    f"{self.layers[i - 1].out_dim}"
                )

    @classmethod
    def from_dims(cls, dims: Sequence[int], output_activation: str = "identity") -> NetworkSpec:
        """Build a relu-hidden chain from a dimension list like (160, 64, 25)."""
        dims = [int(d) for d in dims]
        if len(dims) < 2:
            raise ShapeError(f"need at least input and output dims, got {dims}")
        layers = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            layers.append(LayerSpec(dims[i], dims[i + 1], output_activation if last else "relu"))
        return cls(tuple(layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(layer.out_dim for layer in self.layers)

    @property
    def weight_count(self) -> int:
        return sum(layer.in_dim * layer.out_dim for layer in self.layers)

    def weight_bytes(self, bits: int) -> int:
        """Packed weight storage for the whole network at the given precision."""
        return sum(math.ceil(layer.in_dim * layer.out_dim * bits / 8) for layer in self.layers)

    def to_dict(self) -> dict:
        return {"layers": [[l.in_dim, l.out_dim, l.activation] for l in self.layers]}

    @classmethod
    def from_dict(cls, data: dict) -> NetworkSpec:
        try:
            return cls(tuple(LayerSpec(int(i), int(o), str(a)) for i, o, a in data["layers"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ShapeError(f"malformed network description: {e}") from e


@dataclass(frozen=True)
class WeightSet:
    """Real-valued weights (out x in) and biases per layer, as float64."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))

    def check(self, spec: NetworkSpec) -> None:
        """Raise ShapeError / InvalidInputError unless the set fits ``spec``."""
        if len(self.weights) != len(spec.layers) or len(self.biases) != len(spec.layers):
            raise ShapeError(
                f"weight set has {len(self.weights)} layers, network has {len(spec.layers)}"
            )
        for i, (layer, w, b) in enumerate(zip(spec.layers, self.weights, self.biases)):
            if w.shape != (layer.out_dim, layer.in_dim):
                raise ShapeError(f"layer {i}: weight shape {w.shape} != {(layer.out_dim, layer.in_dim)}")
            if b.shape != (layer.out_dim,):
                raise ShapeError(f"layer {i}: bias shape {b.shape} != {(layer.out_dim,)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidInputError(f"layer {i}: non-finite weights")

    @classmethod
    def random(
        cls,
        spec: NetworkSpec,
        rng: np.random.Generator,
        low: float = -1.0,
        high: float = 1.0,
        bias: bool = True,
    ) -> WeightSet:
        """Uniform random weights, used for exploration and tests."""
        weights = tuple(rng.uniform(low, high, size=(l.out_dim, l.in_dim)) for l in spec.layers)
        if bias:
            biases = tuple(rng.uniform(low, high, size=l.out_dim) for l in spec.layers)
        else:
            biases = tuple(np.zeros(l.out_dim) for l in spec.layers)
        return cls(weights, biases)


# =============================================================================
# Floating-point reference
# =============================================================================


def _activate(values: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(values, 0)
    return values


def _as_batch(x: np.ndarray | Sequence[float], in_dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr.reshape(1, -1) if single else arr
    if batch.ndim != 2 or batch.shape[1] != in_dim:
        raise ShapeError(f"input shape {arr.shape} does not match input_dim {in_dim}")
    return batch, single


def _dense_ordered(weights: np.ndarray, bias: np.ndarray, batch: np.ndarray) -> np.ndarray:
    # acc accumulates W[:, j] * x[j] for j ascending, bias last
    acc = np.zeros((batch.shape[0], weights.shape[0]), dtype=np.float64)
    for j in range(weights.shape[1]):
        acc += batch[:, j : j + 1] * weights[:, j]
    return acc + bias


def fc_forward_trace(spec: NetworkSpec, w: WeightSet, x: np.ndarray) -> list[np.ndarray]:
    """Post-activation outputs of every layer for a batch (rows are samples)."""
    w.check(spec)
    batch, _ = _as_batch(x, spec.input_dim)
    outputs = []
    h = batch
    for layer, weights, bias in zip(spec.layers, w.weights, w.biases):
        h = _activate(_dense_ordered(weights, bias, h), layer.activation)
        outputs.append(h)
    return outputs


def fc_forward_fp(spec: NetworkSpec, w: WeightSet, x: np.ndarray | Sequence[float]) -> np.ndarray:
    """Floating-point reference forward pass.

    Accepts a single vector or a batch (rows are samples) and returns the same
    rank. Summation order is fixed, so results are reproducible bit-for-bit.
    """
    single = np.asarray(x).ndim == 1
    out = fc_forward_trace(spec, w, x)[-1]
    return out[0] if single else out


# =============================================================================
# Quantization primitives
# =============================================================================


@dataclass(frozen=True)
class QuantizedTensor:
    """Integer codes plus the real value of one code step."""

    values: np.ndarray  # int64 codes in [-qmax, qmax]
    scale: float
    bits: int = 8

    def __post_init__(self) -> None:
        qmax = qmax_for(self.bits)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidInputError(f"scale must be positive and finite, got {self.scale}")
        values = np.asarray(self.values, dtype=np.int64)
        if values.size and (values.max() > qmax or values.min() < -qmax):
            raise InvalidInputError(f"codes outside [-{qmax}, {qmax}]")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class RequantParams:
    """Integer rescale: multiply by ``multiplier`` then shift right by ``shift``."""

    multiplier: int
    shift: int

    @property
    def ratio(self) -> float:
        """Real ratio represented by these parameters (exact in float64)."""
        return math.ldexp(self.multiplier, -self.shift)


def quantize_with_scale(tensor: np.ndarray | Sequence[float], scale: float, bits: int = 8) -> QuantizedTensor:
    """Quantize at a known scale; values beyond the range clip to +/-qmax."""
    qmax = qmax_for(bits)
    arr = np.asarray(tensor, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("non-finite values cannot be quantized")
    codes = np.clip(round_half_away(arr / scale), -qmax, qmax)
    return QuantizedTensor(codes.astype(np.int64), float(scale), bits)


def quantize(tensor: np.ndarray | Sequence[float], bits: int = 8) -> QuantizedTensor:
    """Symmetric per-tensor quantization with scale = max|x| / qmax.

    An all-zero tensor gets scale 1 and all-zero codes.

    Raises:
        InvalidInputError: Empty or non-finite input, or unsupported precision
    """
    qmax = qmax_for(bits)
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("non-finite values cannot be quantized")
    amax = float(np.max(np.abs(arr)))
    if amax == 0.0:
        return QuantizedTensor(np.zeros(arr.shape, dtype=np.int64), 1.0, bits)
    # x * qmax / amax keeps exact ties (0.5 * 127 = 63.5) that x / scale would lose
    codes = np.clip(round_half_away(arr * qmax / amax), -qmax, qmax)
    return QuantizedTensor(codes.astype(np.int64), amax / qmax, bits)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    return q.values.astype(np.float64) * q.scale


def derive_requant(s_in: float, s_w: float, s_out: float) -> RequantParams:
    """Multiplier/shift pair approximating ``s_in * s_w / s_out``.

    The multiplier is a 31-bit normalized mantissa in [2^30, 2^31), so the
    relative error of the represented ratio is at most 2^-31.

    Raises:
        InvalidInputError: A scale is not positive and finite
        RequantOverflowError: Ratio of 2^31 or more (would need a negative shift)
    """
    for name, s in (("s_in", s_in), ("s_w", s_w), ("s_out", s_out)):
        if not (math.isfinite(s) and s > 0):
            raise InvalidInputError(f"{name} must be positive and finite, got {s}")
    ratio = s_in * s_w / s_out
    if not (math.isfinite(ratio) and ratio > 0):
        raise InvalidInputError(f"requantization ratio {ratio} is not representable")
    mantissa, exponent = math.frexp(ratio)  # ratio = mantissa * 2**exponent, mantissa in [0.5, 1)
    multiplier = math.floor(math.ldexp(mantissa, 31) + 0.5)
    shift = 31 - exponent
    if multiplier == 2**31:
        multiplier //= 2
        shift -= 1
    if shift < 0:
        raise RequantOverflowError(f"ratio {ratio:.6g} needs a negative shift")
    return RequantParams(multiplier, shift)


def saturate_int32(acc: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(acc, dtype=np.int64), INT32_MIN, INT32_MAX)


def requantize(acc: np.ndarray, params: RequantParams, bits: int) -> np.ndarray:
    """Rescale int32 accumulators to n-bit codes (round half away, then clip)."""
    qmax = qmax_for(bits)
    acc = saturate_int32(acc)
    if params.shift > MAX_USEFUL_SHIFT:
        return np.zeros(acc.shape, dtype=np.int64)
    prod = acc * np.int64(params.multiplier)  # |prod| < 2^62
    rounding = np.int64(1 << (params.shift - 1)) if params.shift > 0 else np.int64(0)
    magnitude = (np.abs(prod) + rounding) >> np.int64(params.shift)
    return np.clip(np.sign(prod) * magnitude, -qmax, qmax)


def requantize_scalar(acc: int, params: RequantParams, qmax: int) -> int:
    """Python-int twin of ``requantize`` for one accumulator."""
    acc = min(max(acc, INT32_MIN), INT32_MAX)
    if params.shift > MAX_USEFUL_SHIFT:
        return 0
    prod = acc * params.multiplier
    rounding = (1 << (params.shift - 1)) if params.shift > 0 else 0
    magnitude = (abs(prod) + rounding) >> params.shift
    value = magnitude if prod >= 0 else -magnitude
    return min(max(value, -qmax), qmax)


# =============================================================================
# Quantized network
# =============================================================================


@dataclass(frozen=True)
class QuantizedLayer:
    weights: QuantizedTensor  # (out, in) codes
    bias_codes: np.ndarray  # int64 in int32 range, at scale s_in * s_w
    requant: RequantParams
    input_scale: float
    output_scale: float
    activation: str


@dataclass(frozen=True)
class QuantizedNetwork:
    """A network in the integer form the accelerator executes."""

    spec: NetworkSpec
    bits: int
    input_scale: float
    layers: tuple[QuantizedLayer, ...] = field(default_factory=tuple)

    @property
    def qmax(self) -> int:
        return qmax_for(self.bits)

    @property
    def output_scale(self) -> float:
        return self.layers[-1].output_scale

    @property
    def weight_bytes(self) -> int:
        return self.spec.weight_bytes(self.bits)

    def quantize_input(self, x: np.ndarray | Sequence[float]) -> QuantizedTensor:
        return quantize_with_scale(x, self.input_scale, self.bits)

    def dequantize_output(self, codes: np.ndarray) -> np.ndarray:
        return np.asarray(codes, dtype=np.float64) * self.output_scale

    def scales_dict(self) -> dict:
        """Scales and requant parameters, as stored in weight-file sidecars."""
        return {
            "bits": self.bits,
            "input_scale": self.input_scale,
            "layers": [
                {
                    "weight_scale": layer.weights.scale,
                    "output_scale": layer.output_scale,
                    "multiplier": layer.requant.multiplier,
                    "shift": layer.requant.shift,
                }
                for layer in self.layers
            ],
        }


def _calibrated_scale(values: np.ndarray, bits: int) -> float:
    amax = float(np.max(np.abs(values))) if values.size else 0.0
    return amax / qmax_for(bits) if amax > 0 else 1.0


def _build_layers(
    spec: NetworkSpec,
    w: WeightSet,
    bits: int,
    activation_scales: Sequence[float],
    input_scale: float,
) -> tuple[QuantizedLayer, ...]:
    layers = []
    s_in = input_scale
    for layer, weights, bias, s_out in zip(spec.layers, w.weights, w.biases, activation_scales):
        wq = quantize(weights, bits)
        bias_codes = saturate_int32(round_half_away(bias / (s_in * wq.scale)))
        layers.append(
            QuantizedLayer(
                weights=wq,
                bias_codes=bias_codes,
                requant=derive_requant(s_in, wq.scale, s_out),
                input_scale=s_in,
                output_scale=s_out,
                activation=layer.activation,
            )
        )
        s_in = s_out
    return tuple(layers)


def quantize_network(
    spec: NetworkSpec,
    w: WeightSet,
    calibration_inputs: np.ndarray | Sequence[Sequence[float]],
    bits: int = 8,
) -> QuantizedNetwork:
    """Quantize weights per tensor and calibrate activation scales.

    Each activation scale is the max-abs value seen on the floating-point
    forward pass over the calibration set (1 when that max is zero).

    Raises:
        InvalidInputError: Empty calibration set or non-finite data
        ShapeError: Calibration width or weight shapes do not match ``spec``
    """
    qmax_for(bits)
    calib = np.asarray(calibration_inputs, dtype=np.float64)
    if calib.size == 0:
        raise InvalidInputError("calibration set is empty")
    calib = np.atleast_2d(calib)
    if not np.all(np.isfinite(calib)):
        raise InvalidInputError("calibration inputs contain non-finite values")
    outputs = fc_forward_trace(spec, w, calib)
    input_scale = _calibrated_scale(calib, bits)
    scales = [_calibrated_scale(h, bits) for h in outputs]
    return QuantizedNetwork(spec, bits, input_scale, _build_layers(spec, w, bits, scales, input_scale))


def rebuild_quantized(spec: NetworkSpec, w: WeightSet, scales: dict) -> QuantizedNetwork:
    """Reconstruct a QuantizedNetwork from float weights and stored scales."""
    try:
        bits = int(scales["bits"])
        input_scale = float(scales["input_scale"])
        output_scales = [float(entry["output_scale"]) for entry in scales["layers"]]
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"malformed quantization record: {e}") from e
    if len(output_scales) != len(spec.layers):
        raise ShapeError(f"quantization record has {len(output_scales)} layers, network has {len(spec.layers)}")
    w.check(spec)
    return QuantizedNetwork(spec, bits, input_scale, _build_layers(spec, w, bits, output_scales, input_scale))


def quantized_forward(qnet: QuantizedNetwork, codes: np.ndarray) -> np.ndarray:
    """Integer golden semantics; input and output are n-bit codes.

    Accepts one code vector or a batch (rows are samples).
    """
    h = np.asarray(codes, dtype=np.int64)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    if h.shape[1] != qnet.spec.input_dim:
        raise ShapeError(f"input width {h.shape[1]} != {qnet.spec.input_dim}")
    for layer in qnet.layers:
        acc = h @ layer.weights.values.T + layer.bias_codes
        h = _activate(requantize(acc, layer.requant, qnet.bits), layer.activation)
    return h[0] if single else h


def emulated_forward(qnet: QuantizedNetwork, x: np.ndarray | Sequence[float]) -> np.ndarray:
    """Run the quantized policy on the floating-point side.

    Integer-valued partial sums stay exact in float64, and the requant ratio is
    applied as a float multiply, so this tracks ``quantized_forward`` to the
    code except in far-out rounding ties. Returns dequantized outputs.
    """
    qmax = qmax_for(qnet.bits)
    single = np.asarray(x).ndim == 1
    batch, _ = _as_batch(x, qnet.spec.input_dim)
    h = qnet.quantize_input(batch).values.astype(np.float64)
    for layer in qnet.layers:
        acc = h @ layer.weights.values.T.astype(np.float64) + layer.bias_codes.astype(np.float64)
        acc = np.clip(acc, INT32_MIN, INT32_MAX)
        h = np.clip(round_half_away(acc * layer.requant.ratio), -qmax, qmax)
        h = _activate(h, layer.activation)
    out = h * qnet.output_scale
    return out[0] if single else out
