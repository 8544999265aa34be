"""FXW1 weight files and their JSON sidecar.

Binary layout (little-endian):
    b"FXW1" | u32 layer_count | per layer: u32 in_dim, u32 out_dim,
    float32 weights (out x in, row-major), float32 biases (out)

The sidecar ``<file>.json`` carries activations and optional quantization scales.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .quantnet import LayerSpec, NetworkSpec, QuantizedNetwork, WeightSet

MAGIC = b"FXW1"
SIDECAR_SCHEMA_VERSION = 1

_HEADER = struct.Struct("<4sI")
_LAYER = struct.Struct("<II")


class WeightFileError(ValueError):
    """Malformed or inconsistent weight file."""


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_fxw(
    path: Path,
    spec: NetworkSpec,
    weights: WeightSet,
    quant: QuantizedNetwork | None = None,
    extra: dict | None = None,
) -> list[Path]:
    """Write weights and the sidecar; returns both paths.

    Weights are stored as float32, so reading back yields float32-rounded values.
    """
    weights.check(spec)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_HEADER.pack(MAGIC, len(spec.layers))]
    for layer, w, b in zip(spec.layers, weights.weights, weights.biases):
        chunks.append(_LAYER.pack(layer.in_dim, layer.out_dim))
        chunks.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))

    meta = {
        "format": "FXW1",
        "schema_version": SIDECAR_SCHEMA_VERSION,
        "activations": [layer.activation for layer in spec.layers],
        "quantization": quant.scales_dict() if quant is not None else None,
    }
    if extra:
        meta["extra"] = extra
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return [path, side]


def read_sidecar(path: Path) -> dict:
    side = sidecar_path(Path(path))
    if not side.exists():
        return {}
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise WeightFileError(f"{side}: invalid JSON ({e})") from e
    version = meta.get("schema_version")
    if version != SIDECAR_SCHEMA_VERSION:
        raise WeightFileError(f"{side}: unsupported schema_version {version!r}")
    return meta


def read_fxw(path: Path) -> tuple[NetworkSpec, WeightSet, dict]:
    """Read an FXW1 file; returns (spec, weights, sidecar metadata).

    Without a sidecar, hidden layers are relu and the last layer is identity.

    Raises:
        WeightFileError: Bad magic, truncated payload or trailing bytes
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise WeightFileError(f"{path}: too short for an FXW1 header")
    magic, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WeightFileError(f"{path}: bad magic {magic!r}")
    meta = read_sidecar(path)
    activations = meta.get("activations") or ["relu"] * (count - 1) + ["identity"]
    if len(activations) != count:
        raise WeightFileError(f"{path}: sidecar lists {len(activations)} activations for {count} layers")

    offset = _HEADER.size
    layers, ws, bs = [], [], []
    for i in range(count):
        if offset + _LAYER.size > len(data):
            raise WeightFileError(f"{path}: truncated at layer {i} header")
        in_dim, out_dim = _LAYER.unpack_from(data, offset)
        offset += _LAYER.size
        need = 4 * (in_dim * out_dim + out_dim)
        if offset + need > len(data):
            raise WeightFileError(f"{path}: truncated at layer {i} payload")
        w = np.frombuffer(data, dtype="<f4", count=in_dim * out_dim, offset=offset)
        offset += 4 * in_dim * out_dim
        b = np.frombuffer(data, dtype="<f4", count=out_dim, offset=offset)
        offset += 4 * out_dim
        layers.append(LayerSpec(in_dim, out_dim, activations[i]))
        ws.append(w.reshape(out_dim, in_dim).astype(np.float64))
        bs.append(b.astype(np.float64))
    if offset != len(data):
        raise WeightFileError(f"{path}: {len(data) - offset} trailing bytes")
    return NetworkSpec(tuple(layers)), WeightSet(tuple(ws), tuple(bs)), meta
