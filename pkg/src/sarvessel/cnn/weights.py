"""Versioned binary weight files.

Layout: ``b"SDW1"``, a 4-byte little-endian length, that many bytes of
UTF-8 JSON describing the architecture (and input normalisation), then
every layer's parameters as raw little-endian float32, weights before
biases, in layer order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import FormatError, MissingFileError, SceneIOError, ValidationError
from ..scene_io import atomic_write_bytes
from .layers import layer_from_dict
from .network import Network

MAGIC = b"SDW1"
FORMAT_VERSION = 1


def _descriptor(net: Network) -> dict:
    desc = {
        "version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "n_classes": net.n_classes,
        "layers": net.describe(),
        "input_norm": None,
    }
    if net.norm_mean is not None:
        desc["input_norm"] = {
            "transform": "log",
            "mean": [float(v) for v in net.norm_mean],
            "std": [float(v) for v in net.norm_std],
        }
    return desc


def weights_to_bytes(net: Network) -> bytes:
    header = json.dumps(_descriptor(net), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(header)), header]
    for p in net.flat_params():
        chunks.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_weights(net: Network, path) -> None:
    atomic_write_bytes(path, weights_to_bytes(net))


def weights_from_bytes(blob: bytes, source="<bytes>") -> Network:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{source}: not a weight file (bad magic {blob[:4]!r})")
    (n,) = struct.unpack("<I", blob[4:8])
    try:
        desc = json.loads(blob[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: corrupt architecture descriptor") from exc
    if not isinstance(desc, dict) or desc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported weight format version {desc.get('version') if isinstance(desc, dict) else None!r}")
    try:
        layers = [layer_from_dict(d) for d in desc["layers"]]
        input_shape = tuple(int(v) for v in desc["input_shape"])
        n_classes = int(desc.get("n_classes", 2))
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise FormatError(f"{source}: bad architecture descriptor ({exc})") from exc

    offset = 8 + n
    params = []
    for layer in layers:
        ps = []
        for shape in layer.param_shapes():
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(blob):
                raise FormatError(f"{source}: truncated parameter data")
            ps.append(np.frombuffer(blob[offset:end], dtype="<f4").astype(np.float32).reshape(shape))
            offset = end
        params.append(ps)
    if offset != len(blob):
        raise FormatError(f"{source}: {len(blob) - offset} trailing bytes after parameters")

    try:
        net = Network(layers, params, input_shape, n_classes)
    except ValidationError as exc:
        raise FormatError(f"{source}: {exc}") from exc
    norm = desc.get("input_norm")
    if norm:
        net.norm_mean = np.asarray(norm["mean"], dtype=np.float32)
        net.norm_std = np.asarray(norm["std"], dtype=np.float32)
    return net


def load_weights(path) -> Network:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError as exc:
        raise MissingFileError("weight file not found", path) from exc
    except OSError as exc:
        raise SceneIOError(f"cannot read weight file: {exc.strerror or exc}", path) from exc
    return weights_from_bytes(blob, source=path)
