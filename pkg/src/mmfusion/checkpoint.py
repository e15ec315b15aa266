"""Bit-exact parameter serialization.

Layout: a directory with ``manifest.json`` mapping parameter name to
{shape, dtype, offset, length} and ``weights.bin`` holding the little-endian
raw buffers concatenated in manifest order.
"""

from __future__ import annotations

import json
import os

import numpy as np

_LE = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(IOError):
    pass


def save_checkpoint(named_params, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {}
    offset = 0
    chunks = []
    for name, p in named_params:
        arr = np.ascontiguousarray(p.data.astype(_LE[str(p.data.dtype)]))
        raw = arr.tobytes()
        manifest[name] = {
            "shape": list(arr.shape),
            "dtype": str(p.data.dtype),
            "offset": offset,
            "length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    with open(os.path.join(out_dir, "weights.bin"), "wb") as fh:
        for raw in chunks:
            fh.write(raw)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(ckpt_dir):
    """Read a checkpoint directory back into {name: ndarray}."""
    try:
        with open(os.path.join(ckpt_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        with open(os.path.join(ckpt_dir, "weights.bin"), "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"unreadable checkpoint at {ckpt_dir}: {exc}") from exc

    out = {}
    for name, meta in manifest.items():
        start, length = meta["offset"], meta["length"]
        if start + length > len(blob):
            raise CheckpointError(
                f"weights.bin truncated: '{name}' needs bytes [{start}, {start + length}) "
                f"but file has {len(blob)}")
        arr = np.frombuffer(blob, dtype=_LE[meta["dtype"]], count=length // np.dtype(_LE[meta["dtype"]]).itemsize, offset=start)
        expect = int(np.prod(meta["shape"])) if meta["shape"] else 1
        if arr.size != expect:
            raise CheckpointError(
                f"corrupt manifest entry '{name}' at offset {start}: "
                f"{arr.size} values != shape {meta['shape']}")
        out[name] = arr.reshape(meta["shape"]).astype(meta["dtype"])
    return out


def load_into(module, ckpt_dir):
    """Assign checkpoint arrays onto a module's parameters, validating shapes."""
    weights = load_checkpoint(ckpt_dir)
    for name, p in module.named_parameters():
        if name not in weights:
            raise CheckpointError(f"checkpoint missing parameter '{name}'")
        arr = weights[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise CheckpointError(
                f"parameter '{name}': checkpoint shape {arr.shape} != model {p.shape}")
        p.data = arr
    return module
