"""ACKPT1 checkpoint files: a JSON manifest followed by named float32 tensors.

Layout (little endian)::

    b"ACKPT1"
    u32 manifest length, manifest bytes (UTF-8 JSON, sorted keys)
    u32 tensor count
    per tensor: u16 name length, name bytes, u8 ndim, ndim x u32 dims, float32 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"ACKPT1"


class CheckpointError(ValueError):
    pass


def encode(manifest: dict, tensors: dict[str, torch.Tensor | np.ndarray]) -> bytes:
    meta = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        # np.array keeps 0-d tensors 0-d (ascontiguousarray would promote them)
        arr = np.array(arr, dtype="<f4", order="C")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if raw[:6] != MAGIC:
        raise CheckpointError("not an ACKPT1 checkpoint")
    try:
        off = 6
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        manifest = json.loads(raw[off:off + n].decode("utf-8"))
        off += n
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + klen].decode("utf-8")
            off += klen
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if off != len(raw):
        raise CheckpointError("trailing bytes after last tensor")
    return manifest, tensors


def save(path, manifest: dict, tensors) -> None:
    Path(path).write_bytes(encode(manifest, tensors))


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_into(module: torch.nn.Module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    state = module.state_dict()
    missing = [k for k in state if prefix + k not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {missing[:5]}")
    new = {}
    for k, ref in state.items():
        arr = tensors[prefix + k]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"{prefix + k}: shape {arr.shape} != {tuple(ref.shape)}")
        new[k] = torch.from_numpy(arr.copy()).to(ref.dtype)
    module.load_state_dict(new)
