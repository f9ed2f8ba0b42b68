"""MFNN checkpoint files.

Layout (little-endian): ``b"MFNN"``, ``uint16`` version, 32-byte SHA-256
architecture digest, ``uint32`` JSON length and the architecture JSON, then
``uint32`` tensor count and for every tensor, in layer order (``W`` before
``b``): ``uint32`` ndim, ``ndim`` x ``uint32`` dims and float32 data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .arch import ArchSpec
from .model import NetworkParams

MAGIC = b"MFNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: NetworkParams, path) -> None:
    arch_json = json.dumps(params.arch.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), params.arch.digest(), struct.pack("<I", len(arch_json)), arch_json]
    flat = params.flat()
    parts.append(struct.pack("<I", len(flat)))
    for _, _, a in flat:
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path, arch: ArchSpec | None = None, dtype=np.float32) -> NetworkParams:
    """Read a checkpoint; refuses it when ``arch`` is given and its digest differs."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    digest = data[6:38]
    (jlen,) = struct.unpack_from("<I", data, 38)
    stored = ArchSpec.from_dict(json.loads(data[42 : 42 + jlen]))
    if stored.digest() != digest:
        raise CheckpointError(f"{path}: architecture digest does not match its own description")
    if arch is not None and arch.digest() != digest:
        raise CheckpointError(f"{path}: checkpoint architecture differs from the requested one")
    arch = stored
    off = 42 + jlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    template = _template(arch)
    if count != len(template):
        raise CheckpointError(f"{path}: expected {len(template)} tensors, found {count}")
    tensors = [dict() for _ in arch.layers]
    for n, key, shape in template:
        (ndim,) = struct.unpack_from("<I", data, off)
        dims = struct.unpack_from(f"<{ndim}I", data, off + 4)
        off += 4 + 4 * ndim
        if tuple(dims) != shape:
            raise CheckpointError(f"{path}: tensor {n}.{key} has shape {dims}, expected {shape}")
        size = int(np.prod(dims)) * 4
        if off + size > len(data):
            raise CheckpointError(f"{path}: truncated at byte {off}")
        tensors[n][key] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=off).reshape(dims).astype(dtype)
        off += size
    return NetworkParams(arch, tensors)


def _template(arch: ArchSpec):
    from .model import init_params

    return [(n, k, a.shape) for n, k, a in init_params(arch, 0, np.float32).flat()]
