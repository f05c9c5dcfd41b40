"""Single-file checkpoint container.

Layout (little-endian)::

    magic  b"ENVVCKPT"
    u32    format version
    u32    header length, then that many bytes of UTF-8 JSON
    u32    block count
    per block:
        u16 name length, name (UTF-8)
        u8  dtype code, u8 ndim, ndim x u32 shape
        raw array bytes
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"ENVVCKPT"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "<i4", 4: "|u1"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    if np.dtype(arr.dtype.str) not in _CODES:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    return arr


def save(path, blocks: dict, header: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head, struct.pack("<I", len(blocks))]
    for name in sorted(blocks):
        arr = np.ascontiguousarray(_as_array(blocks[name]))
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[np.dtype(arr.dtype.str)], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def load(path) -> tuple[dict, dict]:
    """Return ``(header, blocks)`` with blocks as numpy arrays."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an envvc checkpoint")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    header = json.loads(data[off : off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        dtype = np.dtype(_DTYPES[code])
        size = int(np.prod(shape)) * dtype.itemsize
        blocks[name] = np.frombuffer(data[off : off + size], dtype=dtype).reshape(shape).copy()
        off += size
    return header, blocks


def save_module(path, module: torch.nn.Module, header: dict, extra: dict | None = None) -> Path:
    blocks = {f"param/{k}": v for k, v in module.state_dict().items()}
    for k, v in (extra or {}).items():
        blocks[f"extra/{k}"] = v
    return save(path, blocks, header)


def load_module(path, module: torch.nn.Module) -> tuple[dict, dict]:
    header, blocks = load(path)
    state = {k[len("param/") :]: torch.from_numpy(v) for k, v in blocks.items() if k.startswith("param/")}
    module.load_state_dict(state)
    extra = {k[len("extra/") :]: v for k, v in blocks.items() if k.startswith("extra/")}
    return header, extra
