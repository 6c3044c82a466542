"""Binary checkpoint format shared by the GAN, the adapter and episode states.

Layout::

    FRIDA-CKPT v1 <component> tau=<tau>\\n
    u32 record count
    per record: u32 name length, name (utf-8), u32 rows, u32 cols,
                rows*cols little-endian float64
    32-byte SHA-256 of everything above

Non-tensor metadata travels as a ``__meta__`` record whose values are the
bytes of a JSON document, one byte per float.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
from pathlib import Path

import numpy as np

from frida.errors import CheckpointError

MAGIC = "FRIDA-CKPT"
VERSION = "v1"
META = "__meta__"
_HEADER = re.compile(rb"^FRIDA-CKPT (\S+) (\S+) tau=(\d+)\n")


def encode(component: str, tau: int, tensors: dict, meta: dict | None = None) -> bytes:
    records = dict(tensors)
    if meta is not None:
        blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        records = {META: np.frombuffer(blob, dtype=np.uint8).astype(np.float64).reshape(1, -1), **records}
    parts = [f"{MAGIC} {VERSION} {component} tau={tau}\n".encode(), struct.pack("<I", len(records))]
    for name, arr in records.items():
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise CheckpointError(f"tensor {name!r} is not 2-D")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<II", *a.shape))
        parts.append(a.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def decode(blob: bytes, component: str | None = None):
    """Returns ``(component, tau, tensors, meta)``."""
    if len(blob) < 32:
        raise CheckpointError("file truncated")
    body, digest = blob[:-32], blob[-32:]
    m = _HEADER.match(body)
    if m is None:
        raise CheckpointError("not a FRIDA checkpoint (bad header)")
    version, comp, tau = m.group(1).decode(), m.group(2).decode(), int(m.group(3))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: file is corrupted or truncated")
    if component is not None and comp != component:
        raise CheckpointError(f"expected a {component!r} checkpoint, found {comp!r}")
    pos = m.end()
    try:
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode()
            pos += nlen
            rows, cols = struct.unpack_from("<II", body, pos)
            pos += 8
            size = rows * cols * 8
            if pos + size > len(body):
                raise CheckpointError(f"tensor {name!r} truncated")
            tensors[name] = np.frombuffer(body, dtype="<f8", count=rows * cols, offset=pos) \
                .astype(np.float64).reshape(rows, cols)
            pos += size
    except struct.error as e:
        raise CheckpointError(f"malformed record table: {e}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after last record")
    meta = None
    if META in tensors:
        meta = json.loads(tensors.pop(META).astype(np.uint8).tobytes())
    return comp, tau, tensors, meta


def save(path, component, tau, tensors, meta=None) -> None:
    Path(path).write_bytes(encode(component, tau, tensors, meta))


def load(path, component=None):
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from None
    return decode(blob, component)
