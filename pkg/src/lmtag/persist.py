"""Binary model container: config blob + named float32 tensors + checksum.

Layout (all integers little-endian):

    magic     8 bytes  b"LMTAGBIN"
    version   u32      currently 1
    config    u64 length + UTF-8 JSON
    count     u32      number of tensors
    per tensor:
        name  u16 length + UTF-8 bytes
        ndim  u8, then u32 per extent
        data  float32 little-endian, row-major
    sha256 digest (32 bytes) of everything before it

Tensors are stored at float32; loading casts back to float64, so a
round-trip is bit-exact at the stored precision. A wrong magic, version or
digest is rejected.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"LMTAGBIN"
VERSION = 1


class ContainerError(ValueError):
    pass


def save_container(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<Q", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
        arr = np.asarray(tensors[name], dtype=np.float32)
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb))
        blob += nb
        blob += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<I", extent)
        blob += arr.astype("<f4").tobytes()
    blob += hashlib.sha256(bytes(blob)).digest()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise ContainerError(f"{path}: truncated container")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError(f"{path}: checksum mismatch (corrupt container)")
    off = 0
    if body[:8] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    off = 8
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    (cfg_len,) = struct.unpack_from("<Q", body, off)
    off += 8
    config = json.loads(body[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (extent,) = struct.unpack_from("<I", body, off)
            off += 4
            shape.append(extent)
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape)
        off += size * 4
        tensors[name] = arr.astype(np.float64)
    return config, tensors


def file_checksum(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def sentence_hash(words: list[str]) -> str:
    return hashlib.sha256("\x1f".join(words).encode("utf-8")).hexdigest()[:16]
