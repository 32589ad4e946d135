"""PCKP checkpoint files.

Layout (little-endian):

    magic   4 bytes  b"PCKP"
    version u32      (currently 1)
    meta    u32 length + UTF-8 `key=value` lines (architecture, roster, ...)
    count   u32
    record  x count: u16 name length, UTF-8 name, u8 rank, u32 dims[rank],
                     float32 payload
    crc32   u32 of everything before it

Optimizer moments and target statistics ride along as reserved names
(`__adam__/...`, `__stats__/...`); loaders that only need the model simply
skip them.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ChecksumMismatch, IncompatibleVersion, IoFailure, MalformedContainer

PCKP_MAGIC = b"PCKP"
PCKP_VERSION = 1

ADAM_PREFIX = "__adam__/"
STATS_PREFIX = "__stats__/"


def encode_meta(meta: dict[str, str]) -> bytes:
    lines = [f"{k}={v}" for k, v in sorted(meta.items())]
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def decode_meta(blob: bytes) -> dict[str, str]:
    meta: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        meta[key] = value
    return meta


def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict[str, str]) -> None:
    """Write named float32 arrays plus a key=value meta block."""
    parts = [PCKP_MAGIC, struct.pack("<I", PCKP_VERSION)]
    meta_blob = encode_meta(meta)
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name!r}")
        a = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b"")
        parts.append(a.tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < 16 or blob[:4] != PCKP_MAGIC:
        raise MalformedContainer(f"{path}: not a PCKP file")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatch(f"{path}: CRC mismatch")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != PCKP_VERSION:
        raise IncompatibleVersion(f"{path}: PCKP version {version}")
    (meta_len,) = struct.unpack("<I", blob[8:12])
    pos = 12
    meta = decode_meta(blob[pos : pos + meta_len])
    pos += meta_len
    (count,) = struct.unpack("<I", blob[pos : pos + 4])
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", blob[pos : pos + 2])
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rank = blob[pos]
        pos += 1
        dims = struct.unpack(f"<{rank}I", blob[pos : pos + 4 * rank]) if rank else ()
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arrays[name] = (
            np.frombuffer(blob[pos : pos + 4 * n], dtype="<f4").reshape(dims).copy()
        )
        pos += 4 * n
    if pos != len(blob) - 4:
        raise MalformedContainer(f"{path}: trailing bytes in container")
    return arrays, meta
