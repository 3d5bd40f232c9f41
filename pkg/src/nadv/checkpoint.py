"""Binary checkpoint container shared by models and datasets.

Layout, all integers little-endian:

    magic   b"NADV"
    version u32
    count   u32                       number of sections
    table   count entries of:
              name_len u16, name (UTF-8),
              dtype u8 (0 = float32, 1 = raw u8),
              ndim u8, dims u32 each,
              offset u64 (from file start), nbytes u64
    payloads (contiguous, in table order)
    hash    u64                       FNV-1a over everything before it

Every file carries a "meta" u8 section holding canonical JSON with at least
a "kind" key; the kind selects the decoder. Float payloads are stored as
32-bit, so save -> load -> save round-trips byte-identically.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Callable

import numpy as np

from .errors import (FormatError, HashMismatchError, TruncatedError,
                     VersionError)

MAGIC = b"NADV"
VERSION = 1
_DTYPE_F32 = 0
_DTYPE_U8 = 1

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


# kind -> (type, encode(obj) -> (meta dict, [(name, float array)]),
#          decode(meta, {name: array}) -> obj)
_CODECS: dict[str, tuple[type, Callable, Callable]] = {}
_REGISTRY_LOADED = False


def register(kind: str, type_: type, encode: Callable, decode: Callable) -> None:
    _CODECS[kind] = (type_, encode, decode)


def _ensure_registry() -> None:
    # Codecs live next to their types; importing the modules registers them.
    global _REGISTRY_LOADED
    if not _REGISTRY_LOADED:
        from . import classify, data, gan, inverter  # noqa: F401
        _REGISTRY_LOADED = True


def _pack_sections(sections: list[tuple[str, int, tuple[int, ...], bytes]]) -> bytes:
    header = MAGIC + struct.pack("<II", VERSION, len(sections))
    table_len = sum(2 + len(name.encode()) + 2 + 4 * len(dims) + 16
                    for name, _, dims, _ in sections)
    offset = len(header) + table_len
    table = b""
    payloads = b""
    for name, dtype, dims, payload in sections:
        nb = name.encode()
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<BB", dtype, len(dims))
        table += struct.pack(f"<{len(dims)}I", *dims)
        table += struct.pack("<QQ", offset, len(payload))
        payloads += payload
        offset += len(payload)
    body = header + table + payloads
    return body + struct.pack("<Q", fnv1a(body))


def serialize(obj) -> bytes:
    """Encode a registered object to checkpoint bytes."""
    _ensure_registry()
    for kind, (type_, encode, _) in _CODECS.items():
        if isinstance(obj, type_):
            meta, arrays = encode(obj)
            if meta.get("kind") != kind:
                raise FormatError(f"encoder for {kind} emitted bad meta")
            sections = [("meta",
                         _DTYPE_U8,
                         (),
                         json.dumps(meta, sort_keys=True,
                                    separators=(",", ":")).encode())]
            for name, arr in arrays:
                arr32 = np.ascontiguousarray(arr, dtype="<f4")
                sections.append((name, _DTYPE_F32, arr32.shape,
                                 arr32.tobytes()))
            return _pack_sections(sections)
    raise FormatError(f"no checkpoint codec for type {type(obj).__name__}")


def content_hash(obj) -> str:
    """Hex digest identifying the object's serialized content; stable
    across save/load cycles."""
    blob = serialize(obj)
    return f"{struct.unpack('<Q', blob[-8:])[0]:016x}"


def save_checkpoint(obj, path: str) -> None:
    with open(path, "wb") as f:
        f.write(serialize(obj))


def _need(buf: bytes, upto: int, what: str, path: str) -> None:
    if len(buf) < upto:
        raise TruncatedError(
            f"{path}: expected at least {upto} bytes for {what}, "
            f"file has {len(buf)}"
        )


def _parse(buf: bytes, path: str):
    _need(buf, 4, "magic", path)
    if buf[:4] != MAGIC:
        raise FormatError(
            f"{path}: bad magic {buf[:4]!r} at offset 0, expected {MAGIC!r}"
        )
    _need(buf, 12, "header", path)
    version, count = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise VersionError(
            f"{path}: file is version {version}, this build reads version "
            f"{VERSION}"
        )
    pos = 12
    entries = []
    for i in range(count):
        _need(buf, pos + 2, f"section {i} name length", path)
        name_len, = struct.unpack("<H", buf[pos:pos + 2])
        pos += 2
        _need(buf, pos + name_len + 2, f"section {i} descriptor", path)
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        dtype, ndim = struct.unpack("<BB", buf[pos:pos + 2])
        pos += 2
        _need(buf, pos + 4 * ndim + 16, f"section {name!r} table entry", path)
        dims = struct.unpack(f"<{ndim}I", buf[pos:pos + 4 * ndim])
        pos += 4 * ndim
        offset, nbytes = struct.unpack("<QQ", buf[pos:pos + 16])
        pos += 16
        if dtype not in (_DTYPE_F32, _DTYPE_U8):
            raise FormatError(f"{path}: section {name!r} has unknown dtype "
                              f"code {dtype}")
        entries.append((name, dtype, dims, offset, nbytes))
    for name, _, _, offset, nbytes in entries:
        _need(buf, offset + nbytes, f"section {name!r} payload", path)
    _need(buf, max((o + n for _, _, _, o, n in entries), default=pos) + 8,
          "trailing hash", path)
    stored, = struct.unpack("<Q", buf[-8:])
    computed = fnv1a(buf[:-8])
    if stored != computed:
        raise HashMismatchError(
            f"{path}: stored hash {stored:016x} != computed {computed:016x}"
        )
    meta = None
    arrays: dict[str, np.ndarray] = {}
    for name, dtype, dims, offset, nbytes in entries:
        payload = buf[offset:offset + nbytes]
        if dtype == _DTYPE_U8:
            if name == "meta":
                meta = json.loads(payload.decode())
            else:
                arrays[name] = np.frombuffer(payload, dtype=np.uint8)
        else:
            want = int(np.prod(dims, dtype=np.int64)) * 4 if dims else nbytes
            if want != nbytes:
                raise FormatError(
                    f"{path}: section {name!r} declares shape {dims} "
                    f"({want} bytes) but holds {nbytes}"
                )
            arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            arrays[name] = arr.reshape(dims)
    if meta is None or "kind" not in meta:
        raise FormatError(f"{path}: missing meta section with a kind")
    return meta, arrays


def load_checkpoint(path: str):
    """Read, verify, and decode a checkpoint file."""
    _ensure_registry()
    with open(path, "rb") as f:
        buf = f.read()
    meta, arrays = _parse(buf, path)
    kind = meta["kind"]
    if kind not in _CODECS:
        raise FormatError(f"{path}: unknown checkpoint kind {kind!r}")
    return _CODECS[kind][2](meta, arrays)


def peek_kind(path: str) -> str:
    """Kind string of a checkpoint without decoding the payload."""
    with open(path, "rb") as f:
        buf = f.read()
    meta, _ = _parse(buf, path)
    return meta["kind"]
