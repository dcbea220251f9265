"""Framed binary files shared by checkpoints and dataset containers.

Layout (all integers little-endian)::

    magic      4 bytes
    version    uint16
    reserved   uint16 (zero)
    hlen       uint32  length of the header
    header     hlen bytes of UTF-8 JSON (sorted keys, compact)
    blobs      raw array bytes, in the order listed under header["blobs"]
    crc32      uint32 over every preceding byte

Each header blob record carries ``name``, ``dtype`` (numpy dtype string,
always little-endian), ``shape``, ``nbytes`` and its own ``crc32``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import SeqrepIOError, VersionMismatchError

_PREFIX = struct.Struct("<4sHHI")
_CRC = struct.Struct("<I")


def encode_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def pack(magic: bytes, version: int, header: dict, blobs) -> bytes:
    """Serialize ``header`` plus ``blobs`` (a sequence of ``(name, array)``)."""
    records, chunks = [], []
    for name, arr in blobs:
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        records.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "nbytes": len(raw), "crc32": zlib.crc32(raw)})
        chunks.append(raw)
    hdr = encode_json(dict(header, blobs=records))
    body = _PREFIX.pack(magic, version, 0, len(hdr)) + hdr + b"".join(chunks)
    return body + _CRC.pack(zlib.crc32(body))


def unpack(data: bytes, magic: bytes, version: int, corrupt_error):
    """Inverse of :func:`pack`; returns ``(header, {name: array})``."""
    if len(data) < _PREFIX.size + _CRC.size:
        raise corrupt_error("file is truncated")
    got_magic, got_version, _, hlen = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise corrupt_error(f"bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise VersionMismatchError(f"format version {got_version}, this build reads version {version}")
    (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(data[:-_CRC.size]) != crc:
        raise corrupt_error("checksum mismatch (file truncated or modified)")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise corrupt_error(f"unreadable header: {exc}") from exc
    offset = start + hlen
    end = len(data) - _CRC.size
    arrays = {}
    for rec in header.get("blobs", []):
        n = rec["nbytes"]
        raw = data[offset:offset + n]
        if offset + n > end or zlib.crc32(raw) != rec["crc32"]:
            raise corrupt_error(f"blob {rec['name']!r} is damaged")
        arrays[rec["name"]] = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
        offset += n
    if offset != end:
        raise corrupt_error("trailing bytes after last blob")
    return header, arrays


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.chmod(tmp, 0o644)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise SeqrepIOError(f"cannot write {path}: {exc}") from exc


def read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise SeqrepIOError(f"cannot read {path}: {exc}") from exc
