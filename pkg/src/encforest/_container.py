"""Versioned, deterministic section files: magic, version, then named blobs."""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import ValidationError

VERSION = 1


def pack(magic: bytes, sections: dict[str, bytes]) -> bytes:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    out = [magic, struct.pack("<HI", VERSION, len(sections))]
    for name, blob in sections.items():
        key = name.encode()
        out.append(struct.pack("<HQ", len(key), len(blob)))
        out += [key, blob]
    return b"".join(out)


def unpack(magic: bytes, buf: bytes) -> dict[str, bytes]:
    if buf[:4] != magic:
        raise ValidationError(f"expected a {magic.decode()} file")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported file version {version}")
    off = 10
    out = {}
    for _ in range(count):
        klen, blen = struct.unpack_from("<HQ", buf, off)
        off += 10
        name = buf[off : off + klen].decode()
        off += klen
        out[name] = bytes(buf[off : off + blen])
        off += blen
    if off != len(buf):
        raise ValidationError("trailing bytes in file")
    return out


def array_bytes(a: np.ndarray) -> bytes:
    f = io.BytesIO()
    np.save(f, np.ascontiguousarray(a), allow_pickle=False)
    return f.getvalue()


def bytes_array(b: bytes) -> np.ndarray:
    return np.load(io.BytesIO(b), allow_pickle=False)


def json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def bytes_json(b: bytes):
    return json.loads(b.decode())
