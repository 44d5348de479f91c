"""Binary trajectory files and JSON sidecars.

Layout (little-endian)::

    b"ISALT1\\0"
    u32 version, u32 d, u32 m, u64 M, u64 N, f64 dt, u64 gap, u64 seed,
    u32 name length, UTF-8 name
    f64[M, N+1, d]  states, trajectory-major
    f64[M, N, m]    Brownian increments
"""

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .datagen import TrajectoryDataset
from .exceptions import DatasetFormatError

MAGIC = b"ISALT1\0"
VERSION = 1
_HEADER = struct.Struct("<IIIQQdQQI")


def _atomic_write(path, payload):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def header_dict(ds):
    return {"format": MAGIC[:-1].decode(), "version": VERSION, "d": ds.d, "m": ds.m,
            "M": ds.M, "N": ds.N, "dt": ds.dt, "gap": ds.gap, "delta": ds.delta,
            "seed": ds.seed, "system": ds.system_name}


def write_dataset(ds, path, sidecar=True):
    """Write ``ds`` to ``path`` (and ``path + '.json'`` mirroring the header)."""
    name = ds.system_name.encode("utf-8")
    head = MAGIC + _HEADER.pack(VERSION, ds.d, ds.m, ds.M, ds.N, ds.dt, ds.gap,
                                ds.seed, len(name)) + name
    payload = b"".join([head, ds.X.astype("<f8").tobytes(), ds.dB.astype("<f8").tobytes()])
    _atomic_write(path, payload)
    if sidecar:
        _atomic_write(str(path) + ".json",
                      (json.dumps(header_dict(ds), indent=2) + "\n").encode())
    return Path(path)


def read_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(MAGIC)] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes")
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    version, d, m, M, N, dt, gap, seed, nlen = _HEADER.unpack_from(raw, off)
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    off += _HEADER.size
    if len(raw) < off + nlen:
        raise DatasetFormatError(f"{path}: truncated header")
    try:
        name = raw[off:off + nlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid system name") from exc
    off += nlen
    nx = M * (N + 1) * d
    nb = M * N * m
    expected = off + 8 * (nx + nb)
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "trailing bytes in"
        raise DatasetFormatError(
            f"{path}: {kind} payload ({len(raw)} bytes, header implies {expected})")
    X = np.frombuffer(raw, dtype="<f8", count=nx, offset=off).reshape(M, N + 1, d)
    dB = np.frombuffer(raw, dtype="<f8", count=nb, offset=off + 8 * nx).reshape(M, N, m)
    try:
        return TrajectoryDataset(X.astype(float), dB.astype(float), dt, gap, name, seed)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
