"""Run outputs: CSV datasets, theta snapshot files and the JSON run manifest.

Files are written as ``<name>.partial`` and renamed once complete, so a
crashed run leaves only visibly partial data behind.

Snapshot layout (little-endian):
    8 bytes   magic b"VCARLSNP"
    uint32    format version (1)
    uint32    number of snapshots S
    uint64    ensemble size N
    S times:  float64 t, then N float64 phases
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import platform
import struct
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"VCARLSNP"
SNAPSHOT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def csv_bytes(columns: dict) -> bytes:
    """Header plus rows, floats at 17 significant digits (round-trips exactly)."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    buf = io.StringIO()
    np.savetxt(buf, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")
    return buf.getvalue().encode()


def read_csv(path) -> dict:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


def snapshot_bytes(snapshots: dict) -> bytes:
    times = sorted(snapshots)
    n = len(snapshots[times[0]]) if times else 0
    parts = [SNAPSHOT_MAGIC, struct.pack("<IIQ", SNAPSHOT_VERSION, len(times), n)]
    for t in times:
        theta = np.asarray(snapshots[t], dtype="<f8")
        if theta.size != n:
            raise ValueError("all snapshots must have the same ensemble size")
        parts.append(struct.pack("<d", t))
        parts.append(theta.tobytes())
    return b"".join(parts)


def read_snapshots(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != SNAPSHOT_MAGIC:
        raise ValueError("not a snapshot file")
    version, count, n = struct.unpack_from("<IIQ", raw, 8)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    off = 8 + 16
    out = {}
    for _ in range(count):
        (t,) = struct.unpack_from("<d", raw, off)
        off += 8
        out[t] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
    return out


class RunDirectory:
    """Output directory with a manifest written before and after the data."""

    def __init__(self, out_dir, manifest: dict):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest
        self.manifest.setdefault("outputs", {})
        self.manifest["status"] = "running"
        self._flush()

    def _flush(self):
        path = self.root / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        os.replace(tmp, path)

    def write(self, name: str, payload: bytes):
        partial = self.root / (name + ".partial")
        partial.write_bytes(payload)
        final = self.root / name
        os.replace(partial, final)
        self.manifest["outputs"][name] = sha256_file(final)

    def write_csv(self, name: str, columns: dict):
        self.write(name, csv_bytes(columns))

    def finish(self, status: str = "complete", **extra):
        self.manifest["status"] = status
        self.manifest.update(extra)
        self._flush()


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def environment() -> dict:
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text())
