"""File formats and atomic output.

Binary field dump (little endian)::

    magic    4 bytes  b"HLAB"
    version  uint32   1
    dim      uint32   d
    lo       int64[d] lower box corner
    hi       int64[d] upper box corner (inclusive)
    values   float64[prod(hi - lo + 1)] row-major (C order)

CSV fields have one row per lattice point: ``x1,..,xd,value``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np

from .lattice import Box

MAGIC = b"HLAB"
VERSION = 1


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# -- binary ----------------------------------------------------------------------


def dump_field(box: Box, values: np.ndarray) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != box.shape:
        raise ValueError("values do not match the box")
    head = MAGIC + struct.pack("<II", VERSION, box.dim)
    corners = np.asarray(box.lo + box.hi, dtype="<i8").tobytes()
    return head + corners + values.tobytes()


def load_field(data: bytes) -> tuple[Box, np.ndarray]:
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError("not a field dump")
    version, d = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    corners = np.frombuffer(data, dtype="<i8", count=2 * d, offset=12)
    box = Box(tuple(corners[:d]), tuple(corners[d:]))
    n = box.size
    off = 12 + 16 * d
    if len(data) != off + 8 * n:
        raise FormatError("truncated field dump")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(box.shape).copy()
    return box, values


def write_field(path, box: Box, values: np.ndarray):
    atomic_write(path, dump_field(box, values))


def read_field(path) -> tuple[Box, np.ndarray]:
    return load_field(Path(path).read_bytes())


# -- CSV ---------------------------------------------------------------------------


def field_csv(box: Box, values: np.ndarray, name: str = "value", skip_zero: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(box.dim)] + [name])
    pts = box.points()
    flat = np.asarray(values, dtype=float).ravel()
    for p, v in zip(pts, flat):
        if skip_zero and v == 0:
            continue
        w.writerow([int(c) for c in p] + [repr(float(v))])
    return buf.getvalue()


def read_field_csv(path) -> tuple[Box, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    d = len(head) - 1
    pts = np.array([[int(c) for c in r[:d]] for r in body], dtype=np.int64).reshape(-1, d)
    vals = np.array([float(r[d]) for r in body])
    box = Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))
    out = np.zeros(box.shape)
    out[tuple((pts - np.asarray(box.lo)).T)] = vals
    return box, out


def rows_csv(rows: list[dict]) -> str:
    """Flat dict rows to CSV with the union of keys (sorted) as columns."""
    keys = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
    return buf.getvalue()


# -- manifest ----------------------------------------------------------------------


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__

    return {"heatlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def manifest(config: dict, artifacts: dict, wall_time: float, status: int) -> dict:
    """Run record: config hash, tool versions, artifact hashes and timing.

    Timestamps and wall time live here only, never in report bodies.
    """
    body = json.dumps(config, sort_keys=True).encode()
    return {"config_sha256": sha256_bytes(body), "config": config, "versions": versions(),
            "artifacts": {k: sha256_bytes(Path(v).read_bytes()) for k, v in sorted(artifacts.items())},
            "wall_time_s": round(wall_time, 3), "exit_status": status, "argv": sys.argv[1:]}


# -- adjoint export ----------------------------------------------------------------


def save_adjoint(path, M) -> tuple[Path, Path]:
    """M as CSV (coordinates, value) plus ``<path>.meta.json`` with its metadata."""
    from .report import _clean

    path = Path(path)
    meta = path.with_name(path.name + ".meta.json")
    atomic_write(path, field_csv(M.window, M.values, "M"))
    write_json(meta, _clean(M.metadata()))
    return path, meta


def load_adjoint(path):
    from .adjoint import AdjointSolution

    path = Path(path)
    box, values = read_field_csv(path)
    meta_path = path.with_name(path.name + ".meta.json")
    meta = read_json(meta_path) if meta_path.exists() else {}
    return AdjointSolution(box, values, int(meta.get("level", 0)), bool(meta.get("converged", True)),
                           float(meta.get("tol", 0.0)), float(meta.get("residual", float("nan"))),
                           list(meta.get("history", [])), int(meta.get("clamped", 0)),
                           bool(meta.get("extrapolated", False)), tuple(meta.get("center", ())),
                           tuple(meta.get("pole", ())))
