"""Output writers: legacy structured-points field files, CSV tables, flat binary arrays.

Floats are written with ``repr`` so a text round trip is exact.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..errors import PolyshellError

OUTPUT_ROOT_ENV = "POLYSHELL_OUTPUT_ROOT"
BINARY_MAGIC = "polyshell-array 1"


class OutputError(PolyshellError):
    """File could not be written or read; message carries the path."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "polyshell_output"))


def _nums(a) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(a))


def _open(path, mode):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode)
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# structured-points fields
# ---------------------------------------------------------------------------


def write_fields(path, dims, spacing, origin, point_data: dict | None = None, cell_data: dict | None = None,
                 title: str = "polyshell fields"):
    """Write scalar (n,), vector (n, 3) and tensor (n, 3, 3) fields.

    Point arrays have ``prod(dims)`` records in x-fastest order; cell arrays
    have ``prod(max(dims - 1, 1))`` records.  Without data only the header
    is written.
    """
    dims = tuple(int(d) for d in dims) + (1,) * (3 - len(dims))
    spacing = tuple(float(s) for s in spacing) + (1.0,) * (3 - len(spacing))
    origin = tuple(float(s) for s in origin) + (0.0,) * (3 - len(origin))
    npts = int(np.prod(dims))
    ncell = int(np.prod([max(d - 1, 1) for d in dims]))
    with _open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(title.replace("\n", " ")[:255] + "\n")
        f.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        f.write("DIMENSIONS {} {} {}\n".format(*dims))
        f.write("SPACING {} {} {}\n".format(*map(repr, spacing)))
        f.write("ORIGIN {} {} {}\n".format(*map(repr, origin)))
        for tag, data, n in (("POINT_DATA", point_data, npts), ("CELL_DATA", cell_data, ncell)):
            if not data:
                continue
            f.write(f"{tag} {n}\n")
            for name, arr in data.items():
                a = np.asarray(arr, dtype=float)
                if a.shape[0] != n:
                    raise OutputError(f"{path}: field {name!r} has {a.shape[0]} records, expected {n}")
                if a.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n{_nums(a[:, None])}\n")
                elif a.shape[1:] == (3,):
                    f.write(f"VECTORS {name} double\n{_nums(a)}\n")
                elif a.shape[1:] == (3, 3):
                    f.write(f"TENSORS {name} double\n{_nums(a.reshape(-1, 3))}\n")
                else:
                    raise OutputError(f"{path}: field {name!r} has unsupported shape {a.shape}")


def read_fields(path) -> dict:
    """Read a file produced by :func:`write_fields`."""
    try:
        tokens = Path(path).read_text().split("\n")
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    out = {"dims": None, "spacing": None, "origin": None, "point_data": {}, "cell_data": {}}
    i = 4
    target = None
    n = 0
    while i < len(tokens):
        line = tokens[i].strip()
        i += 1
        if not line:
            continue
        head, *rest = line.split()
        if head == "DIMENSIONS":
            out["dims"] = tuple(int(v) for v in rest)
        elif head in ("SPACING", "ORIGIN"):
            out[head.lower()] = tuple(float(v) for v in rest)
        elif head in ("POINT_DATA", "CELL_DATA"):
            target = out[head.lower()]
            n = int(rest[0])
        elif head in ("SCALARS", "VECTORS", "TENSORS"):
            name = rest[0]
            if head == "SCALARS":
                i += 1  # lookup table line
            rows = 3 * n if head == "TENSORS" else n
            vals = np.array([[float(v) for v in tokens[i + r].split()] for r in range(rows)])
            i += rows
            if head == "SCALARS":
                vals = vals[:, 0]
            elif head == "TENSORS":
                vals = vals.reshape(n, 3, 3)
            target[name] = vals
        else:
            raise OutputError(f"{path}: unexpected line {line!r}")
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_csv(path, header: list[str], rows, schema_line: str | None = None):
    with _open(path, "w") as f:
        if schema_line:
            f.write(schema_line + "\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float rows, skipping ``#`` lines."""
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
    return header, data


# ---------------------------------------------------------------------------
# flat binary with a text header
# ---------------------------------------------------------------------------


def write_binary(path, array: np.ndarray, header: dict | None = None):
    """Little-endian float64 array after ``key=value`` header lines ending in ``END``."""
    a = np.ascontiguousarray(array, dtype="<f8")
    meta = {"shape": "x".join(str(s) for s in a.shape) or "scalar"}
    meta.update({k: v for k, v in (header or {}).items()})
    lines = [BINARY_MAGIC] + [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in meta.items()]
    with _open(path, "wb") as f:
        f.write(("\n".join(lines) + "\nEND\n").encode())
        f.write(a.tobytes())


def read_binary(path) -> tuple[np.ndarray, dict]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OutputError(f"{path}: {exc}") from exc
    end = raw.find(b"\nEND\n")
    if not raw.startswith(BINARY_MAGIC.encode()) or end < 0:
        raise OutputError(f"{path}: not a polyshell binary array")
    header = {}
    for line in raw[:end].decode().splitlines()[1:]:
        k, v = line.split("=", 1)
        header[k] = v
    shape = () if header["shape"] == "scalar" else tuple(int(s) for s in header["shape"].split("x"))
    data = np.frombuffer(raw[end + 5:], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise OutputError(f"{path}: payload has {data.size} values, header says {shape}")
    return data.reshape(shape).copy(), header
