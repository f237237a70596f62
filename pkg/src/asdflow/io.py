"""Trajectory and surface file formats.

* path CSV: header ``t,x_1,...,x_n``, one row per node;
* surface CSV (long format): ``s,t,x_1,...,x_n`` (generally one column per
  grid axis, named ``t_1..t_P`` when there are more than two);
* ASDF binary grid: magic ``b"ASDF"``, little-endian ``uint32`` header
  ``(M, N, n)``, then ``(M+1)(N+1)n`` little-endian doubles in row-major
  order ``values[i, k, j]``.

Floats are written with ``%.17g`` so that they round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"ASDF"
_HEADER = struct.Struct("<III")
FLOAT_FMT = "%.17g"


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def path_csv(times: np.ndarray, values: np.ndarray) -> str:
    values = np.asarray(values, dtype=float).reshape(len(times), -1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x_{j + 1}" for j in range(values.shape[1])])
    for t, row in zip(times, values):
        w.writerow([_fmt(t)] + [_fmt(v) for v in row])
    return buf.getvalue()


def write_path_csv(path: str | Path, times: np.ndarray, values: np.ndarray) -> None:
    Path(path).write_text(path_csv(times, values))


def read_path_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


def _axis_names(P: int) -> list[str]:
    if P == 1:
        return ["t"]
    if P == 2:
        return ["s", "t"]
    return [f"t_{j + 1}" for j in range(P)]


def surface_csv(axes: list[np.ndarray], values: np.ndarray) -> str:
    P = len(axes)
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_axis_names(P) + [f"x_{j + 1}" for j in range(n)])
    for idx in np.ndindex(*values.shape[:-1]):
        coords = [_fmt(axes[a][i]) for a, i in enumerate(idx)]
        w.writerow(coords + [_fmt(v) for v in values[idx]])
    return buf.getvalue()


def write_surface_csv(path: str | Path, axes: list[np.ndarray], values: np.ndarray) -> None:
    Path(path).write_text(surface_csv(axes, values))


def read_surface_csv(path: str | Path, P: int = 2) -> tuple[list[np.ndarray], np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    axes = [np.unique(data[:, a]) for a in range(P)]
    shape = tuple(len(ax) for ax in axes) + (data.shape[1] - P,)
    return axes, data[:, P:].reshape(shape)


def write_asdf(path: str | Path, values: np.ndarray) -> None:
    """Write a two-parameter surface ``values[M+1, N+1, n]`` in the ASDF binary format."""
    v = np.asarray(values, dtype="<f8")
    if v.ndim != 3:
        raise ValueError("ASDF grids hold a two-parameter surface of shape (M+1, N+1, n)")
    M, N, n = v.shape[0] - 1, v.shape[1] - 1, v.shape[2]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(M, N, n))
        fh.write(np.ascontiguousarray(v).tobytes(order="C"))


def read_asdf(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an ASDF grid (bad magic bytes)")
    M, N, n = _HEADER.unpack_from(raw, 4)
    body = raw[4 + _HEADER.size:]
    count = (M + 1) * (N + 1) * n
    if len(body) != 8 * count:
        raise ValueError(f"{path}: expected {count} doubles, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(M + 1, N + 1, n).copy()


def write_json(path: str | Path, text: str) -> None:
    Path(path).write_text(text if text.endswith("\n") else text + "\n")


def to_builtin(obj: Any) -> Any:
    """numpy scalars and arrays to plain Python, for JSON."""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    return obj
