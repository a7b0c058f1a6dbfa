"""Output writers: legacy-VTK ASCII snapshots and CSV tables."""
from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .mesh import SimplexMesh

__all__ = ["write_vtk", "read_vtk_header", "write_csv", "write_json_atomic", "PARCEL_HEADER"]

PARCEL_HEADER = ("id", "x", "y", "u", "v", "T_p", "d", "N_p", "alive")
VTK_TRIANGLE = 5


def _fmt(v):
    return repr(float(v))


def write_vtk(path, mesh: SimplexMesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "barelycoupled snapshot") -> None:
    """Write an UNSTRUCTURED_GRID in the legacy ASCII format.

    ``point_data`` / ``cell_data`` map names to arrays of shape (N,) for
    scalars or (N, 2) for vectors (padded with a zero z component).
    """
    lines = ["# vtk DataFile Version 2.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in mesh.node_coords]
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {ne}")
    lines += [str(VTK_TRIANGLE)] * ne

    def block(kind, count, data):
        if not data:
            return
        lines.append(f"{kind} {count}")
        for name, values in data.items():
            values = np.asarray(values, dtype=float)
            if values.shape[0] != count:
                raise ValueError(f"{kind} field {name!r} has {values.shape[0]} entries, expected {count}")
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in values)
            elif values.ndim == 2 and values.shape[1] == 2:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{_fmt(u)} {_fmt(v)} 0.0" for u, v in values)
            else:
                raise ValueError(f"field {name!r} must be scalar or 2-vector, got shape {values.shape}")

    block("POINT_DATA", mesh.n_nodes, point_data)
    block("CELL_DATA", ne, cell_data)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_header(path, n_lines: int = 5) -> list[str]:
    with open(path) as fh:
        return [fh.readline().rstrip("\n") for _ in range(n_lines)]


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (int, np.integer, str)) else _fmt(v) for v in row])


def write_json_atomic(path, payload) -> None:
    """Write JSON through a temporary file and rename, so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
