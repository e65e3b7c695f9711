"""CSV round trip for fields on the grid (17 significant digits, row-major)."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .exceptions import MFCError
from .fokker_planck import ControlField, DensityField
from .hjb import MultiplierPath, ValueField
from .scenario import GridSpec

FMT = "{:.17g}"


class ArtifactError(MFCError):
    """A saved field is missing or unreadable."""


def _fmt(x):
    return FMT.format(float(x))


def write_node_field(path, values: np.ndarray, grid: GridSpec) -> None:
    """Header mode,t,s,value; rows ordered by (mode, k, m)."""
    n = values.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "t", "s", "value"])
        for i in range(n):
            for k, t in enumerate(grid.t):
                for m, s in enumerate(grid.s):
                    w.writerow([i, _fmt(t), _fmt(s), _fmt(values[i, k, m])])


def write_control(path, alpha: ControlField) -> None:
    grid = alpha.grid
    n = alpha.n_modes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from", "to", "t", "s", "value"])
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                for k, t in enumerate(grid.t):
                    for m, s in enumerate(grid.s):
                        w.writerow([i, j, _fmt(t), _fmt(s), _fmt(alpha.values[i, j, k, m])])


def write_multiplier(path, lam: MultiplierPath) -> None:
    grid = lam.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "t_start", "t_end", "density"])
        for i in range(lam.n_modes):
            for k in range(grid.nt):
                w.writerow([i, _fmt(grid.t[k]), _fmt(grid.t[k + 1]), _fmt(lam.density[i, k])])


def _read(path, header):
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0] != header:
        raise ArtifactError(f"{path}: expected header {','.join(header)}")
    try:
        return np.array(rows[1:], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ArtifactError(f"{path}: non-numeric data ({exc})") from exc


def _grid_from(t, s):
    tv, sv = np.unique(t), np.unique(s)
    if tv.size < 3 or sv.size < 3:
        raise ArtifactError("field has fewer than three time or space nodes")
    return GridSpec(tv.size - 1, sv.size - 1, float(tv[-1]))


def read_node_field(path, grid: GridSpec | None = None) -> tuple[np.ndarray, GridSpec]:
    a = _read(path, ["mode", "t", "s", "value"])
    grid = grid or _grid_from(a[:, 1], a[:, 2])
    n = int(a[:, 0].max()) + 1
    if a.shape[0] != n * (grid.nt + 1) * (grid.ns + 1):
        raise ArtifactError(f"{path}: row count does not match a {grid.nt}x{grid.ns} grid")
    return a[:, 3].reshape(n, grid.nt + 1, grid.ns + 1), grid


def read_value_field(path, grid=None) -> ValueField:
    v, grid = read_node_field(path, grid)
    return ValueField(v, grid)


def read_density(path, grid=None) -> DensityField:
    v, grid = read_node_field(path, grid)
    return DensityField(v, grid)


def read_control(path, n_modes: int, grid: GridSpec) -> ControlField:
    a = _read(path, ["from", "to", "t", "s", "value"])
    out = np.zeros((n_modes, n_modes) + grid.shape)
    per = (grid.nt + 1) * (grid.ns + 1)
    if a.shape[0] != n_modes * (n_modes - 1) * per:
        raise ArtifactError(f"{path}: row count does not match {n_modes} modes")
    for r, (i, j) in enumerate((i, j) for i in range(n_modes) for j in range(n_modes) if i != j):
        blk = a[r * per:(r + 1) * per]
        if not (np.all(blk[:, 0] == i) and np.all(blk[:, 1] == j)):
            raise ArtifactError(f"{path}: unexpected row order")
        out[i, j] = blk[:, 4].reshape(grid.shape)
    return ControlField(out, grid)


def read_multiplier(path, grid: GridSpec) -> MultiplierPath:
    a = _read(path, ["mode", "t_start", "t_end", "density"])
    if a.shape[0] == 0:
        raise ArtifactError(f"{path}: no rows")
    n = int(a[:, 0].max()) + 1
    if a.shape[0] != n * grid.nt:
        raise ArtifactError(f"{path}: row count does not match {grid.nt} cells")
    return MultiplierPath(a[:, 3].reshape(n, grid.nt), grid)
