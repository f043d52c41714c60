"""Report, time-series and snapshot output.

CSV files are written together with a ``<name>.columns.json`` manifest
describing each column.  Binary snapshots are little-endian: an 8-byte
magic, a uint32 kind tag, then a kind-specific header and float64 payload.
"""

from __future__ import annotations

import csv
import json
import struct
import threading
from pathlib import Path

import numpy as np

from .fokker_planck import DensityField, Grid

MAGIC = b"WFLOWSNP"
KIND_DENSITY = 1
KIND_PARTICLES = 2

SERIES_COLUMNS = {
    "t": "time",
    "H": "relative entropy H(P_t|Q)",
    "I_sigma": "Fisher form weighted by Sigma",
    "I_G": "Fisher form weighted by A (Riemannian Fisher information)",
    "I_sigma_g_sigma": "Fisher form weighted by Sigma G Sigma (squared metric derivative)",
    "stderr": "standard error of H (0 for grid quadrature)",
}


def _write_manifest(path: Path, columns: dict) -> None:
    manifest = {"file": path.name, "columns": [{"name": k, "description": v} for k, v in columns.items()]}
    path.with_suffix(".columns.json").write_text(json.dumps(manifest, indent=2) + "\n")


def write_csv(path, columns: dict, rows) -> Path:
    """Write ``rows`` under the header ``columns`` (name -> description) plus a manifest."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    _write_manifest(path, columns)
    return path


def write_series_csv(path, series, stderr=None) -> Path:
    """Entropy and Fisher forms along a density path (a :class:`FlowSeries`)."""
    se = np.zeros(len(series.times)) if stderr is None else np.asarray(stderr)
    rows = (r + (float(s),) for r, s in zip(series.rows(), se))
    return write_csv(path, SERIES_COLUMNS, rows)


def write_particles_csv(path, times, history, particle_ids) -> Path:
    """Long-format particle table: one row per (time, particle)."""
    history = np.asarray(history)
    n = history.shape[2]
    columns = {"time": "time", "particle_id": "global particle index",
               **{f"x{d + 1}": f"coordinate {d + 1}" for d in range(n)}}

    def rows():
        for t, snap in zip(times, history):
            for pid, x in zip(particle_ids, snap):
                yield (float(t), int(pid), *map(float, x))
    return write_csv(path, columns, rows())


def write_density_csv(path, density: DensityField) -> Path:
    grid = density.grid
    n = grid.dimension
    columns = {**{f"x{d + 1}": f"node coordinate {d + 1}" for d in range(n)},
               "p": f"density at t={density.time!r}"}
    pts = grid.points
    vals = density.values.ravel()
    return write_csv(path, columns, (tuple(map(float, x)) + (float(v),) for x, v in zip(pts, vals)))


def write_distance_csv(path, fd_table: list[dict]) -> Path:
    """Finite-difference metric derivative table from an energy-identity report."""
    if not fd_table:
        raise ValueError("empty finite-difference table")
    hs = fd_table[0]["h"]
    columns = {"t": "time",
               **{f"W2G_fd_h={h:.6g}": f"W2,G(P_t+h, P_t)/h for h={h:.6g}" for h in hs},
               "extrapolated": "Richardson extrapolation of the two smallest h",
               "formula_value": "metric derivative from the Fisher form",
               "relative_gap": "|extrapolated - formula| / formula"}
    rows = ([row["t"], *row["ratios"], row["extrapolated"], row["formula"], row["relative_gap"]]
            for row in fd_table)
    return write_csv(path, columns, rows)


def write_snapshot(path, obj) -> Path:
    """Binary snapshot of a :class:`DensityField` or a particle ensemble."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        if isinstance(obj, DensityField):
            grid = obj.grid
            fh.write(struct.pack("<II", KIND_DENSITY, grid.dimension))
            fh.write(struct.pack("<d", obj.time))
            for a in grid.axes:
                fh.write(struct.pack("<Qdd", a.size, a[0], a[-1]))
            fh.write(np.ascontiguousarray(obj.values, dtype="<f8").tobytes())
        else:
            x = np.asarray(obj.positions, dtype="<f8")
            ids = np.asarray(obj.particle_ids, dtype="<i8")
            fh.write(struct.pack("<II", KIND_PARTICLES, x.shape[1]))
            fh.write(struct.pack("<d", obj.time))
            fh.write(struct.pack("<Q", x.shape[0]))
            fh.write(ids.tobytes())
            fh.write(np.ascontiguousarray(x).tobytes())
    return path


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`.

    Returns a :class:`DensityField` or a dict with ``time``,
    ``particle_ids`` and ``positions``.
    """
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    kind, n = struct.unpack_from("<II", data, 8)
    (t,) = struct.unpack_from("<d", data, 16)
    off = 24
    if kind == KIND_DENSITY:
        axes = []
        for _ in range(n):
            size, lo, hi = struct.unpack_from("<Qdd", data, off)
            off += 24
            axes.append(np.linspace(lo, hi, size))
        grid = Grid(tuple(axes))
        values = np.frombuffer(data, "<f8", count=int(np.prod(grid.shape)), offset=off).reshape(grid.shape)
        return DensityField(grid, values.copy(), t)
    if kind == KIND_PARTICLES:
        (N,) = struct.unpack_from("<Q", data, off)
        off += 8
        ids = np.frombuffer(data, "<i8", count=N, offset=off).copy()
        off += 8 * N
        x = np.frombuffer(data, "<f8", count=N * n, offset=off).reshape(N, n).copy()
        return {"time": t, "particle_ids": ids, "positions": x}
    raise ValueError(f"{path}: unknown snapshot kind {kind}")


class OutputWriter:
    """Serializes all file output of a run through one lock."""

    def __init__(self, directory, formats=("json", "csv", "binary"), enabled: bool = True):
        self.directory = Path(directory)
        self.formats = tuple(formats)
        self.enabled = enabled
        self.written: list[Path] = []
        self._lock = threading.Lock()
        if enabled:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _emit(self, fmt: str, name: str, fn, *args) -> Path | None:
        if not self.enabled or fmt not in self.formats:
            return None
        with self._lock:
            path = fn(self.directory / name, *args)
            self.written.append(path)
            return path

    def json(self, name: str, payload: dict) -> Path | None:
        def write(path, obj):
            path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
            return path
        return self._emit("json", name, write, payload)

    def report(self, report) -> Path | None:
        # Runtime is excluded so reruns give byte-identical files.
        return self.json(f"report_{report.name}.json", report.as_dict(include_runtime=False))

    def csv(self, name: str, fn, *args) -> Path | None:
        return self._emit("csv", name, fn, *args)

    def snapshot(self, name: str, obj) -> Path | None:
        return self._emit("binary", name, write_snapshot, obj)

    def text(self, name: str, content: str) -> Path | None:
        def write(path, s):
            path.write_text(s)
            return path
        if not self.enabled:
            return None
        with self._lock:
            path = write(self.directory / name, content)
            self.written.append(path)
            return path
