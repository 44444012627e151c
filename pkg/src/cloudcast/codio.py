"""Data model and bit-exact file I/O for COD rasters and flow fields.

CODG format: LF-terminated ASCII header followed by raw little-endian
float64 payload, row-major with y varying slowest (row 0 = southernmost
latitude). Header lines:

    CODG 1
    kind scalar|flow
    nx <int>
    ny <int>
    timestamp <t>            (scalar; minutes)  /  timestamp <t_prev> <t_cur>  (flow)
    frame <r> <lon_min> <lat_min> <dlon> <dlat>
    units <tag>
    end

One payload plane for scalar grids, two (u then v) for flows. NaN encodes
missing/outlier pixels; downstream code treats NaN as masked.

A payload shorter than declared is reported as IOError (truncation); a
longer one as DimensionError (inconsistent header).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, ShapeMismatch
from .geo import GeoFrame

MAGIC = "CODG"
VERSION = 1

UNITS_COD = "cod"
UNITS_PX = "px_frame"
UNITS_KMH = "km_h"


@dataclass
class ScalarGrid:
    """One COD image on a uniform lon-lat raster."""

    values: np.ndarray  # (ny, nx) float64, NaN = missing
    timestamp: int  # minutes since epoch
    frame: GeoFrame

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeMismatch("values must be 2-D (ny, nx)")
        if self.values.shape != (self.frame.ny, self.frame.nx):
            raise ShapeMismatch(
                f"values {self.values.shape} vs frame {(self.frame.ny, self.frame.nx)}"
            )
        finite = self.values[np.isfinite(self.values)]
        if finite.size and finite.min() < 0:
            raise ValueError("optical depths must be nonnegative")

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def ny(self):
        return self.values.shape[0]

    def copy_with(self, values=None, timestamp=None):
        return ScalarGrid(
            values=self.values.copy() if values is None else values,
            timestamp=self.timestamp if timestamp is None else timestamp,
            frame=self.frame,
        )


@dataclass
class FlowField:
    """One optical-flow snapshot mapping the frame at t_prev onto t_cur."""

    u: np.ndarray  # (ny, nx)
    v: np.ndarray
    units: str  # UNITS_PX or UNITS_KMH
    t_prev: int  # minutes
    t_cur: int
    frame: GeoFrame

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeMismatch("u and v must share a 2-D shape")
        if self.u.shape != (self.frame.ny, self.frame.nx):
            raise ShapeMismatch(
                f"flow {self.u.shape} vs frame {(self.frame.ny, self.frame.nx)}"
            )
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow components must be finite")

    @property
    def nx(self):
        return self.u.shape[1]

    @property
    def ny(self):
        return self.u.shape[0]


def _frame_line(frame: GeoFrame):
    return (
        f"frame {frame.r!r} {frame.lon_min!r} {frame.lat_min!r} "
        f"{frame.dlon!r} {frame.dlat!r}"
    )


def _parse_header(fh):
    magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
    parts = magic.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise FormatError(f"not a CODG file (got {magic!r})")
    if parts[1] != str(VERSION):
        raise FormatError(f"unknown CODG version {parts[1]!r}")
    header = {}
    while True:
        raw = fh.readline()
        if not raw:
            raise FormatError("header ended without 'end'")
        line = raw.decode("ascii").rstrip("\n")
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        header[key] = rest
    for key in ("kind", "nx", "ny", "timestamp", "frame", "units"):
        if key not in header:
            raise FormatError(f"missing header line {key!r}")
    return header


def _read_payload(fh, count, planes):
    data = fh.read()
    expected = count * planes * 8
    if len(data) < expected:
        raise IOError(f"truncated payload: {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise DimensionError(
            f"payload has {len(data)} bytes but header declares {expected}"
        )
    return np.frombuffer(data, dtype="<f8")


def _header_frame(header, nx, ny):
    r, lon_min, lat_min, dlon, dlat = (float(tok) for tok in header["frame"].split())
    return GeoFrame.from_origin(r, lon_min, lat_min, dlon, dlat, nx, ny)


def write_grid(grid: ScalarGrid, path):
    with open(path, "wb") as fh:
        head = "\n".join(
            [
                f"{MAGIC} {VERSION}",
                "kind scalar",
                f"nx {grid.nx}",
                f"ny {grid.ny}",
                f"timestamp {grid.timestamp}",
                _frame_line(grid.frame),
                f"units {UNITS_COD}",
                "end",
            ]
        )
        fh.write(head.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(grid.values, dtype="<f8").tobytes())


def read_grid(path) -> ScalarGrid:
    with open(path, "rb") as fh:
        header = _parse_header(fh)
        if header["kind"] != "scalar":
            raise FormatError(f"expected kind scalar, got {header['kind']!r}")
        nx, ny = int(header["nx"]), int(header["ny"])
        if nx < 1 or ny < 1:
            raise DimensionError("nx, ny must be positive")
        payload = _read_payload(fh, nx * ny, planes=1)
    frame = _header_frame(header, nx, ny)
    return ScalarGrid(
        values=payload.reshape(ny, nx).copy(),
        timestamp=int(header["timestamp"]),
        frame=frame,
    )


def write_flow(flow: FlowField, path):
    with open(path, "wb") as fh:
        head = "\n".join(
            [
                f"{MAGIC} {VERSION}",
                "kind flow",
                f"nx {flow.nx}",
                f"ny {flow.ny}",
                f"timestamp {flow.t_prev} {flow.t_cur}",
                _frame_line(flow.frame),
                f"units {flow.units}",
                "end",
            ]
        )
        fh.write(head.encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(flow.u, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(flow.v, dtype="<f8").tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        header = _parse_header(fh)
        if header["kind"] != "flow":
            raise FormatError(f"expected kind flow, got {header['kind']!r}")
        nx, ny = int(header["nx"]), int(header["ny"])
        if nx < 1 or ny < 1:
            raise DimensionError("nx, ny must be positive")
        payload = _read_payload(fh, nx * ny, planes=2)
    frame = _header_frame(header, nx, ny)
    times = header["timestamp"].split()
    if len(times) != 2:
        raise FormatError("flow timestamp line needs two values")
    n = nx * ny
    return FlowField(
        u=payload[:n].reshape(ny, nx).copy(),
        v=payload[n:].reshape(ny, nx).copy(),
        units=header["units"],
        t_prev=int(times[0]),
        t_cur=int(times[1]),
        frame=frame,
    )


def import_csv(path, frame: GeoFrame | None = None, timestamp: int = 0) -> ScalarGrid:
    """Read a hand-made fixture: first line `nx,ny`, then ny comma-separated rows."""
    with open(path, "r", encoding="ascii") as fh:
        first = fh.readline().strip()
        try:
            nx, ny = (int(tok) for tok in first.split(","))
        except ValueError as exc:
            raise FormatError(f"bad CSV size line {first!r}") from exc
        rows = []
        for _ in range(ny):
            line = fh.readline()
            if not line:
                raise DimensionError(f"expected {ny} rows, file ended early")
            row = [float(tok) for tok in line.strip().split(",")]
            if len(row) != nx:
                raise DimensionError(f"row has {len(row)} values, expected {nx}")
            rows.append(row)
    if frame is None:
        frame = GeoFrame.from_origin(6371.0, 0.0, 0.0, 0.02, 0.02, nx, ny)
    return ScalarGrid(values=np.array(rows), timestamp=timestamp, frame=frame)
