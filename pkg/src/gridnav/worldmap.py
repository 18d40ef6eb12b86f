"""Occupancy-grid world: map I/O, footprint collision tests and exact ray casting.

Coordinates follow the usual robotics convention: x to the right, y up,
heading 0 along +x and counter-clockwise positive. Cell ``(ix, iy)`` covers
``[origin_x + ix*res, origin_x + (ix+1)*res) x [origin_y + iy*res, ...)``;
``cells[iy, ix]`` therefore has row 0 at the *bottom* of the map, while the
PGM raster on disk stores the top row first.

Everything outside the raster counts as occupied, so the map is a closed
world and every ray eventually hits something.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
from scipy import ndimage

DEFAULT_RESOLUTION = 0.05
DEFAULT_OCCUPIED_BELOW = 128


class MapFormatError(ValueError):
    """Raised when a map raster or its ``.meta`` sidecar is malformed."""


def wrap_angle(a: float) -> float:
    """Normalize an angle into [-pi, pi)."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class RayHit:
    distance: float
    normal: tuple[float, float]


@dataclass(frozen=True, eq=False)
class GridMap:
    """Binary occupancy grid. ``cells`` is a read-only bool array, True = occupied."""

    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    name: str = field(default="map", compare=False)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise MapFormatError(f"cells: expected a non-empty 2D array, got shape {cells.shape}")
        if not self.resolution > 0:
            raise MapFormatError(f"resolution: must be > 0, got {self.resolution}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def empty(cls, width_m: float, height_m: float, resolution: float = DEFAULT_RESOLUTION, **kw) -> "GridMap":
        w = int(round(width_m / resolution))
        h = int(round(height_m / resolution))
        return cls(np.zeros((h, w), dtype=bool), resolution, **kw)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) in meters."""
        ox, oy = self.origin
        return (ox, ox + self.width * self.resolution, oy, oy + self.height * self.resolution)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height) * self.resolution

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.extent
        return xmin <= x < xmax and ymin <= y < ymax

    def is_occupied(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        if not (0 <= ix < self.width and 0 <= iy < self.height):
            return True
        return bool(self.cells[iy, ix])

    def with_cells(self, cells: np.ndarray) -> "GridMap":
        return GridMap(cells, self.resolution, self.origin, self.name)

    @cached_property
    def clearance(self) -> np.ndarray:
        """Distance (m) from each cell center to the nearest occupied cell or the map edge.

        Measured to the obstacle *surface*, i.e. half a cell less than the
        center-to-center distance; occupied cells hold 0.
        """
        padded = np.pad(~self.cells, 1, constant_values=False)
        edt = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
        out = np.maximum(edt - 0.5, 0.0) * self.resolution
        out[self.cells] = 0.0
        out.setflags(write=False)
        return out

    def clearance_at(self, x: float, y: float) -> float:
        """Bilinear interpolation of :attr:`clearance` at a world point."""
        return float(_bilinear(self.clearance, self, x, y))

    def clearance_gradient(self, x: float, y: float) -> tuple[float, float]:
        """Central-difference gradient of the clearance field (points away from walls)."""
        h = self.resolution * 0.5
        gx = (self.clearance_at(x + h, y) - self.clearance_at(x - h, y)) / (2 * h)
        gy = (self.clearance_at(x, y + h) - self.clearance_at(x, y - h)) / (2 * h)
        return gx, gy


def _bilinear(field_: np.ndarray, m: GridMap, x: float, y: float) -> float:
    fx = (x - m.origin[0]) / m.resolution - 0.5
    fy = (y - m.origin[1]) / m.resolution - 0.5
    ix = int(math.floor(fx))
    iy = int(math.floor(fy))
    tx = fx - ix
    ty = fy - iy

    def at(i, j):
        if 0 <= i < m.width and 0 <= j < m.height:
            return field_[j, i]
        return 0.0

    return (
        at(ix, iy) * (1 - tx) * (1 - ty)
        + at(ix + 1, iy) * tx * (1 - ty)
        + at(ix, iy + 1) * (1 - tx) * ty
        + at(ix + 1, iy + 1) * tx * ty
    )


# --------------------------------------------------------------------------
# File I/O


def _read_pgm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MapFormatError(f"header: truncated after {len(tokens)} fields")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte separates header and raster
    magic, w_s, h_s, maxval_s = tokens
    if magic != b"P5":
        raise MapFormatError(f"magic: expected P5, got {magic!r}")
    try:
        width, height, maxval = int(w_s), int(h_s), int(maxval_s)
    except ValueError as exc:
        raise MapFormatError(f"header: non-integer field ({exc})") from None
    if width <= 0:
        raise MapFormatError(f"width: must be >= 1, got {width}")
    if height <= 0:
        raise MapFormatError(f"height: must be >= 1, got {height}")
    if not 0 < maxval < 256:
        raise MapFormatError(f"maxval: only 8-bit rasters are supported, got {maxval}")
    raster = data[pos:]
    if len(raster) != width * height:
        raise MapFormatError(
            f"raster: dimension mismatch, header says {width}x{height}={width * height} bytes, found {len(raster)}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def read_meta(path: str | os.PathLike) -> dict[str, float]:
    meta = {"resolution": DEFAULT_RESOLUTION, "origin_x": 0.0, "origin_y": 0.0, "occupied_below": DEFAULT_OCCUPIED_BELOW}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in meta:
                raise MapFormatError(f"meta line {lineno}: expected '<key> <value>' with a known key, got {line!r}")
            try:
                meta[parts[0]] = float(parts[1])
            except ValueError:
                raise MapFormatError(f"{parts[0]}: not a number: {parts[1]!r}") from None
    if meta["resolution"] <= 0:
        raise MapFormatError(f"resolution: must be > 0, got {meta['resolution']}")
    if not 0 <= meta["occupied_below"] <= 256:
        raise MapFormatError(f"occupied_below: must be in 0..256, got {meta['occupied_below']}")
    return meta


def load_map(path: str | os.PathLike) -> GridMap:
    """Load a P5 graymap plus its ``<name>.meta`` sidecar.

    Pixels darker than ``occupied_below`` are occupied. Any "unknown" grey
    levels in SLAM exports therefore end up occupied unless they are light.
    """
    path = Path(path)
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise MapFormatError(f"meta: sidecar file {meta_path} not found")
    meta = read_meta(meta_path)
    raster = _read_pgm(path.read_bytes())
    occupied = raster < meta["occupied_below"]
    return GridMap(
        np.flipud(occupied),
        meta["resolution"],
        (meta["origin_x"], meta["origin_y"]),
        name=path.stem,
    )


def save_map(m: GridMap, path: str | os.PathLike) -> Path:
    """Write ``m`` as a P5 graymap (occupied black, free white) with its sidecar."""
    path = Path(path)
    raster = np.where(np.flipud(m.cells), 0, 255).astype(np.uint8)
    header = f"P5\n{m.width} {m.height}\n255\n".encode("ascii")
    path.write_bytes(header + raster.tobytes())
    _meta_path(path).write_text(
        f"resolution {m.resolution!r}\n"
        f"origin_x {m.origin[0]!r}\n"
        f"origin_y {m.origin[1]!r}\n"
        f"occupied_below {DEFAULT_OCCUPIED_BELOW}\n",
        encoding="utf-8",
    )
    return path


# --------------------------------------------------------------------------
# Collision geometry


def is_free_disk(m: GridMap, center, radius: float) -> bool:
    """True iff the disk lies inside the map and touches only free cells.

    A cell counts as touched when its closest point is strictly closer than
    ``radius`` (tangency is allowed). With ``radius == 0`` this degenerates
    to the occupancy of the cell containing the center.
    """
    cx, cy = (center.x, center.y) if isinstance(center, Pose) else center
    xmin, xmax, ymin, ymax = m.extent
    if cx - radius < xmin or cx + radius > xmax or cy - radius < ymin or cy + radius > ymax:
        return False
    if m.is_occupied(cx, cy):
        return False
    if radius == 0:
        return True
    res = m.resolution
    gx = (cx - m.origin[0]) / res
    gy = (cy - m.origin[1]) / res
    r = radius / res
    i0 = max(int(math.floor(gx - r)), 0)
    i1 = min(int(math.floor(gx + r)), m.width - 1)
    j0 = max(int(math.floor(gy - r)), 0)
    j1 = min(int(math.floor(gy + r)), m.height - 1)
    block = m.cells[j0 : j1 + 1, i0 : i1 + 1]
    if not block.any():
        return True
    ii = np.arange(i0, i1 + 1)
    jj = np.arange(j0, j1 + 1)
    dx = np.maximum(np.maximum(ii - gx, gx - (ii + 1)), 0.0)
    dy = np.maximum(np.maximum(jj - gy, gy - (jj + 1)), 0.0)
    touched = dy[:, None] ** 2 + dx[None, :] ** 2 < r * r
    return not bool((touched & block).any())


# --------------------------------------------------------------------------
# Ray casting (Amanatides-Woo grid traversal)


@numba.njit(cache=True)
def _dda(cells, gx, gy, dx, dy, max_t):
    """Traverse cells from grid point (gx, gy) along unit (dx, dy).

    Returns (t, nx, ny) with t in cell units; t < 0 means no hit within max_t.
    Out-of-range cells are solid.
    """
    h, w = cells.shape
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    inf = 1e300
    if step_x != 0:
        t_max_x = ((ix + 1 - gx) if step_x > 0 else (gx - ix)) / abs(dx)
        t_dx = 1.0 / abs(dx)
    else:
        t_max_x = inf
        t_dx = inf
    if step_y != 0:
        t_max_y = ((iy + 1 - gy) if step_y > 0 else (gy - iy)) / abs(dy)
        t_dy = 1.0 / abs(dy)
    else:
        t_max_y = inf
        t_dy = inf
    while True:
        if t_max_x < t_max_y:
            t = t_max_x
            ix += step_x
            t_max_x += t_dx
            nx, ny = -float(step_x), 0.0
        else:
            t = t_max_y
            iy += step_y
            t_max_y += t_dy
            nx, ny = 0.0, -float(step_y)
        if t > max_t:
            return -1.0, 0.0, 0.0
        if ix < 0 or iy < 0 or ix >= w or iy >= h or cells[iy, ix]:
            return t, nx, ny


@numba.njit(cache=True)
def _dda_many(cells, gx, gy, angles, max_t, out):
    for k in range(angles.shape[0]):
        t, _, _ = _dda(cells, gx, gy, math.cos(angles[k]), math.sin(angles[k]), max_t)
        out[k] = t if t >= 0 else max_t


def raycast(m: GridMap, origin, heading: float, max_range: float) -> RayHit | None:
    """First occupied-cell intersection along a ray, or None beyond ``max_range``.

    The normal is the outward face normal of the entered cell face, one of
    (+-1, 0), (0, +-1).
    """
    ox, oy = origin
    if m.is_occupied(ox, oy):
        raise ValueError(f"raycast origin ({ox:.3f}, {oy:.3f}) lies in an occupied cell")
    res = m.resolution
    t, nx, ny = _dda(
        m.cells,
        (ox - m.origin[0]) / res,
        (oy - m.origin[1]) / res,
        math.cos(heading),
        math.sin(heading),
        max_range / res,
    )
    if t < 0:
        return None
    return RayHit(t * res, (nx, ny))


def raycast_fan(m: GridMap, origin, angles: np.ndarray, max_range: float) -> np.ndarray:
    """Hit distances for many headings from one origin; misses report ``max_range``."""
    ox, oy = origin
    res = m.resolution
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    out = np.empty(angles.shape[0])
    if m.is_occupied(ox, oy):
        out[:] = 0.0
        return out
    _dda_many(m.cells, (ox - m.origin[0]) / res, (oy - m.origin[1]) / res, angles, max_range / res, out)
    return out * res


def line_of_sight(m: GridMap, a, b) -> bool:
    """True iff the straight segment a->b crosses no occupied cell."""
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    if d == 0:
        return not m.is_occupied(*a)
    if m.is_occupied(*a):
        return False
    hit = raycast(m, a, math.atan2(b[1] - a[1], b[0] - a[0]), d)
    return hit is None
