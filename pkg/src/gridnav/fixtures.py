"""Synthetic test worlds. Each builder is deterministic; the office map is also shipped as a P5 file."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .worldmap import GridMap, load_map


def _box(cells: np.ndarray, m: GridMap, x0: float, y0: float, x1: float, y1: float) -> None:
    """Mark the world rectangle [x0, x1] x [y0, y1] occupied (cells whose centers fall inside)."""
    r = m.resolution
    i0 = int(round((x0 - m.origin[0]) / r))
    i1 = int(round((x1 - m.origin[0]) / r))
    j0 = int(round((y0 - m.origin[1]) / r))
    j1 = int(round((y1 - m.origin[1]) / r))
    cells[max(j0, 0) : max(j1, 0), max(i0, 0) : max(i1, 0)] = True


def boxes(width: float, height: float, rects, resolution: float = 0.05, border: float = 0.0, name: str = "") -> GridMap:
    m = GridMap.empty(width, height, resolution, name=name)
    cells = m.cells.copy()
    if border > 0:
        for r in ((0, 0, width, border), (0, height - border, width, height),
                  (0, 0, border, height), (width - border, 0, width, height)):
            _box(cells, m, *r)
    for r in rects:
        _box(cells, m, *r)
    return m.with_cells(cells)


def corridor(length: float = 20.0, resolution: float = 0.05) -> tuple[GridMap, tuple, tuple]:
    """One free row of cells walled in above and below; returns (map, source, target) at the two end cells."""
    n = int(round(length / resolution)) + 1
    cells = np.ones((3, n), dtype=bool)
    cells[1, :] = False
    m = GridMap(cells, resolution, (0.0, 0.0), name="corridor")
    y = 1.5 * resolution
    return m, (0.5 * resolution, y), ((n - 0.5) * resolution, y)


def square_obstacle(size: float = 20.0, side: float = 2.0, resolution: float = 0.05) -> GridMap:
    c = size / 2
    return boxes(size, size, [(c - side / 2, c - side / 2, c + side / 2, c + side / 2)], resolution, name="square")


def c_trap(resolution: float = 0.05) -> GridMap:
    """20 x 20 m world with a cup open toward the west; targets east of it sit behind its back wall."""
    return boxes(20, 20, [(12.0, 7.0, 12.5, 13.0), (8.0, 12.5, 12.5, 13.0), (8.0, 7.0, 12.5, 7.5)], resolution, name="c_trap")


def ring_doorway(radius: float = 3.0, thickness: float = 0.3, door_angle: float = 0.0,
                 door_width: float = 1.2, resolution: float = 0.05) -> GridMap:
    """Circular wall around the map center with one gap centred on ``door_angle``."""
    size = 2 * radius + 4.0
    m = GridMap.empty(size, size, resolution, name="ring")
    xs = (np.arange(m.width) + 0.5) * resolution - size / 2
    ys = (np.arange(m.height) + 0.5) * resolution - size / 2
    x, y = np.meshgrid(xs, ys)
    rr = np.hypot(x, y)
    ang = np.arctan2(y, x)
    wall = (rr >= radius) & (rr <= radius + thickness)
    # gap of constant chord width measured at the inner radius
    half = np.arcsin(min(1.0, door_width / (2 * radius)))
    gap = np.abs(np.angle(np.exp(1j * (ang - door_angle)))) <= half
    return m.with_cells(wall & ~gap)


def symmetric_openings(resolution: float = 0.05) -> GridMap:
    """Dead-end pocket with two equal side exits: one straight ahead of the robot, one deviated.

    The robot sits at (3, 3) facing +x inside a 2 x 2 m pocket, 1 m from
    every wall; 1.2 m exits open the east wall (ahead) and the north wall
    (deviated by 90 degrees).
    """
    rects = [
        (1.8, 1.8, 4.2, 2.0),   # south
        (1.8, 1.8, 2.0, 4.2),   # west
        (4.0, 1.8, 4.2, 2.4), (4.0, 3.6, 4.2, 4.2),   # east wall with gap y 2.4..3.6
        (1.8, 4.0, 2.4, 4.2), (3.6, 4.0, 4.2, 4.2),   # north wall with gap x 2.4..3.6
    ]
    return boxes(8, 8, rects, resolution, name="openings")


OFFICE_SIZE = (12.0, 10.0)

OFFICE_RECTS = [
    # partition wall splitting the west rooms from the open plan, two doors
    (4.0, 0.1, 4.15, 2.2), (4.0, 3.8, 4.15, 6.2), (4.0, 7.8, 4.15, 9.9),
    # desks in the west rooms
    (1.0, 3.4, 2.6, 4.2), (1.0, 5.8, 2.6, 6.6),
    # open-plan desk clusters
    (6.0, 2.0, 7.6, 2.8), (9.0, 2.0, 10.6, 2.8),
    (6.0, 7.0, 7.6, 7.8), (9.0, 7.0, 10.6, 7.8),
    # pillar and a cabinet
    (8.0, 4.6, 8.4, 5.0), (11.4, 4.4, 11.9, 5.6),
]

OFFICE_WAYPOINTS = {
    "C": (7.0, 5.0),
    "NW": (2.0, 9.0),
    "NE": (10.5, 9.0),
    "SW": (2.0, 0.7),
    "SE": (10.5, 1.0),
}


def build_office(resolution: float = 0.05) -> GridMap:
    return boxes(*OFFICE_SIZE, OFFICE_RECTS, resolution, border=0.1, name="office")


def office_map() -> GridMap:
    """The bundled 12 x 10 m office map (loaded from package data)."""
    path = resources.files("gridnav") / "data" / "office.pgm"
    with resources.as_file(path) as p:
        return load_map(p)
