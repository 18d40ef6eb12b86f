"""Simulated camera frontend: 2x3 tile slicing with overlap and a synthetic scene embedder.

Geometry comes from a ray fan through each tile's annular sector. Rays are
shared between the NEAR and FAR rows of a column since both rows cover
the same angular slice.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .promptdb import EmbeddingProvider, load_prompt_set, quantize_unit
from .worldmap import GridMap, Pose, line_of_sight, raycast_fan, wrap_angle

ROW_NAMES = ("NEAR", "FAR")
COL_NAMES = ("L", "C", "R")
RAYS_PER_TILE = 32
RADIAL_SAMPLES = 8


@dataclass(frozen=True)
class TileLayout:
    overlap_fraction: float = 0.20
    fov: float = math.pi / 2
    near_range: float = 0.8
    far_range: float = 2.0

    def __post_init__(self):
        if not 0 <= self.overlap_fraction < 0.5:
            raise ValueError("overlap_fraction must lie in [0, 0.5)")
        if not 0 < self.near_range < self.far_range:
            raise ValueError("need 0 < near_range < far_range")
        if not 0 < self.fov < 2 * math.pi:
            raise ValueError("fov must lie in (0, 2 pi)")

    @property
    def column_width(self) -> float:
        return self.fov / 3.0

    def column_offsets(self) -> list[tuple[float, float]]:
        """(lo, hi) angle offsets from the heading for L, C, R; left is counter-clockwise."""
        w = self.column_width
        e = 0.5 * self.overlap_fraction * w  # adjacent tiles share overlap_fraction * w
        half = self.fov / 2
        return [(half - w - e, half), (-w / 2 - e, w / 2 + e), (-half, -half + w + e)]

    def bands(self) -> list[tuple[float, float]]:
        return [(0.0, self.near_range), (self.near_range * (1 - self.overlap_fraction), self.far_range)]


@dataclass(frozen=True)
class Sector:
    row: int
    col: int
    origin: tuple[float, float]
    a0: float  # world angle, counter-clockwise start
    a1: float  # a1 > a0 (not wrapped)
    r0: float
    r1: float

    @property
    def name(self) -> str:
        return f"{ROW_NAMES[self.row]}_{COL_NAMES[self.col]}"

    @property
    def width(self) -> float:
        return self.a1 - self.a0

    def ray_angles(self, n: int = RAYS_PER_TILE) -> np.ndarray:
        return self.a0 + (np.arange(n) + 0.5) * (self.width / n)

    def contains(self, p) -> bool:
        dx, dy = p[0] - self.origin[0], p[1] - self.origin[1]
        r = math.hypot(dx, dy)
        if not self.r0 <= r <= self.r1:
            return False
        off = wrap_angle(math.atan2(dy, dx) - self.a0)
        if off < 0:
            off += 2 * math.pi
        return off <= self.width


def slice_fov(layout: TileLayout, pose: Pose) -> list[Sector]:
    """Six sectors in (NEAR L, NEAR C, NEAR R, FAR L, FAR C, FAR R) order."""
    out = []
    for row, (r0, r1) in enumerate(layout.bands()):
        for col, (lo, hi) in enumerate(layout.column_offsets()):
            out.append(Sector(row, col, pose.xy, pose.heading + lo, pose.heading + hi, r0, r1))
    return out


@dataclass(frozen=True)
class TileGeometry:
    f_free: float
    f_obst: float
    v_target: float
    w_target: float
    std: float
    # coarse-block histogram of what the tile sees, for the appearance term
    blocks: np.ndarray | None = None


@dataclass(frozen=True)
class TileObservation:
    embedding: np.ndarray
    std_dev: float
    tile_index: tuple[int, int]
    geometry: TileGeometry | None = None


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class SceneEmbedder:
    """Maps tile geometry to a unit embedding near the prompt prototypes.

    ``place_weight`` mixes in an appearance vector built from fixed random
    textures of the coarse map blocks the tile sees, so that different
    places embed differently. With ``place_weight == 0`` the embedding is
    the plain prototype mixture.
    """

    e_floor: np.ndarray
    e_obstacle: np.ndarray
    e_target: np.ndarray
    e_blank: np.ndarray
    noise_std: float = 0.02
    place_weight: float = 0.0
    block_size: float = 1.0
    seed: int = 0
    target_size: float = 0.4
    _textures: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        protos = [self.e_floor, self.e_obstacle, self.e_target, self.e_blank]
        for i in range(4):
            for j in range(i + 1, 4):
                if abs(float(protos[i] @ protos[j])) >= 0.9:
                    raise ValueError("scene prototypes must be pairwise distinct (|cos| < 0.9)")

    @property
    def dim(self) -> int:
        return len(self.e_floor)

    @classmethod
    def from_provider(cls, provider: EmbeddingProvider, nav_prompts: str, target_prompts: str, **kw) -> "SceneEmbedder":
        """Prototypes as normalized means of prompt encodings.

        Floor: the navigability positives. Blank: negatives mentioning "no
        context" style content. Obstacle: the remaining negatives. Target:
        the target positives.
        """
        nav = load_prompt_set(nav_prompts)
        tgt = load_prompt_set(target_prompts)
        enc = lambda texts: _unit(np.mean([provider.encode(t) for t in texts], axis=0))
        blank = [t for t in nav.negative if "no " in t or "context" in t or "texture" in t]
        obst = [t for t in nav.negative if t not in blank] or list(nav.negative)
        return cls(
            e_floor=quantize_unit(enc(nav.positive)),
            e_obstacle=quantize_unit(enc(obst)),
            e_target=quantize_unit(enc(tgt.positive)),
            e_blank=quantize_unit(enc(blank or nav.negative)),
            **kw,
        )

    def texture(self, key: tuple) -> np.ndarray:
        t = self._textures.get(key)
        if t is None:
            ss = np.random.SeedSequence([self.seed, 0x7A11, *(k & 0xFFFFFFFF for k in key)])
            t = _unit(np.random.default_rng(ss).standard_normal(self.dim))
            self._textures[key] = t
        return t

    def embed(self, g: TileGeometry, rng: np.random.Generator | None = None) -> np.ndarray:
        v = g.f_free * self.e_floor + g.f_obst * self.e_obstacle + g.v_target * g.w_target * self.e_target
        if g.f_free + g.f_obst == 0 and g.v_target == 0:
            v = self.e_blank.copy()
        if self.place_weight > 0 and g.blocks is not None and len(g.blocks):
            keys, counts = g.blocks
            app = counts @ np.stack([self.texture((int(kx), int(ky))) for kx, ky in keys])
            v = _unit(v) + self.place_weight * _unit(app)
        if self.noise_std > 0 and rng is not None:
            # isotropic noise whose expected norm is noise_std
            v = _unit(v) + rng.standard_normal(self.dim) * (self.noise_std / math.sqrt(self.dim))
        return _unit(v)


def _radial_samples(r0: float, r1: float, n: int = RADIAL_SAMPLES):
    r = r0 + (np.arange(n) + 0.5) * (r1 - r0) / n
    return r, r / r.sum()  # area weights grow with radius


def tile_geometry(m: GridMap, target, sector: Sector, hits: np.ndarray, target_size: float = 0.4,
                  block_size: float | None = None) -> TileGeometry:
    """Free/blocked fractions, target visibility and depth dispersion from ray hit distances.

    ``hits[k]`` is the hit distance of ray k (``sector.r1`` or more for a miss).
    """
    radii, w = _radial_samples(sector.r0, sector.r1)
    angles = sector.ray_angles(len(hits))
    free = radii[None, :] < hits[:, None]
    px = sector.origin[0] + radii[None, :] * np.cos(angles)[:, None]
    py = sector.origin[1] + radii[None, :] * np.sin(angles)[:, None]
    xmin, xmax, ymin, ymax = m.extent
    inside = (px >= xmin) & (px < xmax) & (py >= ymin) & (py < ymax)
    wfull = np.broadcast_to(w, free.shape) / len(hits)

    v_t, w_t = 0.0, 0.0
    hidden = np.zeros_like(free)
    if target is not None and sector.contains(target) and line_of_sight(m, target, sector.origin):
        d = max(math.hypot(target[0] - sector.origin[0], target[1] - sector.origin[1]), 1e-9)
        ang = 2 * math.atan(min(0.5 * target_size / d, 1e6))
        v_t = 1.0
        w_t = min(1.0, 2.0 * min(ang / sector.width, 1.0))
        # the target itself hides the samples behind it
        bearing = math.atan2(target[1] - sector.origin[1], target[0] - sector.origin[0])
        off = np.abs((angles - bearing + math.pi) % (2 * math.pi) - math.pi)
        hidden = (off[:, None] <= ang / 2) & (radii[None, :] >= d - 0.5 * target_size)

    # everything not visible as floor is blocked; beyond the map edge is occluded by the edge itself
    seen = ~hidden
    f_free = float((wfull * (free & inside & seen)).sum())
    f_obst = float((wfull * (~(free & inside) & seen)).sum())

    # depth image: each sample sees min(its radius, the ray's hit)
    depth = np.minimum(radii[None, :], hits[:, None]) / sector.r1
    std = float(min(1.0, 2.0 * depth.std()))

    blocks = None
    if block_size:
        # floor samples that are visible, plus the surface point of each ray that hits
        # hit points are pushed half a cell into the struck cell so they never sit on a block edge
        reach = np.minimum(hits, sector.r1) + 0.5 * m.resolution
        hx = sector.origin[0] + reach * np.cos(angles)
        hy = sector.origin[1] + reach * np.sin(angles)
        vis = free & inside
        xs = np.concatenate([px[vis], hx[hits < sector.r1]])
        ys = np.concatenate([py[vis], hy[hits < sector.r1]])
        if len(xs):
            nbx = int(math.ceil((xmax - xmin) / block_size)) + 1
            kx = np.clip(np.floor((xs - xmin) / block_size).astype(np.int64), 0, nbx - 1)
            ky = np.floor((ys - ymin) / block_size).astype(np.int64)
            flat = np.bincount(ky * nbx + kx - ky.min() * nbx)
            idx = np.flatnonzero(flat)
            lin = idx + ky.min() * nbx
            blocks = (np.stack([lin % nbx, lin // nbx], axis=1), flat[idx])
    return TileGeometry(f_free, f_obst, v_t, w_t, std, blocks)


def observe_tile(m: GridMap, target, sector: Sector, embedder: SceneEmbedder,
                 rng: np.random.Generator | None = None, hits: np.ndarray | None = None) -> TileObservation:
    if hits is None:
        hits = raycast_fan(m, sector.origin, sector.ray_angles(), sector.r1)
    g = tile_geometry(m, target, sector, hits, embedder.target_size,
                      embedder.block_size if embedder.place_weight > 0 else None)
    return TileObservation(embedder.embed(g, rng), g.std, (sector.row, sector.col), g)


def observe_frame(m: GridMap, target, layout: TileLayout, pose: Pose, embedder: SceneEmbedder,
                  rng: np.random.Generator | None = None) -> list[TileObservation]:
    """All six tiles, casting each column's ray fan once for both rows."""
    sectors = slice_fov(layout, pose)
    angles = np.concatenate([sectors[c].ray_angles() for c in range(3)])
    hits = raycast_fan(m, pose.xy, angles, layout.far_range)
    out = []
    for s in sectors:
        h = hits[s.col * RAYS_PER_TILE : (s.col + 1) * RAYS_PER_TILE]
        out.append(observe_tile(m, target, s, embedder, rng, h))
    return out


def frame_debug_csv(observations) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tile", "f_free", "f_obst", "v_target", "std"])
    for ob in observations:
        g = ob.geometry
        name = f"{ROW_NAMES[ob.tile_index[0]]}_{COL_NAMES[ob.tile_index[1]]}"
        w.writerow([name, f"{g.f_free:.6f}", f"{g.f_obst:.6f}", f"{g.v_target * g.w_target:.6f}", f"{ob.std_dev:.6f}"])
    return buf.getvalue()
