"""Wave-front baseline: FDTD wave propagation from the source, drained at the target.

The field lives on the occupancy grid. The five-point Laplacian is weighted
by a free-space mask ``k`` (1 free, 0 obstacle or outside the map), which
realises the zero-normal-gradient reflective boundary: a neighbour that is
not free contributes neither its value nor its share of the centre term.

Mass accounting. ``psi`` may go negative and its uniform component does
not propagate, so "remaining probability" measured on ``psi`` itself
decays pathologically slowly once the drain is on. By default the arrival
distribution is therefore measured on the conserved discrete leapfrog
energy, which is positive, zero for the uniform mode, and moves along rays
like a swarm of wall-bouncing robots. ``measure="positive"`` selects the
literal positive-part bookkeeping instead.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .worldmap import GridMap


class CFLError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WaveField:
    psi_curr: np.ndarray
    psi_prev: np.ndarray
    k_mask: np.ndarray
    dx: float
    c: float = 1.0
    dt: float = field(default=float("nan"))

    def __post_init__(self):
        if math.isnan(self.dt):
            object.__setattr__(self, "dt", 0.5 * self.dx / self.c)
        if self.psi_curr.shape != self.k_mask.shape or self.psi_prev.shape != self.k_mask.shape:
            raise ValueError("field slices and mask must share one shape")
        if self.alpha > 0.5 + 1e-12:
            raise CFLError(f"CFL violated: c^2 dt^2 / dx^2 = {self.alpha:.4f} > 0.5")

    @property
    def alpha(self) -> float:
        return (self.c * self.dt / self.dx) ** 2

    @property
    def total(self) -> float:
        return float(self.psi_curr.sum())


@dataclass
class ArrivalDistribution:
    times: list[float] = field(default_factory=list)
    masses: list[float] = field(default_factory=list)

    def append(self, t: float, mass: float) -> None:
        self.times.append(t)
        self.masses.append(max(mass, 0.0))

    @property
    def total_drained(self) -> float:
        return float(sum(self.masses))

    def to_csv(self, c: float) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "distance_m", "mass"])
        for t, m in zip(self.times, self.masses):
            w.writerow([repr(float(t)), repr(float(c * t)), repr(float(m))])
        return buf.getvalue()


def coarsen(m: GridMap, resolution: float) -> GridMap:
    """Pool ``m`` onto a grid of roughly ``resolution`` meters; a coarse cell is
    occupied if any fine cell inside it is."""
    f = max(1, int(round(resolution / m.resolution)))
    if f == 1:
        return m
    h = -(-m.height // f) * f
    w = -(-m.width // f) * f
    padded = np.ones((h, w), dtype=bool)
    padded[: m.height, : m.width] = m.cells
    pooled = padded.reshape(h // f, f, w // f, f).any(axis=(1, 3))
    return GridMap(pooled, m.resolution * f, m.origin, m.name)


def _grid_coords(m: GridMap):
    xs = m.origin[0] + (np.arange(m.width) + 0.5) * m.resolution
    ys = m.origin[1] + (np.arange(m.height) + 0.5) * m.resolution
    return xs[None, :], ys[:, None]


def gaussian_on_grid(m: GridMap, center, sigma: float) -> np.ndarray:
    xs, ys = _grid_coords(m)
    d2 = (xs - center[0]) ** 2 + (ys - center[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def init_field(m: GridMap, source, robot_size: float, alpha: float = 0.25, c: float = 1.0) -> WaveField:
    """Gaussian of std ``robot_size / 2`` at the source, masked to free space, summing to 1.

    Starts at rest (``psi_prev == psi_curr``).
    """
    if m.is_occupied(*source):
        raise ValueError(f"wave source {tuple(source)} lies inside an obstacle")
    k = (~m.cells).astype(np.float64)
    g = gaussian_on_grid(m, source, robot_size / 2.0) * k
    if g.sum() <= 0 or not np.isfinite(g.sum()):
        # sigma far below a cell: every neighbour underflows, keep the delta
        g = np.zeros_like(k)
        ix, iy = m.world_to_cell(*source)
        g[iy, ix] = 1.0
    psi = g / g.sum()
    dt = math.sqrt(alpha) * m.resolution / c
    return WaveField(psi, psi.copy(), k, m.resolution, c, dt)


def masked_laplacian(f: WaveField, i: int, j: int) -> float:
    """k-weighted five-point Laplacian at row ``i``, column ``j`` (reference, scalar)."""
    h, w = f.k_mask.shape
    psi, k = f.psi_curr, f.k_mask
    acc = 0.0
    ksum = 0.0
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        a, b = i + di, j + dj
        if 0 <= a < h and 0 <= b < w:
            acc += k[a, b] * psi[a, b]
            ksum += k[a, b]
    return acc - ksum * psi[i, j]


def laplacian(psi: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Vectorised :func:`masked_laplacian` over the whole grid (zero on masked cells)."""
    p = np.pad(psi, 1)
    kp = np.pad(k, 1)
    out = np.zeros_like(psi)
    for sl in ((slice(2, None), slice(1, -1)), (slice(None, -2), slice(1, -1)),
               (slice(1, -1), slice(2, None)), (slice(1, -1), slice(None, -2))):
        kn = kp[sl]
        out += kn * (p[sl] - psi)
    return out * k


def step_wave(f: WaveField) -> WaveField:
    new = (2.0 * f.psi_curr - f.psi_prev + f.alpha * laplacian(f.psi_curr, f.k_mask)) * f.k_mask
    return replace(f, psi_curr=new, psi_prev=f.psi_curr)


def discrete_energy(f: WaveField) -> float:
    """Leapfrog invariant ``|u_n - u_{n-1}|^2 + alpha <A u_n, u_{n-1}>``.

    Exactly conserved by :func:`step_wave`; non-negative under the CFL bound.
    """
    a, b, k = f.psi_curr, f.psi_prev, f.k_mask
    kin = float(((a - b) ** 2 * k).sum())
    ex = k[:, 1:] * k[:, :-1]
    ey = k[1:, :] * k[:-1, :]
    pot = float((ex * (a[:, 1:] - a[:, :-1]) * (b[:, 1:] - b[:, :-1])).sum())
    pot += float((ey * (a[1:, :] - a[:-1, :]) * (b[1:, :] - b[:-1, :])).sum())
    return kin + f.alpha * pot


def drain_factor(m_or_field, target, sigma_drain: float, dx: float | None = None, origin=(0.0, 0.0)) -> np.ndarray:
    """Cellwise ``1 - exp(-d^2 / (2 sigma^2))`` around the target; lies in [0, 1)."""
    if isinstance(m_or_field, GridMap):
        return 1.0 - gaussian_on_grid(m_or_field, target, sigma_drain)
    shape = m_or_field
    xs = origin[0] + (np.arange(shape[1]) + 0.5) * dx
    ys = origin[1] + (np.arange(shape[0]) + 0.5) * dx
    d2 = (xs[None, :] - target[0]) ** 2 + (ys[:, None] - target[1]) ** 2
    return 1.0 - np.exp(-d2 / (2.0 * sigma_drain * sigma_drain))


def apply_drain(
    f: WaveField,
    target,
    sigma_drain: float,
    accumulator: ArrivalDistribution,
    t: float,
    origin=(0.0, 0.0),
    measure: str = "positive",
) -> WaveField:
    """Multiply both time slices by the inverse Gaussian and log what was removed.

    ``measure="positive"`` logs the drop of ``sum(max(psi, 0))``;
    ``"energy"`` logs the drop of :func:`discrete_energy` (unnormalised).
    """
    if not sigma_drain > 0:
        raise ValueError("sigma_drain must be > 0")
    g = drain_factor(f.k_mask.shape, target, sigma_drain, f.dx, origin)
    out = replace(f, psi_curr=f.psi_curr * g, psi_prev=f.psi_prev * g)
    if measure == "positive":
        before = np.clip(f.psi_curr, 0, None).sum()
        after = np.clip(out.psi_curr, 0, None).sum()
    elif measure == "energy":
        before = discrete_energy(f)
        after = discrete_energy(out)
    else:
        raise ValueError(f"unknown measure {measure!r}")
    accumulator.append(t, float(before - after))
    return out


# --------------------------------------------------------------------------
# Fused simulation loop


@numba.njit(cache=True)
def _energy(a, b, k, alpha):
    h, w = a.shape
    kin = 0.0
    pot = 0.0
    for i in range(h):
        for j in range(w):
            if k[i, j] == 0.0:
                continue
            d = a[i, j] - b[i, j]
            kin += d * d
            if j + 1 < w and k[i, j + 1] != 0.0:
                pot += (a[i, j + 1] - a[i, j]) * (b[i, j + 1] - b[i, j])
            if i + 1 < h and k[i + 1, j] != 0.0:
                pot += (a[i + 1, j] - a[i, j]) * (b[i + 1, j] - b[i, j])
    return kin + alpha * pot


@numba.njit(cache=True)
def _leapfrog(curr, prev, out, k, alpha):
    h, w = curr.shape
    for i in range(h):
        for j in range(w):
            if k[i, j] == 0.0:
                out[i, j] = 0.0
                continue
            c = curr[i, j]
            lap = 0.0
            if i > 0 and k[i - 1, j] != 0.0:
                lap += curr[i - 1, j] - c
            if i + 1 < h and k[i + 1, j] != 0.0:
                lap += curr[i + 1, j] - c
            if j > 0 and k[i, j - 1] != 0.0:
                lap += curr[i, j - 1] - c
            if j + 1 < w and k[i, j + 1] != 0.0:
                lap += curr[i, j + 1] - c
            out[i, j] = 2.0 * c - prev[i, j] + alpha * lap


@numba.njit(cache=True)
def _run(curr, prev, k, g, window, alpha, energy_mode, threshold, max_steps, masses, probe):
    """Advance drained field and undrained probe; returns (steps, remaining fraction).

    ``masses[n]`` receives the (unclamped) mass drained at step n+1 and
    ``probe[n]`` the overlap of the undrained field with the target window.
    """
    h, w = curr.shape
    nxt = np.empty_like(curr)
    p_curr = curr.copy()
    p_prev = prev.copy()
    p_next = np.empty_like(curr)
    if energy_mode:
        ref = _energy(curr, prev, k, alpha)
        if ref <= 0.0:
            # source at rest in a single free cell: nothing can move
            return 0, 1.0
    else:
        ref = 0.0
        for i in range(h):
            for j in range(w):
                if curr[i, j] > 0.0:
                    ref += curr[i, j]
    level = ref
    n = 0
    remaining = 1.0
    probe_len = probe.shape[0]
    while n < max_steps:
        _leapfrog(curr, prev, nxt, k, alpha)
        for i in range(h):
            for j in range(w):
                prev[i, j] = curr[i, j] * g[i, j]
                curr[i, j] = nxt[i, j] * g[i, j]
        if n < probe_len:
            _leapfrog(p_curr, p_prev, p_next, k, alpha)
            s = 0.0
            for i in range(h):
                for j in range(w):
                    p_prev[i, j] = p_curr[i, j]
                    p_curr[i, j] = p_next[i, j]
                    s += window[i, j] * p_next[i, j]
            probe[n] = s
        if energy_mode:
            new_level = _energy(curr, prev, k, alpha)
        else:
            new_level = 0.0
            for i in range(h):
                for j in range(w):
                    if curr[i, j] > 0.0:
                        new_level += curr[i, j]
        masses[n] = (level - new_level) / ref
        level = new_level
        n += 1
        remaining = level / ref
        if remaining < threshold:
            break
    return n, remaining


@numba.njit(cache=True)
def _probe_run(curr, prev, k, window, alpha, rel, horizon, max_steps, probe):
    """Undrained probe only, stopped ``horizon`` times past its first qualifying peak."""
    h, w = curr.shape
    nxt = np.empty_like(curr)
    top = 0.0
    peak = -1
    n = 0
    while n < max_steps:
        _leapfrog(curr, prev, nxt, k, alpha)
        s = 0.0
        for i in range(h):
            for j in range(w):
                prev[i, j] = curr[i, j]
                curr[i, j] = nxt[i, j]
                s += window[i, j] * nxt[i, j]
        probe[n] = s
        if s > top:
            top = s
        if peak < 0 and n >= 2 and probe[n - 1] >= probe[n - 2] and probe[n - 1] > s and probe[n - 1] >= rel * top:
            peak = n - 1
        n += 1
        if peak >= 0 and n >= horizon * (peak + 1):
            break
    return n


@dataclass(frozen=True)
class WaveParams:
    robot_size: float = 0.5
    alpha: float = 0.25
    resolution: float | None = 0.1
    sigma_drain: float | None = None
    threshold: float = 1e-4
    max_steps: int = 10_000_000
    measure: str = "energy"
    # first arrival = first local max of the probe at least this fraction of its maximum
    contact_rel: float = 0.01


@dataclass
class WavefrontResult:
    arrivals: ArrivalDistribution
    first_contact_distance: float
    mean: float
    std: float
    truncated: bool
    steps: int
    speed: float
    remaining: float

    @property
    def distances(self) -> np.ndarray:
        return self.speed * np.asarray(self.arrivals.times)


def first_arrival_index(probe: np.ndarray, rel: float = 0.01) -> int:
    """Index of the first local maximum whose height reaches ``rel`` of the global maximum."""
    if len(probe) == 0:
        return -1
    top = float(np.max(probe))
    if top <= 0:
        return -1
    for i in range(len(probe)):
        left = probe[i - 1] if i > 0 else -np.inf
        right = probe[i + 1] if i + 1 < len(probe) else -np.inf
        if probe[i] >= rel * top and probe[i] >= left and probe[i] >= right:
            return i
    return int(np.argmax(probe))


def run_wavefront(m: GridMap, source, target, params: WaveParams | None = None) -> WavefrontResult:
    """Propagate, drain and collect the arrival-distance distribution.

    Returns arrival masses per step (clamped at zero), the first-contact
    distance (first arrival peak of an undrained probe run at the target),
    and the mass-weighted mean and std of the travel distance ``c * t``.
    """
    p = params or WaveParams()
    if p.measure not in ("energy", "positive"):
        raise ValueError(f"unknown measure {p.measure!r}")
    grid = coarsen(m, p.resolution) if p.resolution else m
    if grid.is_occupied(*target):
        raise ValueError(f"wave target {tuple(target)} lies inside an obstacle")
    f = init_field(grid, source, p.robot_size, p.alpha)
    sigma_d = p.sigma_drain if p.sigma_drain is not None else p.robot_size / 2.0
    g = drain_factor(grid, target, sigma_d)
    # the probe window stays source-sized so the first arrival is a clean peak
    window = gaussian_on_grid(grid, target, p.robot_size / 2.0) * f.k_mask
    if window.sum() == 0:
        ix, iy = grid.world_to_cell(*target)
        window[iy, ix] = 1.0

    # The probe only needs to outlive the first arrival; a generous bound on
    # any geodesic (every free cell visited once) keeps it finite.
    free = int(f.k_mask.sum())
    probe_steps = int(min(p.max_steps, 4 * (free + grid.width + grid.height) / math.sqrt(p.alpha)))
    cap = p.max_steps
    masses = np.zeros(min(cap, 1 << 16))
    probe = np.zeros(probe_steps)
    curr = f.psi_curr.copy()
    prev = f.psi_prev.copy()
    total_steps = 0
    chunks = []
    remaining = 1.0
    # run in chunks so the mass buffer stays bounded in size
    while True:
        n_chunk = min(len(masses), cap - total_steps)
        if n_chunk <= 0:
            break
        if total_steps == 0:
            n, remaining = _run(curr, prev, f.k_mask, g, window, f.alpha, p.measure == "energy",
                                p.threshold, n_chunk, masses, probe)
        else:
            n, rem_chunk = _run(curr, prev, f.k_mask, g, window, f.alpha, p.measure == "energy",
                                p.threshold / remaining, n_chunk, masses, np.zeros(0))
            masses[:n] *= remaining
            remaining *= rem_chunk
        chunks.append(masses[:n].copy())
        total_steps += n
        if n < n_chunk or remaining < p.threshold:
            break

    drained = np.concatenate(chunks) if chunks else np.zeros(0)
    arrivals = ArrivalDistribution()
    times = (np.arange(len(drained)) + 1) * f.dt
    for t, mass in zip(times, drained):
        arrivals.append(float(t), float(mass))
    d = f.c * times
    w_ = np.clip(drained, 0, None)
    if w_.sum() > 0:
        mean = float((w_ * d).sum() / w_.sum())
        std = float(math.sqrt((w_ * (d - mean) ** 2).sum() / w_.sum()))
    else:
        mean = std = float("nan")
    idx = first_arrival_index(probe, p.contact_rel)
    first = float(f.c * (idx + 1) * f.dt) if idx >= 0 else float("nan")
    truncated = remaining >= p.threshold
    return WavefrontResult(arrivals, first, mean, std, truncated, total_steps, f.c, float(remaining))


def first_contact(m: GridMap, source, target, params: WaveParams | None = None, horizon: float = 3.0) -> float:
    """First-contact distance from the undrained probe alone.

    The probe is cut off once it has run ``horizon`` times as long as its
    first qualifying peak, so this costs a few geodesic transit times
    instead of a full drain-down. Later peaks larger than 1/rel times the
    first arrival, which would disqualify it, are the only thing missed.
    """
    p = params or WaveParams()
    grid = coarsen(m, p.resolution) if p.resolution else m
    if grid.is_occupied(*target):
        raise ValueError(f"wave target {tuple(target)} lies inside an obstacle")
    f = init_field(grid, source, p.robot_size, p.alpha)
    window = gaussian_on_grid(grid, target, p.robot_size / 2.0) * f.k_mask
    if window.sum() == 0:
        ix, iy = grid.world_to_cell(*target)
        window[iy, ix] = 1.0
    free = int(f.k_mask.sum())
    cap = int(min(p.max_steps, 4 * (free + grid.width + grid.height) / math.sqrt(p.alpha)))
    probe = np.zeros(cap)
    n = _probe_run(f.psi_curr.copy(), f.psi_prev.copy(), f.k_mask, window, f.alpha, p.contact_rel, horizon, cap, probe)
    idx = first_arrival_index(probe[:n], p.contact_rel)
    return float(f.c * (idx + 1) * f.dt) if idx >= 0 else float("nan")
