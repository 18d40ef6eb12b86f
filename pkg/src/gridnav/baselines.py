"""Comparison policies: random walk, wall bounce, and the Bug0/1/2 family."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .simkernel import (
    ConfigError,
    LoopDetected,
    MotionCommand,
    Observation,
    RobotSpec,
    TrialContext,
    turn_toward,
)
from .worldmap import GridMap, raycast, wrap_angle

ALIGN_TOL = 1e-9
HEADING_SECTORS = 16


def _aligned_surge(obs: Observation, desired: float, ctx: TrialContext) -> MotionCommand:
    """Rotate in place toward ``desired``; surge at full speed once aligned."""
    err = wrap_angle(desired - obs.pose.heading)
    if abs(err) > ALIGN_TOL:
        return MotionCommand(yaw_rate=turn_toward(obs.pose.heading, desired, ctx.robot, ctx.dt))
    return MotionCommand(surge=ctx.robot.max_speed)


def _world_velocity(obs: Observation, vx: float, vy: float, ctx: TrialContext) -> MotionCommand:
    """Body-frame command that translates along world (vx, vy) while yawing toward it."""
    h = obs.pose.heading
    c, s = math.cos(h), math.sin(h)
    yaw = turn_toward(h, math.atan2(vy, vx), ctx.robot, ctx.dt) if (vx or vy) else 0.0
    return MotionCommand(c * vx + s * vy, -s * vx + c * vy, yaw)


# --------------------------------------------------------------------------
# Random walk


class RandomWalk:
    """Straight runs at full speed; a fresh uniform heading after every contact."""

    def __init__(self, seed: int | None = None):
        self.seed = seed
        self._desired = 0.0
        self._rng: np.random.Generator | None = None
        self._ctx: TrialContext | None = None

    def reset(self, ctx: TrialContext) -> None:
        self._ctx = ctx
        # an explicit seed overrides the trial stream, e.g. to decouple policy and kernel draws
        self._rng = ctx.rng if self.seed is None else np.random.default_rng(self.seed)
        self._desired = ctx.config.source.heading

    def __call__(self, obs: Observation) -> MotionCommand:
        if obs.halted:
            self._desired = float(self._rng.uniform(-math.pi, math.pi))
        return _aligned_surge(obs, self._desired, self._ctx)


def random_walk_policy(seed: int | None = None) -> RandomWalk:
    return RandomWalk(seed)


# --------------------------------------------------------------------------
# Wall bounce


def reflect(d: tuple[float, float], n: tuple[float, float]) -> tuple[float, float]:
    """Specular reflection ``d - 2 (d . n) n`` about the unit normal ``n``."""
    dot = d[0] * n[0] + d[1] * n[1]
    return d[0] - 2.0 * dot * n[0], d[1] - 2.0 * dot * n[1]


def _contact_normal(m: GridMap, pose, direction: float, reach: float) -> tuple[float, float]:
    hit = raycast(m, pose.xy, direction, reach)
    if hit is not None:
        return hit.normal
    # stopped by the footprint rather than the forward probe: use the clearance slope
    gx, gy = m.clearance_gradient(pose.x, pose.y)
    g = math.hypot(gx, gy)
    if g == 0:
        return -math.cos(direction), -math.sin(direction)
    return gx / g, gy / g


class WallBounce:
    """Billiard motion: reflect the heading about the contact normal."""

    PERTURB_STEP = math.radians(10.0)

    def __init__(self, initial_heading: float | None = None):
        self.initial_heading = initial_heading
        self._desired = 0.0
        self._ctx: TrialContext | None = None

    def reset(self, ctx: TrialContext) -> None:
        self._ctx = ctx
        h = ctx.config.source.heading if self.initial_heading is None else self.initial_heading
        self._desired = wrap_angle(h)

    def _blocked(self, pose, heading: float) -> bool:
        r = self._ctx.robot
        return raycast(self._ctx.map, pose.xy, heading, r.footprint_radius + r.halt_range) is not None

    def __call__(self, obs: Observation) -> MotionCommand:
        if obs.halted:
            r = self._ctx.robot
            reach = r.footprint_radius + r.halt_range + self._ctx.map.resolution
            d = (math.cos(self._desired), math.sin(self._desired))
            n = _contact_normal(self._ctx.map, obs.pose, self._desired, reach)
            dx, dy = reflect(d, n)
            new = math.atan2(dy, dx)
            # inner corners: rotate clockwise in fixed steps until the probe is clear
            for _ in range(36):
                if not self._blocked(obs.pose, new):
                    break
                new -= self.PERTURB_STEP
            self._desired = wrap_angle(new)
        return _aligned_surge(obs, self._desired, self._ctx)


def wall_bounce_policy(initial_heading: float | None = None) -> WallBounce:
    return WallBounce(initial_heading)


# --------------------------------------------------------------------------
# Bug family


class TurnRule(enum.Enum):
    LEFT = "l"
    RIGHT = "r"


class BugVariant(enum.Enum):
    BUG0 = 0
    BUG1 = 1
    BUG2 = 2


class BugMode(enum.Enum):
    MOTION_TO_GOAL = "MotionToGoal"
    BOUNDARY_FOLLOW = "BoundaryFollow"
    LOOP_RETURN = "LoopReturn"


@dataclass
class BugState:
    mode: BugMode = BugMode.MOTION_TO_GOAL
    hit_point: tuple[float, float] | None = None
    leave_point: tuple[float, float] | None = None
    min_dist_point: tuple[float, float] | None = None
    m_line: tuple[tuple[float, float], tuple[float, float]] | None = None
    visited: dict = field(default_factory=dict)
    hit_points: list = field(default_factory=list)
    leave_points: list = field(default_factory=list)


def _raster_cells(m: GridMap, a, b) -> list[tuple[int, int]]:
    """Cells crossed by segment a->b, sampled at quarter-cell spacing."""
    n = max(1, int(math.ceil(4 * math.hypot(b[0] - a[0], b[1] - a[1]) / m.resolution)))
    out = []
    for k in range(n + 1):
        t = k / n
        c = m.world_to_cell(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
        if not out or out[-1] != c:
            out.append(c)
    return out


class BugPolicy:
    """Bug0, Bug1 and Bug2 over a shared boundary-following primitive.

    The follower tracks the level set ``clearance == standoff`` of the
    distance-to-obstacle field and walks along it with the obstacle on the
    side implied by the turn rule: a left turn at contact keeps the
    obstacle on the right.
    """

    GAIN = 2.0  # 1/m, proportional pull back onto the standoff contour
    RECOVER_STEP = math.radians(15.0)

    def __init__(self, variant: BugVariant, rule: TurnRule, target=None):
        self.variant = variant
        self.rule = rule
        self.target = target
        self.state = BugState()

    # -- setup ---------------------------------------------------------------
    def reset(self, ctx: TrialContext) -> None:
        self._ctx = ctx
        m = ctx.map
        if self.target is None:
            self.target = ctx.target
        tx, ty = self.target
        if m.is_occupied(tx, ty):
            raise ConfigError(f"bug target {self.target} lies inside an obstacle")
        r = ctx.robot
        self.standoff = r.footprint_radius + r.halt_range + m.resolution
        self.speed = r.max_speed
        self.step_len = self.speed * ctx.dt
        self.lag = int(math.ceil(4 * self.standoff / self.step_len)) + 2
        self.state = BugState(m_line=(ctx.config.source.xy, (tx, ty)))
        self._tick = 0
        self._prev_xy = ctx.config.source.xy
        self._side = 1.0 if self.rule is TurnRule.LEFT else -1.0
        self._recover = 0.0
        self._heading_bucket = 0
        self._arc = 0.0
        self._loop_len = 0.0
        self._min_arc = 0.0
        self._return_arc = 0.0
        self._hit_dist = math.inf
        self._min_dist = math.inf
        self._last_dir = ctx.config.source.heading

    # -- helpers -------------------------------------------------------------
    def _dist_to_target(self, p) -> float:
        return math.hypot(self.target[0] - p[0], self.target[1] - p[1])

    def _record(self, a, b, direction: float) -> bool:
        """Add the states swept by a->b; True if any repeats an older one."""
        m = self._ctx.map
        sector = int(((direction + math.pi) / (2 * math.pi)) * HEADING_SECTORS) % HEADING_SECTORS
        mode = self.state.mode
        seen = self.state.visited
        repeat = False
        for c in _raster_cells(m, a, b):
            key = (c, mode, sector)
            last = seen.get(key)
            if last is not None and self._tick - last > self.lag:
                repeat = True
            seen[key] = self._tick
        return repeat

    def _follow_direction(self, p) -> tuple[float, float]:
        m = self._ctx.map
        gx, gy = m.clearance_gradient(*p)
        g = math.hypot(gx, gy)
        if g == 0:
            return math.cos(self._last_dir), math.sin(self._last_dir)
        nx, ny = gx / g, gy / g
        s = self._side
        tx, ty = s * ny, -s * nx
        err = self.standoff - m.clearance_at(*p)
        vx, vy = tx + self.GAIN * err * nx, ty + self.GAIN * err * ny
        # rotate away from the wall while the forward probe is still blocked
        if self._recover:
            a = math.atan2(vy, vx) + s * self._recover
            return math.cos(a), math.sin(a)
        n = math.hypot(vx, vy)
        return vx / n, vy / n

    def _goal_clear(self, p) -> bool:
        d = self._dist_to_target(p)
        reach = min(d, 2.0 * self.standoff)
        ang = math.atan2(self.target[1] - p[1], self.target[0] - p[0])
        r = self._ctx.robot
        if raycast(self._ctx.map, p, ang, reach + r.footprint_radius) is not None and d > r.footprint_radius:
            return False
        return True

    def _start_episode(self, p) -> None:
        st = self.state
        st.mode = BugMode.BOUNDARY_FOLLOW
        st.hit_point = p
        st.hit_points.append(p)
        if self.variant is not BugVariant.BUG0:
            st.visited = {}
        self._side = 1.0 if self.rule is TurnRule.LEFT else -1.0
        self._arc = 0.0
        self._hit_dist = self._dist_to_target(p)
        self._min_dist = self._hit_dist
        st.min_dist_point = p
        self._min_arc = 0.0

    def _leave(self, p) -> None:
        st = self.state
        st.mode = BugMode.MOTION_TO_GOAL
        st.leave_point = p
        st.leave_points.append(p)
        if self.variant is not BugVariant.BUG0:
            st.visited = {}

    # -- main loop -----------------------------------------------------------
    def __call__(self, obs: Observation) -> MotionCommand:
        st = self.state
        p = obs.pose.xy
        moved = math.hypot(p[0] - self._prev_xy[0], p[1] - self._prev_xy[1])
        self._tick += 1

        if st.mode is not BugMode.MOTION_TO_GOAL:
            self._arc += moved
        if moved > 0:
            direction = math.atan2(p[1] - self._prev_xy[1], p[0] - self._prev_xy[0])
            if self._record(self._prev_xy, p, direction):
                if self.variant is BugVariant.BUG1 and st.mode is BugMode.BOUNDARY_FOLLOW:
                    self._close_bug1_loop(p)
                else:
                    raise LoopDetected(f"{self.variant.name} revisited a state at {p}")
        self._prev_xy = p

        if st.mode is BugMode.MOTION_TO_GOAL:
            if obs.halted:
                if self.variant is BugVariant.BUG1 and st.leave_point is not None and \
                        math.hypot(p[0] - st.leave_point[0], p[1] - st.leave_point[1]) < self.standoff:
                    raise LoopDetected("Bug1 blocked at its leave point: target unreachable")
                self._start_episode(p)
            else:
                self._last_dir = math.atan2(self.target[1] - p[1], self.target[0] - p[0])
                return self._velocity(obs, math.cos(self._last_dir), math.sin(self._last_dir))

        if st.mode is BugMode.BOUNDARY_FOLLOW:
            d = self._dist_to_target(p)
            if self.variant is BugVariant.BUG0:
                if self._arc > self.standoff and self._goal_clear(p):
                    self._leave(p)
                    return self(obs_again(obs))
            elif self.variant is BugVariant.BUG1:
                if d < self._min_dist:
                    self._min_dist = d
                    st.min_dist_point = p
                    self._min_arc = self._arc
                if self._arc > 4 * self.standoff and \
                        math.hypot(p[0] - st.hit_point[0], p[1] - st.hit_point[1]) <= self.step_len + self._ctx.map.resolution:
                    self._close_bug1_loop(p)
            elif self.variant is BugVariant.BUG2:
                if self._on_m_line(p) and d < self._hit_dist - self._ctx.map.resolution and self._goal_clear(p):
                    self._leave(p)
                    return self(obs_again(obs))

        if st.mode is BugMode.LOOP_RETURN:
            q = st.min_dist_point
            if self._arc >= self._return_arc - self.step_len or \
                    math.hypot(p[0] - q[0], p[1] - q[1]) <= self.step_len:
                self._leave(p)
                return self(obs_again(obs))

        # boundary following
        if obs.halted:
            self._recover = min(self._recover + self.RECOVER_STEP, math.pi)
        else:
            self._recover = 0.0
        vx, vy = self._follow_direction(p)
        if self.variant is BugVariant.BUG2 and st.mode is BugMode.BOUNDARY_FOLLOW:
            vx, vy, scale = self._snap_to_m_line(p, vx, vy)
            self._last_dir = math.atan2(vy, vx)
            return self._velocity(obs, vx, vy, scale)
        self._last_dir = math.atan2(vy, vx)
        return self._velocity(obs, vx, vy)

    def _velocity(self, obs, ux, uy, scale: float = 1.0) -> MotionCommand:
        return _world_velocity(obs, ux * self.speed * scale, uy * self.speed * scale, self._ctx)

    def _close_bug1_loop(self, p) -> None:
        st = self.state
        if self._min_dist >= self._hit_dist - self._ctx.map.resolution:
            raise LoopDetected("Bug1 circumnavigation found no point closer to the target")
        self._loop_len = self._arc
        ahead = self._min_arc
        behind = self._loop_len - self._min_arc
        st.mode = BugMode.LOOP_RETURN
        st.visited = {}
        self._arc = 0.0
        if ahead <= behind:
            self._return_arc = ahead
        else:
            # walk back the other way round
            self._side = -self._side
            self._return_arc = behind

    def _m_line_cross(self, p) -> float:
        (sx, sy), (tx, ty) = self.state.m_line
        L = math.hypot(tx - sx, ty - sy)
        return ((p[0] - sx) * (ty - sy) - (p[1] - sy) * (tx - sx)) / L

    def _on_m_line(self, p) -> bool:
        return abs(self._m_line_cross(p)) <= math.sqrt(2) * self._ctx.map.resolution and self._arc > 0

    def _snap_to_m_line(self, p, vx, vy):
        """Shorten the step so it ends on the m-line when it would cross it closer to the target."""
        step = self.step_len
        q = (p[0] + vx * step, p[1] + vy * step)
        c0, c1 = self._m_line_cross(p), self._m_line_cross(q)
        if c0 == 0 or c0 * c1 >= 0:
            return vx, vy, 1.0
        f = c0 / (c0 - c1)
        x = (p[0] + f * vx * step, p[1] + f * vy * step)
        if self._dist_to_target(x) >= self._hit_dist - self._ctx.map.resolution:
            return vx, vy, 1.0
        return vx, vy, max(f, 1e-3)


def obs_again(obs: Observation) -> Observation:
    """Same observation with the halt cleared, used to re-dispatch after a mode switch."""
    return Observation(obs.t, obs.pose, False, obs.travelled)


def bug_policy(variant, rule, target=None) -> BugPolicy:
    if isinstance(variant, str):
        variant = BugVariant[variant.upper()]
    if isinstance(rule, str):
        rule = TurnRule(rule.lower()[0])
    return BugPolicy(variant, rule, target)


ALGORITHMS = ("random-walk", "wall-bounce", "bug0-l", "bug0-r", "bug1-l", "bug1-r", "bug2-l", "bug2-r")


def make_policy(name: str, *, seed: int | None = None, heading: float | None = None):
    """Policy factory keyed by the command-line algorithm name."""
    if name == "random-walk":
        return random_walk_policy(seed)
    if name == "wall-bounce":
        return wall_bounce_policy(heading)
    if name in ALGORITHMS:
        variant, rule = name.split("-")
        return bug_policy(variant, rule)
    raise ValueError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHMS)}")
