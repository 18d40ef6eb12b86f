"""Discrete-time trial execution: kinematics, halt emulation, trajectories, failure criteria."""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .worldmap import GridMap, Pose, is_free_disk, raycast, wrap_angle

BISECTION_TOL = 1e-3


@dataclass(frozen=True)
class RobotSpec:
    footprint_radius: float = 0.25
    max_speed: float = 2.0
    max_turn_rate: float = math.pi
    halt_range: float = 0.15

    def __post_init__(self):
        for name in ("footprint_radius", "max_speed", "max_turn_rate", "halt_range"):
            if not getattr(self, name) > 0:
                raise ValueError(f"RobotSpec.{name} must be > 0")

    @property
    def size(self) -> float:
        return 2.0 * self.footprint_radius


@dataclass(frozen=True)
class MotionCommand:
    surge: float = 0.0
    sway: float = 0.0
    yaw_rate: float = 0.0

    def clamped(self, robot: RobotSpec) -> "MotionCommand":
        speed = math.hypot(self.surge, self.sway)
        s = 1.0 if speed <= robot.max_speed else robot.max_speed / speed
        yaw = max(-robot.max_turn_rate, min(robot.max_turn_rate, self.yaw_rate))
        return MotionCommand(self.surge * s, self.sway * s, yaw)

    @property
    def translating(self) -> bool:
        return self.surge != 0.0 or self.sway != 0.0


STOP = MotionCommand()


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)

    def append(self, t: float, pose: Pose) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        if not self.times and t != 0.0:
            raise ValueError("first trajectory sample must be at t = 0")
        self.times.append(t)
        self.poses.append(pose)

    def __len__(self) -> int:
        return len(self.poses)

    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses], dtype=float).reshape(-1, 2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "y", "heading"])
        for t, p in zip(self.times, self.poses):
            w.writerow([repr(float(v)) for v in (t, p.x, p.y, p.heading)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        traj = cls()
        for row in csv.DictReader(io.StringIO(text)):
            traj.append(float(row["t"]), Pose(float(row["x"]), float(row["y"]), float(row["heading"])))
        return traj


def path_length(traj: Trajectory | np.ndarray, stride: int = 1) -> float:
    """Polyline length through every ``stride``-th sample, always keeping the last one."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pts = traj.xy() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if len(pts) < 2:
        return 0.0
    idx = list(range(0, len(pts), stride))
    if idx[-1] != len(pts) - 1:
        idx.append(len(pts) - 1)
    sub = pts[idx]
    return float(np.sum(np.hypot(*np.diff(sub, axis=0).T)))


class TrialStatus(str, enum.Enum):
    SUCCESS = "Success"
    FAIL_DISTANCE_LIMIT = "FailDistanceLimit"
    FAIL_LOOP_DETECTED = "FailLoopDetected"
    FAIL_STUCK = "FailStuck"


class PolicyFailure(Exception):
    """Raised by a policy to end a trial early."""

    status = TrialStatus.FAIL_STUCK


class LoopDetected(PolicyFailure):
    status = TrialStatus.FAIL_LOOP_DETECTED


class Stuck(PolicyFailure):
    status = TrialStatus.FAIL_STUCK


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrialConfig:
    source: Pose
    target: tuple[float, float]
    distance_limit: float = 100.0
    sim_dt: float = 0.1
    seed: int = 0
    goal_radius: float = 0.75
    stride: int = 5
    max_steps: int | None = None

    def __post_init__(self):
        if not self.distance_limit > 0:
            raise ConfigError("distance_limit must be > 0")
        if not self.sim_dt > 0:
            raise ConfigError("sim_dt must be > 0")
        if not self.goal_radius > 0:
            raise ConfigError("goal_radius must be > 0")


@dataclass
class TrialContext:
    """What a policy is told once, before the first step."""

    map: GridMap
    robot: RobotSpec
    config: TrialConfig
    rng: np.random.Generator

    @property
    def target(self) -> tuple[float, float]:
        return self.config.target

    @property
    def dt(self) -> float:
        return self.config.sim_dt


@dataclass(frozen=True)
class Observation:
    t: float
    pose: Pose
    halted: bool
    travelled: float


class Policy(Protocol):
    def reset(self, ctx: TrialContext) -> None: ...

    def __call__(self, obs: Observation) -> MotionCommand: ...


@dataclass
class TrialOutcome:
    status: TrialStatus
    path_length: float
    wall_steps: int
    trajectory: Trajectory
    raw_length: float = 0.0

    @property
    def success(self) -> bool:
        return self.status is TrialStatus.SUCCESS


def _halt_blocked(pose: Pose, direction: float, m: GridMap, robot: RobotSpec) -> bool:
    # The kill switch looks along the commanded translation, starting at the footprint edge.
    reach = robot.footprint_radius + robot.halt_range
    if m.is_occupied(pose.x, pose.y):
        return True
    return raycast(m, pose.xy, direction, reach) is not None


def step(state: Pose, cmd: MotionCommand, dt: float, m: GridMap, robot: RobotSpec) -> tuple[Pose, bool]:
    """Advance one tick. Returns the new pose and whether the halt signal fired."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    cmd = cmd.clamped(robot)
    heading_after = state.heading + cmd.yaw_rate * dt
    if not cmd.translating:
        return Pose(state.x, state.y, heading_after), False

    c, s = math.cos(state.heading), math.sin(state.heading)
    vx = c * cmd.surge - s * cmd.sway
    vy = s * cmd.surge + c * cmd.sway
    direction = math.atan2(vy, vx)
    if _halt_blocked(state, direction, m, robot):
        return Pose(state.x, state.y, heading_after), True

    tx, ty = state.x + vx * dt, state.y + vy * dt
    r = robot.footprint_radius
    if is_free_disk(m, (tx, ty), r):
        return Pose(tx, ty, heading_after), False
    # Bisect the fraction of the step that keeps the footprint free.
    lo, hi = 0.0, 1.0
    length = math.hypot(vx, vy) * dt
    while (hi - lo) * length > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if is_free_disk(m, (state.x + vx * dt * mid, state.y + vy * dt * mid), r):
            lo = mid
        else:
            hi = mid
    return Pose(state.x + vx * dt * lo, state.y + vy * dt * lo, heading_after), True


def validate_trial(config: TrialConfig, m: GridMap, robot: RobotSpec) -> None:
    problems = []
    if not is_free_disk(m, config.source, robot.footprint_radius):
        problems.append(f"source {config.source.xy} is not collision-free")
    if m.is_occupied(*config.target):
        problems.append(f"target {config.target} is inside an obstacle or outside the map")
    if problems:
        raise ConfigError("; ".join(problems))


def run_trial(policy: Policy, config: TrialConfig, m: GridMap, robot: RobotSpec) -> TrialOutcome:
    """Run one closed-loop trial until success, distance-limit failure or a policy failure.

    ``max_steps`` (default: enough ticks to cover the distance limit three
    times at full speed, plus slack for rotating in place) guards against
    policies that stop moving without signalling.
    """
    validate_trial(config, m, robot)
    rng = np.random.default_rng(config.seed)
    policy.reset(TrialContext(m, robot, config, rng))
    dt = config.sim_dt
    max_steps = config.max_steps
    if max_steps is None:
        max_steps = int(3 * config.distance_limit / (robot.max_speed * dt)) + 2_000

    traj = Trajectory()
    pose = config.source
    traj.append(0.0, pose)
    tx, ty = config.target
    raw = 0.0
    halted = False
    wall_steps = 0
    status = None
    n = 0
    while status is None:
        if math.hypot(pose.x - tx, pose.y - ty) <= config.goal_radius:
            status = TrialStatus.SUCCESS
            break
        if n >= max_steps:
            status = TrialStatus.FAIL_STUCK
            break
        obs = Observation(n * dt, pose, halted, raw)
        try:
            cmd = policy(obs)
        except PolicyFailure as exc:
            status = exc.status
            break
        new_pose, halted = step(pose, cmd, dt, m, robot)
        n += 1
        wall_steps += int(halted)
        raw += math.hypot(new_pose.x - pose.x, new_pose.y - pose.y)
        pose = new_pose
        traj.append(n * dt, pose)
        if raw > config.distance_limit:
            status = TrialStatus.FAIL_DISTANCE_LIMIT
    return TrialOutcome(status, path_length(traj, config.stride), wall_steps, traj, raw)


def turn_toward(current: float, desired: float, robot: RobotSpec, dt: float) -> float:
    """Yaw rate that reaches ``desired`` as fast as allowed without overshooting."""
    err = wrap_angle(desired - current)
    return max(-robot.max_turn_rate, min(robot.max_turn_rate, err / dt))
