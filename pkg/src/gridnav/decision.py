"""Navigation backend: motion mixer, trap detection, look-around ranking, and the mode machine."""
from __future__ import annotations

import collections
import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .middleware import ScoreGrid
from .simkernel import STOP, MotionCommand
from .worldmap import wrap_angle

NEAR, FAR = 0, 1
L, C, R = 0, 1, 2


class NavMode(enum.Enum):
    INIT = "Init"
    LOOK_AROUND = "LookAround"
    NAVIGATE = "Navigate"
    TARGET_LOCK = "TargetLock"
    TRAPPED = "Trapped"
    DONE = "Done"
    FAILED = "Failed"


TERMINAL = (NavMode.DONE, NavMode.FAILED)

TRANSITIONS = {
    NavMode.INIT: {NavMode.LOOK_AROUND, NavMode.NAVIGATE},
    NavMode.LOOK_AROUND: {NavMode.NAVIGATE, NavMode.FAILED},
    NavMode.NAVIGATE: {NavMode.TRAPPED, NavMode.LOOK_AROUND, NavMode.FAILED},
    NavMode.TRAPPED: {NavMode.LOOK_AROUND, NavMode.FAILED},
    NavMode.TARGET_LOCK: {NavMode.NAVIGATE, NavMode.DONE, NavMode.TRAPPED},
    NavMode.DONE: set(),
    NavMode.FAILED: set(),
}
for _m in TRANSITIONS:
    if _m not in TERMINAL and _m is not NavMode.TARGET_LOCK:
        TRANSITIONS[_m].add(NavMode.TARGET_LOCK)


class IllegalTransition(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Motion mixer


@dataclass(frozen=True)
class MixerConfig:
    w_nav: float = 8.0
    w_fam: float = 1.0
    std_floor: float = 0.02
    forward_speed: float = 2.0
    turn_gain: float = 2.0

    def __post_init__(self):
        if not (self.w_nav > 0 and self.w_fam > 0):
            raise ValueError("mixer weights must be > 0")
        if self.std_floor < 0:
            raise ValueError("std_floor must be >= 0")


def column_utilities(scores: ScoreGrid, cfg: MixerConfig) -> np.ndarray:
    u = cfg.w_nav * scores.nav[FAR] - cfg.w_fam * scores.familiarity[FAR]
    distrust = (scores.std[NEAR] < cfg.std_floor) | (scores.std[FAR] < cfg.std_floor)
    blocked = scores.nav[NEAR] <= 0
    return np.where(distrust | blocked, -1.0, u)


def mix_motion(scores: ScoreGrid, cfg: MixerConfig) -> MotionCommand:
    """Forward speed from the center column, yaw toward the better side column.

    Surge is ``forward_speed`` times the center utility clipped to [0, 1].
    Yaw is counter-clockwise positive, so a right-hand preference yields a
    negative rate.
    """
    u = column_utilities(scores, cfg)
    if np.all(u <= 0):
        return STOP
    return MotionCommand(cfg.forward_speed * min(max(u[C], 0.0), 1.0), 0.0, cfg.turn_gain * (u[L] - u[R]))


# --------------------------------------------------------------------------
# Trap detection


@dataclass(frozen=True)
class TrapConfig:
    min_travel: float = 0.2
    window: float = 5.0
    halt_duration: float = 5.0

    def __post_init__(self):
        if not (self.min_travel > 0 and self.window > 0 and self.halt_duration > 0):
            raise ValueError("trap thresholds must be > 0")


TIME_EPS = 1e-9


def detect_trap(times, xy, halted, cfg: TrapConfig, now: float) -> bool:
    """Trapped if halted continuously for ``halt_duration`` or moved less than ``min_travel`` in ``window``.

    ``times``/``xy``/``halted`` are the recent odometry samples, oldest first.
    Returns False until the samples span a full window.
    """
    times = np.asarray(times, dtype=float)
    if len(times) == 0 or now - times[0] < min(cfg.window, cfg.halt_duration) - TIME_EPS:
        return False
    halted = np.asarray(halted, dtype=bool)
    if halted[-1]:
        k = len(halted) - 1
        while k > 0 and halted[k - 1]:
            k -= 1
        if now - times[k] >= cfg.halt_duration - TIME_EPS:
            return True
    if now - times[0] < cfg.window - TIME_EPS:
        return False
    pts = np.asarray(xy, dtype=float).reshape(-1, 2)
    sel = times >= now - cfg.window - TIME_EPS
    seg = pts[sel]
    travel = float(np.sum(np.hypot(*np.diff(seg, axis=0).T))) if len(seg) > 1 else 0.0
    return travel < cfg.min_travel


class TrapMonitor:
    """Rolling odometry window feeding :func:`detect_trap`."""

    def __init__(self, cfg: TrapConfig):
        self.cfg = cfg
        self.samples: collections.deque = collections.deque()

    def reset(self) -> None:
        self.samples.clear()

    def push(self, t: float, x: float, y: float, halted: bool) -> None:
        self.samples.append((t, x, y, halted))
        horizon = max(self.cfg.window, self.cfg.halt_duration) + 1.0
        while len(self.samples) > 2 and t - self.samples[1][0] >= horizon:
            self.samples.popleft()

    def trapped(self, now: float) -> bool:
        if not self.samples:
            return False
        t, x, y, h = zip(*self.samples)
        return detect_trap(t, np.column_stack([x, y]), h, self.cfg, now)


# --------------------------------------------------------------------------
# Look-around


@dataclass(frozen=True)
class LookAroundConfig:
    angular_step: float = 2 * math.pi / 72
    smoothing_sigma: float = math.radians(15.0)
    deviation_reward: float = 0.1
    # re-scan after driving this long with every FAR tile at least this familiar (0 disables)
    familiar_time: float = 3.0
    familiar_level: float = 0.8
    # weight of novelty (1 - familiarity) against navigability in heading scores
    familiarity_blend: float = 0.7

    def __post_init__(self):
        n = 2 * math.pi / self.angular_step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("angular_step must divide 2 pi")
        if not self.smoothing_sigma > 0:
            raise ValueError("smoothing_sigma must be > 0")
        if not 0 <= self.familiarity_blend <= 1:
            raise ValueError("familiarity_blend must lie in [0, 1]")

    @property
    def n(self) -> int:
        return int(round(2 * math.pi / self.angular_step))

    def headings(self) -> np.ndarray:
        return np.arange(self.n) * self.angular_step


@dataclass(frozen=True)
class HeadingCandidate:
    heading: float
    score: float
    arc_width: float
    index: int = 0


FLAT_RANGE = 1e-6


def smooth_scores(raw, cfg: LookAroundConfig) -> np.ndarray:
    return ndimage.gaussian_filter1d(np.asarray(raw, dtype=float), cfg.smoothing_sigma / cfg.angular_step, mode="wrap")


def rank_headings(raw, cfg: LookAroundConfig, current_heading: float = 0.0,
                  trap_recovery_from: float | None = None) -> list[HeadingCandidate]:
    """Candidates from raw per-heading scores sampled at ``cfg.headings()``."""
    raw = np.asarray(raw, dtype=float)
    n = cfg.n
    if raw.shape != (n,):
        raise ValueError(f"expected {n} heading scores, got {raw.shape}")
    theta = cfg.headings()
    s = smooth_scores(raw, cfg)
    if trap_recovery_from is not None:
        dev = np.abs([wrap_angle(t - trap_recovery_from) for t in theta]) / math.pi
        s = s + cfg.deviation_reward * dev
    step = cfg.angular_step
    pos = raw > 0

    def arc(i: int) -> float:
        if pos.all():
            return 2 * math.pi
        if not pos[i]:
            return step
        k = 1
        lo = 0
        while pos[(i - lo - 1) % n]:
            lo += 1
        hi = 0
        while pos[(i + hi + 1) % n]:
            hi += 1
        return (k + lo + hi) * step

    if np.ptp(s) < FLAT_RANGE:
        if s[0] <= 0:
            return []
        i = int(round(wrap_angle(current_heading) / step)) % n
        return [HeadingCandidate(float(wrap_angle(current_heading)), float(s[i]), arc(i), i)]
    cands = []
    for i in range(n):
        left, right = s[(i - 1) % n], s[(i + 1) % n]
        if s[i] > left and s[i] >= right and s[i] > 0:
            cands.append(HeadingCandidate(float(wrap_angle(theta[i])), float(s[i]), arc(i), i))
    cands.sort(key=lambda c: (-c.score, -c.arc_width, c.index))
    return cands


def look_around(scorer: Callable[[float], float], cfg: LookAroundConfig, current_heading: float = 0.0,
                trap_recovery_from: float | None = None) -> tuple[list[HeadingCandidate], np.ndarray]:
    """Score every sampled heading with ``scorer`` and rank them; returns (candidates, raw scores)."""
    raw = np.array([scorer(float(t)) for t in cfg.headings()])
    return rank_headings(raw, cfg, current_heading, trap_recovery_from), raw


def candidates_csv(cands) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["heading_rad", "score", "arc_width"])
    for c in cands:
        w.writerow([f"{c.heading:.6f}", f"{c.score:.6f}", f"{c.arc_width:.6f}"])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Mode machine


@dataclass(frozen=True)
class DecisionConfig:
    mixer: MixerConfig = MixerConfig()
    trap: TrapConfig = TrapConfig()
    look: LookAroundConfig = LookAroundConfig()
    tau_target: float = 0.3
    t_loss: float = 2.0
    look_around_enabled: bool = True
    target_turn_time: float = 0.5  # seconds to swing toward a target column


@dataclass
class StepInputs:
    t: float
    heading: float
    scores: ScoreGrid
    trapped: bool = False
    halted: bool = False
    goal_reached: bool = False
    distance_exceeded: bool = False
    # per-column heading offsets (rad) for target steering
    column_offsets: tuple[float, float, float] = (math.pi / 6, 0.0, -math.pi / 6)


@dataclass
class DecisionLogRow:
    t: float
    mode: NavMode
    u: np.ndarray
    trap: bool
    target_max: float


@dataclass
class Navigator:
    """Mode machine. ``scan`` is called on entry to LookAround and returns ranked candidates."""

    cfg: DecisionConfig
    scan: Callable[[float, float | None], list[HeadingCandidate]]
    dt: float
    max_turn_rate: float = math.pi
    mode: NavMode = NavMode.INIT
    log: list = field(default_factory=list)
    candidates: list = field(default_factory=list)

    def __post_init__(self):
        self._plan: list[float] = []  # remaining yaw (rad) to execute in LookAround
        self._recovery_from: float | None = None
        self._empty_scans = 0
        self._last_seen = -math.inf
        self._familiar_since: float | None = None
        self.on_enter: Callable[[NavMode, NavMode], None] | None = None

    def _go(self, new: NavMode) -> None:
        if new is self.mode:
            return
        if new not in TRANSITIONS[self.mode]:
            raise IllegalTransition(f"{self.mode.value} -> {new.value}")
        old, self.mode = self.mode, new
        if self.on_enter is not None:
            self.on_enter(old, new)

    def _start_look_around(self, heading: float) -> None:
        self.candidates = self.scan(heading, self._recovery_from)
        if self._recovery_from is not None:
            self._empty_scans = self._empty_scans + 1 if not self.candidates else 0
        best = self.candidates[0].heading if self.candidates else heading
        # a full turn to gather the scan, then the shortest turn to the chosen heading
        self._plan = [2 * math.pi, wrap_angle(best - heading)]

    def _rotate(self) -> MotionCommand | None:
        while self._plan and abs(self._plan[0]) < 1e-9:
            self._plan.pop(0)
        if not self._plan:
            return None
        rem = self._plan[0]
        step = math.copysign(min(abs(rem), self.max_turn_rate * self.dt), rem)
        self._plan[0] = rem - step
        return MotionCommand(0.0, 0.0, step / self.dt)

    def step(self, inp: StepInputs) -> tuple[NavMode, MotionCommand]:
        cfg = self.cfg
        sc = inp.scores
        target_max = float(sc.target.max())
        if target_max > cfg.tau_target:
            self._last_seen = inp.t
        cmd = STOP

        if self.mode in TERMINAL:
            return self.mode, STOP
        if inp.goal_reached:
            if self.mode is not NavMode.TARGET_LOCK:
                self._go(NavMode.TARGET_LOCK)
            self._go(NavMode.DONE)
            return self.mode, STOP
        if inp.distance_exceeded:
            if self.mode is NavMode.TARGET_LOCK:
                self._go(NavMode.NAVIGATE)
            self._go(NavMode.FAILED)
            return self.mode, STOP

        if target_max > cfg.tau_target and self.mode is not NavMode.TARGET_LOCK:
            self._plan = []
            self._go(NavMode.TARGET_LOCK)

        if self.mode is NavMode.INIT:
            if cfg.look_around_enabled:
                self._go(NavMode.LOOK_AROUND)
                self._start_look_around(inp.heading)
            else:
                self._go(NavMode.NAVIGATE)

        if self.mode is NavMode.TARGET_LOCK:
            if target_max <= cfg.tau_target and inp.t - self._last_seen >= cfg.t_loss - TIME_EPS:
                self._go(NavMode.NAVIGATE)
            elif inp.trapped:
                self._go(NavMode.TRAPPED)
            else:
                cmd = self._track_target(inp)

        if self.mode is NavMode.LOOK_AROUND:
            rot = self._rotate()
            if rot is not None:
                cmd = rot
            else:
                if self._recovery_from is not None and self._empty_scans >= 2:
                    self._go(NavMode.FAILED)
                    return self.mode, STOP
                self._go(NavMode.NAVIGATE)

        if self.mode is NavMode.NAVIGATE:
            if inp.trapped:
                self._go(NavMode.TRAPPED)
            else:
                cmd = mix_motion(sc, cfg.mixer)
                if self._explored(inp, cmd):
                    self._recovery_from = None
                    self._go(NavMode.LOOK_AROUND)
                    self._start_look_around(inp.heading)
                    cmd = self._rotate() or STOP

        if self.mode is NavMode.TRAPPED:
            if not cfg.look_around_enabled:
                self._go(NavMode.FAILED)
                return self.mode, STOP
            self._recovery_from = inp.heading
            self._go(NavMode.LOOK_AROUND)
            self._start_look_around(inp.heading)
            cmd = self._rotate() or STOP

        self.log.append(DecisionLogRow(inp.t, self.mode, column_utilities(sc, cfg.mixer), inp.trapped, target_max))
        return self.mode, cmd

    def _explored(self, inp: StepInputs, cmd: MotionCommand) -> bool:
        """True once the robot has driven ``familiar_time`` with the whole view ahead familiar."""
        look = self.cfg.look
        if not (look.familiar_time > 0 and self.cfg.look_around_enabled):
            return False
        # standing still is the trap detector's business
        if cmd.surge <= 0 or inp.halted or float(inp.scores.familiarity[FAR].min()) < look.familiar_level:
            self._familiar_since = None
            return False
        if self._familiar_since is None:
            self._familiar_since = inp.t
        if inp.t - self._familiar_since >= look.familiar_time - TIME_EPS:
            self._familiar_since = None
            return True
        return False

    def _track_target(self, inp: StepInputs) -> MotionCommand:
        sc = inp.scores
        r, c = np.unravel_index(int(np.argmax(sc.target)), sc.target.shape)
        off = inp.column_offsets[c]
        yaw = off / self.cfg.target_turn_time
        surge = self.cfg.mixer.forward_speed if c == C else 0.0
        return MotionCommand(surge, 0.0, yaw)


def decision_log_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mode", "u_L", "u_C", "u_R", "trap", "target_max"])
    for r in rows:
        w.writerow([f"{r.t:.3f}", r.mode.value, *(f"{x:.6f}" for x in r.u), int(r.trap), f"{r.target_max:.6f}"])
    return buf.getvalue()
