"""The VL-Explore policy: perception -> prompt and familiarity scoring -> mode machine -> motion."""
from __future__ import annotations

import collections
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .decision import (
    C,
    FAR,
    NEAR,
    DecisionConfig,
    NavMode,
    Navigator,
    StepInputs,
    TrapMonitor,
)
from .middleware import FamiliarityDB, MergeStrategy, ScoreGrid, correlate, familiarity_query_update, score_frame
from .perception import (
    RAYS_PER_TILE,
    SceneEmbedder,
    TileLayout,
    observe_frame,
    slice_fov,
    tile_geometry,
)
from .promptdb import (
    NAVIGABILITY_PROMPTS,
    TARGET_PROMPTS,
    EncodedPromptDB,
    HashEmbeddingProvider,
    build_db,
    load_prompt_set,
)
from .simkernel import MotionCommand, Observation, Stuck, TrialContext
from .worldmap import Pose, raycast_fan

FROZEN_FAMILIARITY = 0.5


@dataclass(frozen=True)
class FamiliarityConfig:
    tau_known: float = 0.85
    strategy: MergeStrategy = MergeStrategy.ROLLING_AVERAGE
    decay: float = 0.1
    # views are committed to the store this many seconds after being seen, so the
    # frame just behind the current one does not count as an explored place
    delay: float = 3.0

    def new_db(self) -> FamiliarityDB:
        return FamiliarityDB(self.tau_known, self.strategy, self.decay)


@dataclass
class VlExploreConfig:
    layout: TileLayout = field(default_factory=TileLayout)
    embedder: SceneEmbedder | None = None
    nav_db: EncodedPromptDB | None = None
    target_db: EncodedPromptDB | None = None
    familiarity: FamiliarityConfig = field(default_factory=FamiliarityConfig)
    decision: DecisionConfig = field(default_factory=DecisionConfig)
    no_look_around: bool = False
    no_familiarity: bool = False
    # how far the look-around scan sees; None uses the tile layout's far range
    scan_range: float | None = None

    def __post_init__(self):
        if self.embedder is None or self.nav_db is None or self.target_db is None:
            emb, nav, tgt = default_stack()
            self.embedder = self.embedder or emb
            self.nav_db = self.nav_db or nav
            self.target_db = self.target_db or tgt
        dims = {self.embedder.dim, self.nav_db.dim, self.target_db.dim}
        if len(dims) != 1:
            raise ValueError(f"embedder and prompt databases disagree on dimension: {sorted(dims)}")
        if self.no_look_around:
            self.decision = replace(self.decision, look_around_enabled=False)


_STACK_CACHE: dict = {}


def default_stack(dim: int = 512, seed: int = 0, noise_std: float = 0.02, place_weight: float = 1.5):
    """Hash-provider prompt databases plus a scene embedder built from the same encodings."""
    key = (dim, seed, noise_std, place_weight)
    if key not in _STACK_CACHE:
        provider = HashEmbeddingProvider(dim, seed)
        nav = build_db(load_prompt_set(NAVIGABILITY_PROMPTS), provider)
        tgt = build_db(load_prompt_set(TARGET_PROMPTS), provider)
        emb = SceneEmbedder.from_provider(provider, NAVIGABILITY_PROMPTS, TARGET_PROMPTS,
                                          noise_std=noise_std, place_weight=place_weight, seed=seed)
        _STACK_CACHE[key] = (emb, nav, tgt)
    return _STACK_CACHE[key]


class VlExplore:
    """Kernel-compatible policy object; one instance per trial."""

    def __init__(self, cfg: VlExploreConfig | None = None):
        self.cfg = cfg or VlExploreConfig()
        self.trajectory_modes: list[NavMode] = []

    def reset(self, ctx: TrialContext) -> None:
        cfg = self.cfg
        self.ctx = ctx
        self.rng = ctx.rng
        self.fam = None if cfg.no_familiarity else cfg.familiarity.new_db()
        self._pending: collections.deque = collections.deque()
        self.trap = TrapMonitor(cfg.decision.trap)
        self.nav = Navigator(cfg.decision, self._scan, ctx.dt, ctx.robot.max_turn_rate)
        self.nav.on_enter = self._on_enter
        self.last_scores: ScoreGrid | None = None
        self.trajectory_modes = []
        w = cfg.layout.column_width
        self._col_offsets = (w, 0.0, -w)

    def _on_enter(self, old: NavMode, new: NavMode) -> None:
        # trap detection only watches driving, so restart the window on every mode change
        self.trap.reset()

    # -- perception ----------------------------------------------------------
    def _scores(self, pose: Pose, t: float = 0.0) -> ScoreGrid:
        cfg = self.cfg
        frame = observe_frame(self.ctx.map, self.ctx.target, cfg.layout, pose, cfg.embedder, self.rng)
        delay = cfg.familiarity.delay
        g = score_frame(frame, cfg.nav_db, cfg.target_db, self.fam, update=delay <= 0)
        if self.fam is not None and delay > 0:
            self._pending.append((t, [ob.embedding for ob in frame]))
            while self._pending and t - self._pending[0][0] >= delay - 1e-9:
                for e in self._pending.popleft()[1]:
                    familiarity_query_update(e, self.fam)
        if cfg.no_familiarity:
            g.familiarity[:] = FROZEN_FAMILIARITY
        return g

    def _scan(self, heading: float, recovery_from):
        """Look-around: score the center column at every sampled heading from the current pose."""
        from .decision import look_around

        cfg = self.cfg
        mix = cfg.decision.mixer
        x, y = self._pose.xy
        m = self.ctx.map
        layout = cfg.layout
        if cfg.scan_range is not None:
            layout = replace(layout, far_range=cfg.scan_range)

        def scorer(theta: float) -> float:
            sectors = slice_fov(layout, Pose(x, y, theta))
            near, far = sectors[C], sectors[3 + C]
            hits = raycast_fan(m, (x, y), near.ray_angles(RAYS_PER_TILE), layout.far_range)
            navs, fams, stds = [], [], []
            for s in (near, far):
                g = tile_geometry(m, self.ctx.target, s, hits, cfg.embedder.target_size,
                                  cfg.embedder.block_size if cfg.embedder.place_weight > 0 else None)
                e = cfg.embedder.embed(g, self.rng)
                navs.append(correlate(e, cfg.nav_db))
                stds.append(g.std)
                if self.fam is None:
                    fams.append(FROZEN_FAMILIARITY)
                else:
                    fams.append(max(self.fam.query(e)[0], 0.0))
            if min(stds) < mix.std_floor or navs[0] <= 0:
                return -1.0
            if navs[1] <= 0:
                return navs[1]
            # open headings: navigability blended with novelty
            b = cfg.decision.look.familiarity_blend
            return (1.0 - b) * navs[1] + b * (1.0 - fams[1])

        cands, raw = look_around(scorer, cfg.decision.look, heading, recovery_from)
        self.last_scan = (cands, raw)
        return cands

    def look_around_at(self, pose: Pose, recovery_from: float | None = None):
        """Run the look-around scan from ``pose`` (after :meth:`reset`); returns ranked candidates."""
        self._pose = pose
        return self._scan(pose.heading, recovery_from)

    # -- control -------------------------------------------------------------
    def __call__(self, obs: Observation) -> MotionCommand:
        self._pose = obs.pose
        scores = self._scores(obs.pose, obs.t)
        self.last_scores = scores
        self.trap.push(obs.t, obs.pose.x, obs.pose.y, obs.halted)
        inp = StepInputs(
            t=obs.t,
            heading=obs.pose.heading,
            scores=scores,
            trapped=self.trap.trapped(obs.t) if self.nav.mode in (NavMode.NAVIGATE, NavMode.TARGET_LOCK) else False,
            halted=obs.halted,
            column_offsets=self._col_offsets,
        )
        mode, cmd = self.nav.step(inp)
        self.trajectory_modes.append(mode)
        if mode is NavMode.FAILED:
            raise Stuck("no navigable heading after repeated look-arounds")
        return cmd


def vl_explore_policy(cfg: VlExploreConfig | None = None) -> VlExplore:
    return VlExplore(cfg)
