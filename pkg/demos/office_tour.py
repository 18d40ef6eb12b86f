"""
VL-Explore on the bundled office
================================

One exploration run per waypoint pair, with the look-around candidates of
the opening scan drawn as heading bars. Writes SVG overlays next to this file
(or into the directory given as the first argument).
"""
import math
import sys
from pathlib import Path

import numpy as np

from gridnav.cli import render_overlay
from gridnav.decision import NavMode
from gridnav.fixtures import OFFICE_WAYPOINTS, office_map
from gridnav.pipeline import VlExplore, vl_explore_policy
from gridnav.simkernel import RobotSpec, TrialConfig, TrialContext, run_trial
from gridnav.worldmap import Pose

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "out"
out.mkdir(parents=True, exist_ok=True)
m = office_map()
robot = RobotSpec()

# %% one run per pair
for a, b in [("SW", "NE"), ("NW", "SE"), ("C", "NW"), ("SE", "SW"), ("NE", "C")]:
    s, t = OFFICE_WAYPOINTS[a], OFFICE_WAYPOINTS[b]
    pol = vl_explore_policy()
    o = run_trial(pol, TrialConfig(Pose(*s, 0.0), t, distance_limit=100.0, seed=0), m, robot)
    modes = {k.value: pol.trajectory_modes.count(k) for k in NavMode if k in pol.trajectory_modes}
    print(f"{a:>2} -> {b:<2} {o.status.value:<18} {o.path_length:6.1f} m  straight {math.dist(s, t):4.1f} m  {modes}")

    # the opening scan, re-run from the start pose for the picture
    probe = VlExplore(pol.cfg)
    probe.reset(TrialContext(m, robot, TrialConfig(Pose(*s, 0.0), t), np.random.default_rng(0)))
    cands = probe.look_around_at(Pose(*s, 0.0))
    svg = render_overlay(m, [("vl-explore", o.trajectory)], {a: s, b: t}, candidates=(s, cands))
    (out / f"tour_{a}_{b}.svg").write_text(svg, encoding="utf-8")

print(f"overlays in {out}")
