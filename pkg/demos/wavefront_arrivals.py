"""
Wave-front travel distance estimate
===================================

Propagates the wave from SW on the office map, drains it at NE, and
prints the arrival distribution as a coarse histogram next to the
random-walk path lengths for the same pair.
"""
import numpy as np

from gridnav.baselines import make_policy
from gridnav.fixtures import OFFICE_WAYPOINTS, office_map
from gridnav.simkernel import RobotSpec, TrialConfig, run_trial
from gridnav.wavefront import WaveParams, first_contact, run_wavefront
from gridnav.worldmap import Pose

m = office_map()
s, t = OFFICE_WAYPOINTS["SW"], OFFICE_WAYPOINTS["NE"]

# %% first contact is the cheap baseline used to normalise path lengths
print(f"first contact {first_contact(m, s, t):.2f} m")

# %% full drained run, cut at 1000 m of travel
w = run_wavefront(m, s, t, WaveParams(max_steps=20_010))
d = w.speed * np.asarray(w.arrivals.times)
mass = np.asarray(w.arrivals.masses)
print(f"drained {mass.sum():.3f} of the mass within {d[-1]:.0f} m, mean {w.mean:.1f} m")

# %% random walk under the same cutoff
robot = RobotSpec()
paths = []
for seed in range(100):
    o = run_trial(make_policy("random-walk"), TrialConfig(Pose(*s, 0.0), t, distance_limit=1000.0, seed=seed), m, robot)
    if o.success:
        paths.append(o.path_length)
paths = np.asarray(paths)
print(f"random walk {len(paths)}/100 arrive, mean {paths.mean():.1f} m")

# %% side by side histogram, 100 m bins
edges = np.arange(0, 1001, 100)
wave_h, _ = np.histogram(d, edges, weights=mass)
rw_h, _ = np.histogram(paths, edges)
rw_h = rw_h / 100
print(" bin (m)     wave   random walk")
for lo, a, b in zip(edges[:-1], wave_h, rw_h):
    print(f"{lo:4.0f}-{lo + 100:<5.0f} {a:6.3f}  {b:6.3f}  {'#' * int(60 * a):<20} {'*' * int(60 * b)}")
