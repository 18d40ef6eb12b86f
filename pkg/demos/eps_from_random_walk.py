"""
Fitting the EPS reference curve
===============================

Random-walk path lengths on one office pair trace an R-L curve (success
rate against normalised path efficiency as the cutoff sweeps). The
canonical EPS model is fitted to that curve and then used to score a few
hypothetical policies.
"""
import numpy as np

from gridnav.baselines import make_policy
from gridnav.fixtures import OFFICE_WAYPOINTS, office_map
from gridnav.metrics import eps_score, fit_eps, rl_curve
from gridnav.simkernel import RobotSpec, TrialConfig, run_trial
from gridnav.wavefront import first_contact
from gridnav.worldmap import Pose

m = office_map()
s, t = OFFICE_WAYPOINTS["NE"], OFFICE_WAYPOINTS["C"]
base = first_contact(m, s, t)

pool = []
for seed in range(200):
    o = run_trial(make_policy("random-walk"), TrialConfig(Pose(*s, 0.0), t, distance_limit=1000.0, seed=seed),
                  m, RobotSpec())
    pool.append(o.path_length / base if o.success else np.inf)

curve = rl_curve(pool, 1.0)
model = fit_eps(curve)
print(f"fit: p2={model.p2:.3f} p3={model.p3:.3f} t1={model.t1:.4f}")
print(f"mean |EPS| on the curve itself: {np.mean([abs(eps_score(model, R, L)) for R, L in curve.points]):.4f}")

# %% the random walk sits on EPS = 0, a perfect planner at EPS = 1
for name, R, L in [("perfect", 1.0, 1.0), ("bug-like", 1.0, 0.8), ("explorer", 0.8, 0.5), ("lost", 0.3, 0.1)]:
    print(f"{name:>9}: R={R:.2f} Lbar={L:.2f} EPS={eps_score(model, R, L):+.3f}")
