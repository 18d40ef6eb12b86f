"""Batch experiment runner, report writer and trajectory overlay renderer.

Experiment spec files use the same ``[section]`` + one-entry-per-line
format as prompt files, with ``key value`` entries:

    [experiment]
    map office            # bundled map name or path to a .pgm
    seed 0
    stride 5
    goal_radius 0.75
    [robot]
    footprint_radius 0.25
    [waypoints]
    SW 2.0 0.7
    NE 10.5 9.0
    [tasks]
    SW NE
    [algorithms]
    vl-explore 20
    random-walk 200
    [limits]
    vl-explore 100
    default 1000
    [wave]
    resolution 0.1
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import baselines
from .fixtures import OFFICE_WAYPOINTS, office_map
from .metrics import (
    MetricsError,
    RunRecord,
    aggregate,
    equipotential_csv,
    eps_score,
    fit_eps,
    rl_curve,
    summary_csv,
)
from .promptdb import PromptSyntaxError, parse_sections
from .simkernel import ConfigError, RobotSpec, Trajectory, TrialConfig, TrialStatus, run_trial
from .wavefront import WaveParams, first_contact
from .worldmap import GridMap, MapFormatError, Pose, is_free_disk, load_map

EXIT_OK, EXIT_SPEC, EXIT_RUNTIME = 0, 2, 3
VL_ALGORITHMS = ("vl-explore", "vl-explore-no-look-around", "vl-explore-no-familiarity")
ALL_ALGORITHMS = baselines.ALGORITHMS + VL_ALGORITHMS
DEFAULT_COUNTS = {"random-walk": 200, "wall-bounce": 180}
TRIAL_HEADER = ["algo", "source", "target", "seed", "status", "path_length_m", "steps"]
BASELINE_HEADER = ["source", "target", "baseline_m"]
PAIR_HEADER = ["source", "target", "algo", "n", "R", "Lbar", "SPL", "EPS"]
SPEC_SECTIONS = ("experiment", "robot", "waypoints", "tasks", "algorithms", "limits", "wave")


class SpecError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# --------------------------------------------------------------------------
# Experiment spec


@dataclass
class ExperimentSpec:
    map: str = "office"
    robot: RobotSpec = field(default_factory=RobotSpec)
    waypoints: dict[str, tuple[float, float]] = field(default_factory=dict)
    tasks: list[tuple[str, str]] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    limits: dict[str, float] = field(default_factory=lambda: {"vl-explore": 100.0, "default": 1000.0})
    seed: int = 0
    stride: int = 5
    goal_radius: float = 0.75
    wave: WaveParams = field(default_factory=WaveParams)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    def limit(self, algo: str) -> float:
        key = "vl-explore" if algo.startswith("vl-explore") else algo
        return self.limits.get(key, self.limits.get("default", 1000.0))

    def map_path(self) -> str:
        if self.map == "office" or os.path.isabs(self.map):
            return self.map
        return str(self.base_dir / self.map)


def _num(text: str, kind, where: str, problems: list) -> float | int | None:
    try:
        return kind(text)
    except ValueError:
        problems.append(f"{where}: {text!r} is not a valid {kind.__name__}")
        return None


def parse_experiment(text: str, base_dir: Path | None = None) -> ExperimentSpec:
    """Parse an experiment spec, collecting every problem before raising :class:`SpecError`."""
    problems: list[str] = []
    spec = ExperimentSpec(base_dir=base_dir or Path.cwd())
    try:
        entries = parse_sections(text, SPEC_SECTIONS)
    except PromptSyntaxError as exc:
        raise SpecError([str(exc)]) from None
    robot_kw, wave_kw = {}, {}
    robot_fields = {f.name for f in fields(RobotSpec)}
    wave_fields = {"robot_size": float, "alpha": float, "resolution": float, "sigma_drain": float,
                   "contact_rel": float}
    for section, lineno, line in entries:
        if not line:
            continue
        where = f"line {lineno}"
        parts = line.split()
        key, vals = parts[0], parts[1:]
        if section == "experiment":
            if key == "map" and len(vals) == 1:
                spec.map = vals[0]
            elif key in ("seed", "stride") and len(vals) == 1:
                v = _num(vals[0], int, where, problems)
                if v is not None:
                    setattr(spec, key, v)
            elif key == "goal_radius" and len(vals) == 1:
                v = _num(vals[0], float, where, problems)
                if v is not None:
                    spec.goal_radius = v
            else:
                problems.append(f"{where}: unknown experiment setting {line!r}")
        elif section == "robot":
            if key in robot_fields and len(vals) == 1:
                v = _num(vals[0], float, where, problems)
                if v is not None:
                    robot_kw[key] = v
            else:
                problems.append(f"{where}: unknown robot setting {line!r}")
        elif section == "waypoints":
            if len(vals) != 2:
                problems.append(f"{where}: waypoint needs 'label x y'")
                continue
            xy = [_num(v, float, where, problems) for v in vals]
            if None not in xy:
                spec.waypoints[key] = (xy[0], xy[1])
        elif section == "tasks":
            if len(parts) != 2:
                problems.append(f"{where}: task needs 'source target'")
            else:
                spec.tasks.append((parts[0], parts[1]))
        elif section == "algorithms":
            if key not in ALL_ALGORITHMS:
                problems.append(f"{where}: unknown algorithm {key!r}")
                continue
            n = DEFAULT_COUNTS.get(key, 1)
            if len(vals) == 1:
                n = _num(vals[0], int, where, problems)
            elif vals:
                problems.append(f"{where}: algorithm needs 'name [count]'")
            if n is not None:
                if n < 1:
                    problems.append(f"{where}: trial count for {key} must be >= 1")
                spec.counts[key] = n
        elif section == "limits":
            if len(vals) != 1:
                problems.append(f"{where}: limit needs 'algo meters'")
                continue
            v = _num(vals[0], float, where, problems)
            if v is not None:
                spec.limits[key] = v
        elif section == "wave":
            if key in wave_fields and len(vals) == 1:
                v = _num(vals[0], float, where, problems)
                if v is not None:
                    wave_kw[key] = v
            else:
                problems.append(f"{where}: unknown wave setting {line!r}")
    try:
        spec.robot = RobotSpec(**robot_kw)
    except ValueError as exc:
        problems.append(f"robot: {exc}")
    spec.wave = WaveParams(**{"robot_size": spec.robot.size, **wave_kw})
    if problems:
        raise SpecError(problems)
    return spec


def default_experiment() -> ExperimentSpec:
    """The bundled office experiment: five waypoint pairs, every algorithm."""
    text = (resources.files("gridnav") / "data" / "office.exp").read_text(encoding="utf-8")
    return parse_experiment(text)


@lru_cache(maxsize=8)
def _load_map_cached(path: str) -> GridMap:
    return office_map() if path == "office" else load_map(path)


def validate_experiment(spec: ExperimentSpec) -> GridMap:
    """Pre-flight: load the map and check every label and waypoint, reporting all problems at once."""
    problems = []
    try:
        m = _load_map_cached(spec.map_path())
    except (OSError, MapFormatError) as exc:
        raise SpecError([f"map {spec.map!r}: {exc}"]) from None
    for label, xy in sorted(spec.waypoints.items()):
        if not is_free_disk(m, xy, spec.robot.footprint_radius):
            problems.append(f"waypoint {label} {xy} is not collision-free for the robot footprint")
    for s, t in spec.tasks:
        for lab in (s, t):
            if lab not in spec.waypoints:
                problems.append(f"task {s} -> {t}: unknown waypoint {lab!r}")
    if not spec.tasks:
        problems.append("no tasks")
    if not spec.counts:
        problems.append("no algorithms")
    if spec.stride < 1:
        problems.append("stride must be >= 1")
    if problems:
        raise SpecError(problems)
    return m


# --------------------------------------------------------------------------
# Trials


@dataclass(frozen=True)
class TrialJob:
    algo: str
    source: str
    target: str
    index: int
    map_path: str
    source_xy: tuple[float, float]
    target_xy: tuple[float, float]
    robot: RobotSpec
    limit: float
    seed: int
    stride: int
    goal_radius: float
    no_look_around: bool = False
    no_familiarity: bool = False

    @property
    def key(self):
        return (self.source, self.target, self.algo, self.index)


def trial_heading(algo: str, index: int, count: int) -> float:
    """Start headings: evenly spread for wall bounce and VL-Explore, east for the rest."""
    if algo == "wall-bounce" or algo.startswith("vl-explore"):
        return 2 * math.pi * index / count - (2 * math.pi if 2 * index >= count else 0.0)
    return 0.0


def make_any_policy(algo: str, seed: int, heading: float, no_look_around=False, no_familiarity=False):
    if algo.startswith("vl-explore"):
        from .pipeline import VlExploreConfig, vl_explore_policy

        cfg = VlExploreConfig(no_look_around=no_look_around or algo == "vl-explore-no-look-around",
                              no_familiarity=no_familiarity or algo == "vl-explore-no-familiarity")
        return vl_explore_policy(cfg)
    return baselines.make_policy(algo, seed=seed, heading=heading)


def execute(job: TrialJob, count: int = 1):
    m = _load_map_cached(job.map_path)
    heading = trial_heading(job.algo, job.index, count)
    policy = make_any_policy(job.algo, job.seed, heading, job.no_look_around, job.no_familiarity)
    cfg = TrialConfig(Pose(*job.source_xy, heading), job.target_xy, distance_limit=job.limit,
                      seed=job.seed, goal_radius=job.goal_radius, stride=job.stride)
    return run_trial(policy, cfg, m, job.robot)


def _execute_row(args):
    job, count = args
    o = execute(job, count)
    row = [job.algo, job.source, job.target, str(job.seed), o.status.value, f"{o.path_length:.6f}",
           str(len(o.trajectory) - 1)]
    return job.key, row, o.trajectory


def build_jobs(spec: ExperimentSpec, algos=None, no_look_around=False, no_familiarity=False):
    jobs = []
    for s, t in spec.tasks:
        for algo, count in sorted(spec.counts.items()):
            if algos and algo not in algos:
                continue
            for i in range(count):
                job = TrialJob(algo, s, t, i, spec.map_path(), spec.waypoints[s], spec.waypoints[t],
                               spec.robot, spec.limit(algo), spec.seed + i, spec.stride, spec.goal_radius,
                               no_look_around, no_familiarity)
                jobs.append((job, count))
    return jobs


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class ReportBundle:
    trials_csv: str
    baselines_csv: str
    pairs_csv: str
    summary_csv: str
    overlays: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in (("trials.csv", self.trials_csv), ("baselines.csv", self.baselines_csv),
                           ("pairs.csv", self.pairs_csv), ("summary.csv", self.summary_csv)):
            p = out_dir / name
            p.write_text(text, encoding="utf-8")
            written.append(p)
        for name, svg in sorted(self.overlays.items()):
            p = out_dir / name
            p.write_text(svg, encoding="utf-8")
            written.append(p)
        return written


def run_experiment(spec: ExperimentSpec, workers: int = 1, algos=None, no_look_around=False,
                   no_familiarity=False, overlays: bool = True) -> ReportBundle:
    m = validate_experiment(spec)
    base_rows = []
    for s, t in spec.tasks:
        d = first_contact(m, spec.waypoints[s], spec.waypoints[t], spec.wave)
        base_rows.append([s, t, f"{d:.6f}"])
    jobs = build_jobs(spec, algos, no_look_around, no_familiarity)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_execute_row, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        results = [_execute_row(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    trials = _table(TRIAL_HEADER, [r[1] for r in results])
    baselines_text = _table(BASELINE_HEADER, base_rows)
    pairs, summary = summarize(trials, baselines_text)
    svgs = {}
    if overlays:
        for s, t in spec.tasks:
            # first trial of each algorithm on the pair
            trajs = [(k[2], tr) for k, _, tr in results if k[0] == s and k[1] == t and k[3] == 0]
            pts = {s: spec.waypoints[s], t: spec.waypoints[t]}
            svgs[f"overlay_{s}_{t}.svg"] = render_overlay(m, trajs, waypoints=pts)
    return ReportBundle(trials, baselines_text, pairs, summary, svgs)


# --------------------------------------------------------------------------
# Metrics from CSV


def read_trials(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(TRIAL_HEADER) - set(rows[0]):
        raise MetricsError(f"trial CSV is missing columns {sorted(set(TRIAL_HEADER) - set(rows[0]))}")
    return rows


def read_baselines(text: str) -> dict[tuple[str, str], float]:
    return {(r["source"], r["target"]): float(r["baseline_m"]) for r in csv.DictReader(io.StringIO(text))}


def records_from_rows(rows, base: dict) -> dict[str, list[RunRecord]]:
    """RunRecords grouped by algorithm, in row order."""
    out: dict[str, list[RunRecord]] = {}
    for r in rows:
        pair = (r["source"], r["target"])
        if pair not in base:
            raise MetricsError(f"no baseline for pair {pair}")
        ok = r["status"] == TrialStatus.SUCCESS.value
        rec = RunRecord(pair, True, float(r["path_length_m"]), base[pair]) if ok else RunRecord.failed(pair, base[pair])
        out.setdefault(r["algo"], []).append(rec)
    return out


def eps_model_from_rows(rows, base: dict, algo: str = "random-walk", mode: str = "canonical"):
    """Fit the EPS model on the pair-normalized path pool of ``algo`` (None when too few points)."""
    pool = []
    for r in rows:
        if r["algo"] != algo:
            continue
        b = base[(r["source"], r["target"])]
        ok = r["status"] == TrialStatus.SUCCESS.value
        pool.append(float(r["path_length_m"]) / b if ok else math.inf)
    if not pool:
        return None, None
    curve = rl_curve(pool, 1.0)
    if len(curve) < 2:
        return None, curve
    return fit_eps(curve, mode), curve


def summarize(trials_text: str, baselines_text: str) -> tuple[str, str]:
    rows = read_trials(trials_text)
    base = read_baselines(baselines_text)
    model, _ = eps_model_from_rows(rows, base)

    def eps_of(st):
        if model is None or not st.lbar_defined:
            return None
        return eps_score(model, st.R, st.Lbar)

    pair_rows = []
    by_pair: dict[tuple, list] = {}
    for r in rows:
        by_pair.setdefault((r["source"], r["target"]), []).append(r)
    for pair in sorted(by_pair):
        for algo, recs in sorted(records_from_rows(by_pair[pair], base).items()):
            st = aggregate(recs)
            e = eps_of(st)
            pair_rows.append([*pair, algo, str(st.n), f"{st.R:.6f}", f"{st.Lbar:.6f}", f"{st.spl:.6f}",
                              "" if e is None else f"{e:.6f}"])
    overall = [(algo, st, eps_of(st)) for algo, st in
               ((a, aggregate(recs)) for a, recs in sorted(records_from_rows(rows, base).items()))]
    return _table(PAIR_HEADER, pair_rows), summary_csv(overall)


# --------------------------------------------------------------------------
# Overlay rendering

PALETTE = {
    "random-walk": "#9e9e9e", "wall-bounce": "#795548",
    "bug0-l": "#e53935", "bug0-r": "#ef9a9a", "bug1-l": "#43a047", "bug1-r": "#a5d6a7",
    "bug2-l": "#1e88e5", "bug2-r": "#90caf9",
    "vl-explore": "#8e24aa", "vl-explore-no-look-around": "#fb8c00", "vl-explore-no-familiarity": "#00897b",
}


def render_overlay(m: GridMap, trajectories, waypoints=None, candidates=None, scale: float = 50.0) -> str:
    """SVG of the occupancy raster, one polyline per (label, trajectory), waypoints and heading bars.

    ``candidates`` is an optional ``(origin_xy, [HeadingCandidate, ...])`` pair drawn as
    labelled bars C0, C1, ... whose length follows the candidate score.
    """
    xmin, xmax, ymin, ymax = m.extent
    W, H = (xmax - xmin) * scale, (ymax - ymin) * scale

    def px(x, y):
        return (x - xmin) * scale, (ymax - y) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.1f}" height="{H:.1f}" '
           f'viewBox="0 0 {W:.1f} {H:.1f}">',
           f'<rect x="0" y="0" width="{W:.1f}" height="{H:.1f}" fill="#ffffff"/>',
           '<g id="map" fill="#303030">']
    cs = m.resolution * scale
    occ = np.asarray(m.cells, dtype=bool)
    for j in range(m.height):
        row = occ[j]
        i = 0
        while i < m.width:
            if not row[i]:
                i += 1
                continue
            k = i
            while k < m.width and row[k]:
                k += 1
            x0, y0 = px(xmin + i * m.resolution, ymin + (j + 1) * m.resolution)
            out.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{(k - i) * cs:.2f}" height="{cs:.2f}"/>')
            i = k
    out.append("</g>")
    for label, traj in trajectories:
        xy = traj.xy() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float).reshape(-1, 2)
        if len(xy) == 0:
            continue
        pts = " ".join("{:.2f},{:.2f}".format(*px(x, y)) for x, y in xy)
        color = PALETTE.get(label, "#000000")
        out.append(f'<polyline class="trajectory" data-label="{escape(label)}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
    for label, (x, y) in sorted((waypoints or {}).items()):
        cx, cy = px(x, y)
        out.append(f'<circle class="waypoint" cx="{cx:.2f}" cy="{cy:.2f}" r="6" fill="#fdd835" stroke="#000"/>')
        out.append(f'<text x="{cx + 8:.2f}" y="{cy - 8:.2f}" font-size="14">{escape(label)}</text>')
    if candidates:
        (ox, oy), cands = candidates
        cx, cy = px(ox, oy)
        for n, c in enumerate(cands):
            length = scale * (0.5 + max(c.score, 0.0))
            ex, ey = cx + length * math.cos(c.heading), cy - length * math.sin(c.heading)
            out.append(f'<line class="candidate" x1="{cx:.2f}" y1="{cy:.2f}" x2="{ex:.2f}" y2="{ey:.2f}" '
                       f'stroke="#1565c0" stroke-width="4"/>')
            out.append(f'<text class="candidate-label" x="{ex:.2f}" y="{ey:.2f}" font-size="14">C{n}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Command line


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridnav", description="Grid-world navigation experiments.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--map", default=None, help="bundled map name ('office') or .pgm path")
        sp.add_argument("--out-dir", default="out", help="directory for CSV and SVG outputs")
        sp.add_argument("--stride", type=int, default=None, help="trajectory stride for path lengths")

    def vl_flags(sp):
        sp.add_argument("--no-look-around", action="store_true", help="disable look-around (trap means failure)")
        sp.add_argument("--no-familiarity", action="store_true", help="freeze familiarity scores at 0.5")

    r = sub.add_parser("run", help="one trial with verbose logs")
    common(r)
    vl_flags(r)
    r.add_argument("--algo", required=True, choices=ALL_ALGORITHMS)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--from", dest="source", default="SW", help="waypoint label or 'x,y'")
    r.add_argument("--to", dest="target", default="NE", help="waypoint label or 'x,y'")
    r.add_argument("--heading", type=float, default=None, help="start heading in radians")
    r.add_argument("--limit", type=float, default=None, help="distance limit in meters")

    b = sub.add_parser("batch", help="run a full experiment spec")
    common(b)
    vl_flags(b)
    b.add_argument("--spec", default=None, help="experiment spec file (default: bundled office experiment)")
    b.add_argument("--algo", action="append", default=None, help="restrict to these algorithms")
    b.add_argument("--seed", type=int, default=None, help="override the spec's base seed")
    b.add_argument("--workers", type=int, default=1)

    mt = sub.add_parser("metrics", help="recompute summaries from trial and baseline CSVs")
    mt.add_argument("trials")
    mt.add_argument("baselines")
    mt.add_argument("--out-dir", default="out")

    rd = sub.add_parser("render", help="overlay trajectory CSVs on a map")
    common(rd)
    rd.add_argument("trajectories", nargs="*", help="trajectory CSVs (t,x,y,heading); label from file stem")

    fe = sub.add_parser("fit-eps", help="fit the EPS model from a trial CSV")
    fe.add_argument("trials")
    fe.add_argument("baselines")
    fe.add_argument("--algo", default="random-walk")
    fe.add_argument("--mode", default="canonical", choices=("canonical", "full"))
    fe.add_argument("--out-dir", default="out")
    return p


def _point(text: str, waypoints: dict) -> tuple[float, float]:
    if text in waypoints:
        return waypoints[text]
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise SpecError([f"{text!r} is neither a waypoint label nor 'x,y'"]) from None
    return (x, y)


def _cmd_run(a) -> int:
    from .pipeline import VlExplore

    spec = default_experiment()
    if a.map:
        spec.map = a.map
    try:
        m = _load_map_cached(spec.map_path())
    except (OSError, MapFormatError) as exc:
        raise SpecError([f"map {spec.map!r}: {exc}"]) from None
    s, t = _point(a.source, spec.waypoints), _point(a.target, spec.waypoints)
    heading = a.heading if a.heading is not None else 0.0
    limit = a.limit if a.limit is not None else spec.limit(a.algo)
    policy = make_any_policy(a.algo, a.seed, heading, a.no_look_around, a.no_familiarity)
    cfg = TrialConfig(Pose(*s, heading), t, distance_limit=limit, seed=a.seed, stride=a.stride or spec.stride)
    o = run_trial(policy, cfg, m, spec.robot)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.csv").write_text(o.trajectory.to_csv(), encoding="utf-8")
    if isinstance(policy, VlExplore):
        from .decision import decision_log_csv

        (out / "decisions.csv").write_text(decision_log_csv(policy.nav.log), encoding="utf-8")
    (out / "overlay.svg").write_text(render_overlay(m, [(a.algo, o.trajectory)], {"S": s, "T": t}), encoding="utf-8")
    print(_table(TRIAL_HEADER, [[a.algo, a.source, a.target, a.seed, o.status.value, f"{o.path_length:.6f}",
                                 len(o.trajectory) - 1]]), end="")
    return EXIT_OK


def _cmd_batch(a) -> int:
    if a.spec:
        path = Path(a.spec)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise SpecError([f"cannot read spec {a.spec}: {exc}"]) from None
        spec = parse_experiment(text, path.parent)
    else:
        spec = default_experiment()
    if a.map:
        spec.map = a.map
    if a.seed is not None:
        spec.seed = a.seed
    if a.stride is not None:
        spec.stride = a.stride
    if a.algo:
        unknown = [x for x in a.algo if x not in ALL_ALGORITHMS]
        if unknown:
            raise SpecError([f"unknown algorithm {x!r}" for x in unknown])
        spec.counts = {k: spec.counts.get(k, DEFAULT_COUNTS.get(k, 1)) for k in a.algo}
    bundle = run_experiment(spec, a.workers, None, a.no_look_around, a.no_familiarity)
    for p in bundle.write(Path(a.out_dir)):
        print(p)
    sys.stdout.write(bundle.summary_csv)
    return EXIT_OK


def _cmd_metrics(a) -> int:
    pairs, summary = summarize(Path(a.trials).read_text(encoding="utf-8"),
                               Path(a.baselines).read_text(encoding="utf-8"))
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "pairs.csv").write_text(pairs, encoding="utf-8")
    (out / "summary.csv").write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)
    return EXIT_OK


def _cmd_render(a) -> int:
    m = _load_map_cached(a.map if a.map and a.map != "office" else "office")
    trajs = []
    for f in a.trajectories:
        traj = Trajectory.from_csv(Path(f).read_text(encoding="utf-8"))
        if a.stride and a.stride > 1 and len(traj):
            xy = traj.xy()
            idx = sorted(set(range(0, len(xy), a.stride)) | {len(xy) - 1})
            traj = xy[idx]
        trajs.append((Path(f).stem, traj))
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / "overlay.svg"
    wp = OFFICE_WAYPOINTS if not a.map or a.map == "office" else None
    p.write_text(render_overlay(m, trajs, wp), encoding="utf-8")
    print(p)
    return EXIT_OK


def _cmd_fit_eps(a) -> int:
    rows = read_trials(Path(a.trials).read_text(encoding="utf-8"))
    base = read_baselines(Path(a.baselines).read_text(encoding="utf-8"))
    model, curve = eps_model_from_rows(rows, base, a.algo, a.mode)
    if model is None:
        raise MetricsError(f"not enough {a.algo} trials to trace an R-L curve")
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rl_curve.csv").write_text(
        _table(["R", "Lbar", "cutoff"], [[f"{r:.6f}", f"{l:.6f}", f"{c:.6f}"]
                                         for r, l, c in zip(curve.R, curve.Lbar, curve.cutoffs)]), encoding="utf-8")
    (out / "equipotential.csv").write_text(equipotential_csv(model), encoding="utf-8")
    print("H =")
    for row in model.H:
        print("  " + " ".join(f"{v: .9f}" for v in row))
    print(f"p2={model.p2:.9f} p3={model.p3:.9f} t1={model.t1:.9f}")
    return EXIT_OK


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    handlers = {"run": _cmd_run, "batch": _cmd_batch, "metrics": _cmd_metrics, "render": _cmd_render,
                "fit-eps": _cmd_fit_eps}
    try:
        return handlers[a.cmd](a)
    except (SpecError, ConfigError, PromptSyntaxError) as exc:
        problems = exc.problems if isinstance(exc, SpecError) else [str(exc)]
        for msg in problems:
            print(f"spec error: {msg}", file=sys.stderr)
        return EXIT_SPEC
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
