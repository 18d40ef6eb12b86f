import csv
import io
import math

import pytest

from gridnav.cli import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_SPEC,
    SpecError,
    main,
    parse_experiment,
    read_baselines,
    read_trials,
    records_from_rows,
    render_overlay,
    run_experiment,
    summarize,
    trial_heading,
    validate_experiment,
)
from gridnav.decision import HeadingCandidate
from gridnav.metrics import aggregate
from gridnav.worldmap import GridMap, save_map

SPEC = """\
[experiment]
map {map}
seed 3
stride 1
goal_radius 0.3
[waypoints]
A 1.0 2.5
B 9.0 2.5
C 5.0 4.0
[tasks]
A B
C A
[algorithms]
bug0-l
bug2-r
random-walk 3
[limits]
default 60
"""


@pytest.fixture()
def open_map(tmp_path):
    return save_map(GridMap.empty(10, 5, 0.1), tmp_path / "open.pgm")


def spec_text(path):
    return SPEC.format(map=path.name)


def test_parse_spec(open_map):
    spec = parse_experiment(spec_text(open_map), open_map.parent)
    assert spec.seed == 3 and spec.stride == 1
    assert spec.tasks == [("A", "B"), ("C", "A")]
    assert spec.counts == {"bug0-l": 1, "bug2-r": 1, "random-walk": 3}
    assert spec.limit("bug0-l") == 60 and spec.limit("vl-explore") == 100
    validate_experiment(spec)


def test_parse_reports_every_problem():
    bad = "[experiment]\nseed x\nfoo 1\n[waypoints]\nA 1\n[algorithms]\nteleport 3\nbug0-l 0\n"
    with pytest.raises(SpecError) as e:
        parse_experiment(bad)
    assert len(e.value.problems) == 5


def test_preflight_reports_every_problem(open_map):
    text = spec_text(open_map).replace("C 5.0 4.0", "C 0.1 0.1").replace("C A", "C Z")
    spec = parse_experiment(text, open_map.parent)
    with pytest.raises(SpecError) as e:
        validate_experiment(spec)
    msgs = " ".join(e.value.problems)
    assert "waypoint C" in msgs and "'Z'" in msgs


def test_minimal_bug0_run(open_map):
    text = "[experiment]\nmap open.pgm\ngoal_radius 0.3\nstride 1\n[waypoints]\nA 1 2.5\nB 9 2.5\n" \
           "[tasks]\nA B\n[algorithms]\nbug0-l\n"
    bundle = run_experiment(parse_experiment(text, open_map.parent))
    rows = read_trials(bundle.trials_csv)
    assert len(rows) == 1 and rows[0]["status"] == "Success"
    assert float(rows[0]["path_length_m"]) == pytest.approx(8.0 - 0.3, abs=0.2)


def test_every_trial_once_and_pairs_recompute(open_map):
    spec = parse_experiment(spec_text(open_map), open_map.parent)
    bundle = run_experiment(spec)
    rows = read_trials(bundle.trials_csv)
    assert len(rows) == 2 * (1 + 1 + 3)
    keys = {(r["source"], r["target"], r["algo"], r["seed"]) for r in rows}
    assert len(keys) == len(rows)
    base = read_baselines(bundle.baselines_csv)
    for p in csv.DictReader(io.StringIO(bundle.pairs_csv)):
        mine = [r for r in rows if (r["source"], r["target"], r["algo"]) == (p["source"], p["target"], p["algo"])]
        st = aggregate(records_from_rows(mine, base)[p["algo"]])
        assert float(p["R"]) == pytest.approx(st.R, abs=1e-6)
        assert float(p["Lbar"]) == pytest.approx(st.Lbar, abs=1e-6)
        assert float(p["SPL"]) == pytest.approx(st.spl, abs=1e-6)
    assert summarize(bundle.trials_csv, bundle.baselines_csv) == (bundle.pairs_csv, bundle.summary_csv)


def test_batch_is_byte_identical(open_map, tmp_path):
    spec_file = tmp_path / "exp.spec"
    spec_file.write_text(spec_text(open_map))
    outs = []
    for k, workers in enumerate((1, 2)):
        out = tmp_path / f"out{k}"
        assert main(["batch", "--spec", str(spec_file), "--out-dir", str(out), "--workers", str(workers)]) == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outs[0] == outs[1]
    assert {"trials.csv", "baselines.csv", "pairs.csv", "summary.csv"} <= set(outs[0])


def test_exit_codes(open_map, tmp_path, capsys):
    bad = tmp_path / "bad.spec"
    bad.write_text("[waypoints]\nA 1\n")
    assert main(["batch", "--spec", str(bad), "--out-dir", str(tmp_path / "o")]) == EXIT_SPEC
    assert "spec error" in capsys.readouterr().err
    assert main(["batch", "--spec", str(tmp_path / "missing.spec")]) == EXIT_SPEC
    trials = tmp_path / "t.csv"
    trials.write_text("algo,source\nx,y\n")
    base = tmp_path / "b.csv"
    base.write_text("source,target,baseline_m\n")
    assert main(["metrics", str(trials), str(base), "--out-dir", str(tmp_path / "m")]) == EXIT_RUNTIME


def test_run_writes_trajectory(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--algo", "bug2-l", "--from", "NE", "--to", "C", "--out-dir", str(out)]) == EXIT_OK
    assert (out / "trajectory.csv").read_text().startswith("t,x,y,heading")
    assert "bug2-l" in capsys.readouterr().out


def test_metrics_and_fit_eps_from_batch(open_map, tmp_path):
    spec = parse_experiment(spec_text(open_map).replace("random-walk 3", "random-walk 12"), open_map.parent)
    bundle = run_experiment(spec, overlays=False)
    out = tmp_path / "b"
    bundle.write(out)
    assert main(["metrics", str(out / "trials.csv"), str(out / "baselines.csv"), "--out-dir", str(out / "m")]) == 0
    assert (out / "m" / "summary.csv").read_text() == bundle.summary_csv
    code = main(["fit-eps", str(out / "trials.csv"), str(out / "baselines.csv"), "--out-dir", str(out / "e")])
    assert code == EXIT_OK
    assert (out / "e" / "equipotential.csv").exists()


def test_render_counts():
    m = GridMap.empty(4, 3, 0.1)
    empty = render_overlay(m, [])
    assert "<polyline" not in empty and "<svg" in empty
    one = render_overlay(m, [("bug0-l", [(0.5, 0.5), (3.5, 0.5)])])
    assert one.count("<polyline") == 1
    assert one.split('points="')[1].split('"')[0].count(",") == 2
    cands = [HeadingCandidate(h, 0.5, 0.3) for h in (0.0, 2.0, -2.0)]
    three = render_overlay(m, [], candidates=((2.0, 1.5), cands))
    assert three.count('class="candidate"') == 3
    assert all(f">C{i}<" in three for i in range(3))


def test_trial_headings_spread():
    hs = [trial_heading("wall-bounce", i, 180) for i in range(180)]
    assert all(-math.pi <= h < math.pi for h in hs)
    assert len({round(h, 9) for h in hs}) == 180
    assert trial_heading("bug1-l", 5, 10) == 0.0


def test_run_output_renders(tmp_path):
    run = tmp_path / "run"
    assert main(["run", "--algo", "vl-explore", "--from", "NE", "--to", "C", "--out-dir", str(run)]) == EXIT_OK
    assert (run / "decisions.csv").exists()
    assert main(["render", str(run / "trajectory.csv"), "--out-dir", str(tmp_path / "svg")]) == EXIT_OK
    svg = (tmp_path / "svg" / "overlay.svg").read_text()
    assert svg.count("<polyline") == 1 and 'data-label="trajectory"' in svg
