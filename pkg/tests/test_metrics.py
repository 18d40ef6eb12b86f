import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridnav.metrics import (
    EpsModel,
    FitError,
    MetricsError,
    RLCurve,
    RunRecord,
    aggregate,
    equipotential_csv,
    eps_score,
    fit_eps,
    rl_curve,
    spl,
    summary_csv,
)

PAIR = ("A", "B")


def win(p, l=10.0):
    return RunRecord(PAIR, True, p, l)


def test_spl_examples():
    assert spl([win(10.0)]) == 1.0
    assert spl([win(20.0), RunRecord.failed(PAIR, 10.0)]) == 0.25


def test_spl_rejects_bad_baseline():
    with pytest.raises(MetricsError):
        RunRecord(PAIR, True, 5.0, 0.0)
    with pytest.raises(MetricsError):
        spl([])


def test_aggregate_examples():
    st_ = aggregate([win(20.0)] * 4 + [RunRecord.failed(PAIR, 10.0)])
    assert (st_.R, st_.Lbar) == (0.8, 0.5)
    none = aggregate([RunRecord.failed(PAIR, 10.0)] * 3)
    assert none.R == 0 and none.Lbar == 0 and not none.lbar_defined
    one = aggregate([win(10.0)])
    assert (one.R, one.Lbar, one.spl) == (1.0, 1.0, 1.0)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.booleans(), st.floats(1.0, 50.0), st.floats(0.0, 200.0)), min_size=1, max_size=30))
def test_spl_equals_lbar_times_r(rows):
    recs = [RunRecord(PAIR, s, l + extra, l) if s else RunRecord.failed(PAIR, l) for s, l, extra in rows]
    a = aggregate(recs)
    assert a.spl == pytest.approx(a.Lbar * a.R, abs=1e-12)
    assert 0.0 <= a.spl <= 1.0
    assert (a.spl == 0) == (a.n_success == 0)


def test_rl_curve_examples():
    c = rl_curve([10, 20, 40], 10.0, [5, 20, math.inf])
    assert c.points == [(pytest.approx(2 / 3), 0.75), (1.0, pytest.approx((1 + 0.5 + 0.25) / 3))]
    with pytest.raises(MetricsError):
        rl_curve([], 1.0)
    with pytest.raises(MetricsError):
        rl_curve([1, 2], 1.0, [3, 2])


@given(st.lists(st.floats(1.0, 500.0), min_size=1, max_size=60), st.floats(0.5, 5.0))
def test_rl_curve_monotone(paths, l):
    c = rl_curve(paths, l)
    assert np.all(np.diff(c.R) > 0)
    assert np.all(np.diff(c.Lbar) <= 1e-12)
    assert np.all((c.R > 0) & (c.R <= 1) & (c.Lbar > 0) & (c.Lbar <= 1))


def synthetic(p2, p3, t1, n=12):
    R = np.linspace(0.1, 1.0, n)
    L = (t1 / R**p3) ** (1.0 / p2)
    return RLCurve(R, L, np.arange(n, dtype=float))


def test_fit_round_trip():
    m = fit_eps(synthetic(1.0, 1.0, 0.1))
    assert (m.p2, m.p3, m.t1) == pytest.approx((1.0, 1.0, 0.1), abs=1e-6)


@settings(max_examples=40)
@given(st.floats(0.3, 1.7), st.floats(0.01, 0.2))
def test_fit_recovers_ratio(p2, t1):
    m = fit_eps(synthetic(p2, 2.0 - p2, t1))
    assert (m.p2, m.p3, m.t1) == pytest.approx((p2, 2.0 - p2, t1), rel=1e-6)
    assert m.boundary_gap() == pytest.approx(0.0, abs=1e-9)


def test_fitted_points_score_zero_and_ideal_scores_one():
    rng = np.random.default_rng(0)
    paths = 10.0 * (1 + rng.exponential(4.0, 300))
    curve = rl_curve(paths, 10.0)
    m = fit_eps(curve)
    scores = [eps_score(m, R, L) for R, L in curve.points]
    assert np.mean(np.abs(scores)) <= 0.05
    assert eps_score(m, 1.0, 1.0) == 1.0


def test_fit_errors():
    with pytest.raises(FitError):
        fit_eps(RLCurve(np.array([0.5, 0.5, 0.5]), np.array([0.2, 0.2, 0.2]), np.zeros(3)))
    with pytest.raises(FitError):
        fit_eps(RLCurve(np.array([0.5, 1.0]), np.array([0.2, 0.1]), np.zeros(2)))


def test_full_fit_keeps_boundary():
    m = fit_eps(synthetic(1.2, 0.8, 0.05), mode="full")
    assert m.boundary_gap() == pytest.approx(0.0, abs=1e-9)
    assert eps_score(m, 1.0, 1.0) == pytest.approx(1.0, abs=1e-9)


@given(st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.floats(0.0, 0.3))
def test_eps_monotone(R, L, dL):
    m = EpsModel.canonical(1.1, 0.9, 0.08)
    L2 = min(1.0, L + dL)
    assert eps_score(m, R, L2) >= eps_score(m, R, L)
    assert eps_score(m, min(1.0, R + dL), L) >= eps_score(m, R, L)
    assert 0.0 <= eps_score(m, R, L) <= 1.0


def test_csv_exports():
    a = aggregate([win(20.0)])
    text = summary_csv([("x", a, 0.5), ("y", a, None)])
    assert text.splitlines() == ["algo,R,Lbar,SPL,EPS", "x,1.000000,0.500000,0.500000,0.500000",
                                 "y,1.000000,0.500000,0.500000,"]
    grid = equipotential_csv(EpsModel.canonical(1, 1, 0.1), n=5).splitlines()
    assert grid[0] == "R,Lbar,EPS" and len(grid) == 1 + 5 * 4
