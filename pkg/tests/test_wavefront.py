import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridnav.fixtures import corridor
from gridnav.wavefront import (
    ArrivalDistribution,
    CFLError,
    WaveField,
    WaveParams,
    apply_drain,
    discrete_energy,
    drain_factor,
    first_contact,
    init_field,
    laplacian,
    masked_laplacian,
    run_wavefront,
    step_wave,
)
from gridnav.worldmap import GridMap


def open_field(psi, alpha=0.25):
    k = np.ones_like(psi)
    return WaveField(psi, psi.copy(), k, 0.1, 1.0, math.sqrt(alpha) * 0.1)


def test_init_normalized_and_masked():
    cells = np.zeros((30, 30), bool)
    cells[:, 12] = True
    m = GridMap(cells, 0.1)
    f = init_field(m, (1.05, 1.5), 0.5)
    assert f.total == pytest.approx(1.0, abs=1e-12)
    assert np.all(f.psi_curr[cells] == 0)
    assert np.array_equal(f.psi_curr, f.psi_prev)


def test_init_delta_limit():
    m = GridMap.empty(2.0, 2.0, 0.1)
    f = init_field(m, (1.05, 1.05), 1e-4)
    assert f.psi_curr[10, 10] == 1.0 and f.total == 1.0


def test_init_in_obstacle_rejected():
    cells = np.ones((4, 4), bool)
    with pytest.raises(ValueError):
        init_field(GridMap(cells, 0.1), (0.2, 0.2), 0.5)


def test_laplacian_examples():
    k = np.ones((8, 8))
    k[0, 0] = 0
    uniform = k.copy()
    assert np.allclose(laplacian(uniform, k), 0)
    # isolated free cell
    k2 = np.zeros((5, 5))
    k2[2, 2] = 1
    psi = np.random.default_rng(0).random((5, 5))
    assert laplacian(psi, k2)[2, 2] == 0
    # linear ramp away from walls
    ramp = np.tile(np.arange(10.0), (10, 1))
    lap = laplacian(ramp, np.ones((10, 10)))
    assert np.allclose(lap[1:-1, 1:-1], 0)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_vectorised_laplacian_matches_reference(seed):
    rng = np.random.default_rng(seed)
    k = (rng.random((9, 11)) > 0.2).astype(float)
    psi = rng.standard_normal((9, 11)) * k
    f = WaveField(psi, psi, k, 0.1)
    lap = laplacian(psi, k)
    for i in range(9):
        for j in range(11):
            if k[i, j]:
                assert lap[i, j] == pytest.approx(masked_laplacian(f, i, j), abs=1e-12)


def test_uniform_field_at_rest_unchanged():
    f = open_field(np.full((6, 6), 1 / 36))
    g = step_wave(f)
    assert np.allclose(g.psi_curr, f.psi_curr, atol=1e-15)


def test_single_impulse_hand_expansion():
    psi = np.zeros((5, 5))
    psi[2, 2] = 1.0
    g = step_wave(open_field(psi, alpha=0.5))
    # 2*1 - 1 + 0.5 * (-4) at the centre, 0.5 * 1 at each neighbour
    assert g.psi_curr[2, 2] == pytest.approx(-1.0)
    for a, b in ((1, 2), (3, 2), (2, 1), (2, 3)):
        assert g.psi_curr[a, b] == pytest.approx(0.5)
    assert g.psi_curr.sum() == pytest.approx(1.0)


def test_cfl_rejected():
    with pytest.raises(CFLError):
        WaveField(np.zeros((3, 3)), np.zeros((3, 3)), np.ones((3, 3)), 0.1, 1.0, 0.1)


def test_conservation_and_energy():
    cells = np.zeros((100, 100), bool)
    cells[40:60, 30] = True
    f = init_field(GridMap(cells, 0.1), (2.0, 5.0), 0.5)
    e0 = discrete_energy(f)
    for _ in range(2000):
        f = step_wave(f)
    assert abs(f.total - 1.0) <= 1e-9
    assert discrete_energy(f) == pytest.approx(e0, rel=1e-9)


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_step_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    k = (rng.random((12, 12)) > 0.15).astype(float)
    p1, p2 = rng.standard_normal((2, 12, 12)) * k
    q1, q2 = rng.standard_normal((2, 12, 12)) * k
    f = lambda c, p: WaveField(c, p, k, 0.1)
    lhs = step_wave(f(a * p1 + b * p2, a * q1 + b * q2)).psi_curr
    rhs = a * step_wave(f(p1, q1)).psi_curr + b * step_wave(f(p2, q2)).psi_curr
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_reflection_symmetry():
    m = GridMap.empty(4.0, 2.0, 0.1)
    f = init_field(m, (2.0, 1.0), 0.4)
    for _ in range(300):
        f = step_wave(f)
    assert np.allclose(f.psi_curr, f.psi_curr[:, ::-1], atol=1e-9)
    assert f.total == pytest.approx(1.0, abs=1e-9)


def test_drain_examples():
    factor = drain_factor((5, 5), (0.25, 0.25), 0.1, 0.1)
    assert factor[2, 2] == 0.0
    assert np.all((factor >= 0) & (factor < 1))
    psi = np.zeros((5, 5))
    psi[2, 2] = 1.0
    acc = ArrivalDistribution()
    out = apply_drain(WaveField(psi, psi.copy(), np.ones((5, 5)), 0.1), (0.25, 0.25), 0.1, acc, 0.05)
    assert out.psi_curr.sum() == 0 and acc.masses == [1.0]
    far = np.zeros((40, 40))
    far[2, 2] = 1.0
    acc2 = ArrivalDistribution()
    apply_drain(WaveField(far, far.copy(), np.ones((40, 40)), 0.1), (3.5, 3.5), 0.1, acc2, 0.05)
    assert acc2.masses[0] < 1e-12


def test_drain_matches_cellwise_oracle():
    m = GridMap.empty(3.0, 3.0, 0.1)
    f = init_field(m, (1.5, 1.5), 0.5)
    acc = ArrivalDistribution()
    out = apply_drain(f, (1.8, 1.5), 0.25, acc, 0.0)
    g = drain_factor(m, (1.8, 1.5), 0.25)
    assert np.allclose(out.psi_curr, f.psi_curr * g, atol=0)
    assert acc.masses[0] == pytest.approx(float((f.psi_curr * (1 - g)).sum()), abs=1e-15)
    with pytest.raises(ValueError):
        apply_drain(f, (1, 1), 0.0, acc, 0.0)


def test_corridor_first_contact():
    m, s, t = corridor(20.0)
    d = first_contact(m, s, t, WaveParams(resolution=None))
    assert abs(d - 20.0) <= 2 * m.resolution


def test_target_equals_source():
    m = GridMap.empty(3.0, 3.0, 0.05)
    d = first_contact(m, (1.5, 1.5), (1.5, 1.5))
    assert d <= 0.25


def test_full_run_agrees_with_cheap_first_contact():
    cells = np.zeros((40, 60), bool)
    cells[5:35, 30] = True
    m = GridMap(cells, 0.1)
    r = run_wavefront(m, (1.0, 2.0), (5.0, 2.0))
    assert r.first_contact_distance == first_contact(m, (1.0, 2.0), (5.0, 2.0))
    assert not r.truncated and r.remaining < 1e-4
    assert r.mean >= r.first_contact_distance
    assert r.arrivals.to_csv(r.speed).splitlines()[0] == "t,distance_m,mass"
