import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridnav.perception import (
    RAYS_PER_TILE,
    SceneEmbedder,
    TileLayout,
    observe_frame,
    observe_tile,
    tile_geometry,
    slice_fov,
)
from gridnav.pipeline import default_stack
from gridnav.worldmap import GridMap, Pose, raycast_fan


@pytest.fixture(scope="module")
def embedder():
    emb, _, _ = default_stack(noise_std=0.0, place_weight=0.0)
    return emb


def test_sectors_without_overlap_are_thirds():
    secs = slice_fov(TileLayout(overlap_fraction=0.0), Pose(0, 0, 0))
    assert [s.name for s in secs] == ["NEAR_L", "NEAR_C", "NEAR_R", "FAR_L", "FAR_C", "FAR_R"]
    for s in secs:
        assert s.width == pytest.approx(math.pi / 6)
    assert secs[0].a0 == pytest.approx(secs[1].a1)
    assert secs[3].r0 == secs[0].r1


def test_overlap_shares_twenty_percent():
    lay = TileLayout(overlap_fraction=0.2)
    secs = slice_fov(lay, Pose(0, 0, 0))
    w = lay.column_width
    # L/C and C/R boundaries overlap by 0.2 of a tile width
    assert secs[1].a1 - secs[0].a0 == pytest.approx(0.2 * w)
    assert secs[2].a1 - secs[1].a0 == pytest.approx(0.2 * w)
    assert secs[0].a1 == pytest.approx(math.pi / 4) and secs[2].a0 == pytest.approx(-math.pi / 4)
    assert secs[3].r0 == pytest.approx(lay.near_range * 0.8)


def test_sectors_rotate_with_heading():
    lay = TileLayout()
    a = slice_fov(lay, Pose(1, 2, 0.0))
    b = slice_fov(lay, Pose(1, 2, math.pi / 2))
    for s, t in zip(a, b):
        assert (t.a0 - s.a0, t.a1 - s.a1) == pytest.approx((math.pi / 2, math.pi / 2))


def test_layout_validation():
    with pytest.raises(ValueError):
        TileLayout(overlap_fraction=0.6)
    with pytest.raises(ValueError):
        TileLayout(near_range=3.0, far_range=2.0)


def test_free_sector_is_floor(embedder):
    m = GridMap.empty(10, 10, 0.05)
    s = slice_fov(TileLayout(), Pose(5, 5, 0))[4]
    ob = observe_tile(m, None, s, embedder)
    assert np.array_equal(ob.embedding, embedder.e_floor / np.linalg.norm(embedder.e_floor))
    assert ob.geometry.f_free == pytest.approx(1.0)


def test_visible_target_dominates(embedder):
    m = GridMap.empty(10, 10, 0.05)
    s = slice_fov(TileLayout(), Pose(5, 5, 0))[4]
    ob = observe_tile(m, (6.4, 5.0), s, embedder)
    protos = np.stack([embedder.e_floor, embedder.e_obstacle, embedder.e_target])
    coef = np.linalg.lstsq(protos.T, ob.embedding, rcond=None)[0]
    assert int(np.argmax(coef)) == 2
    g = ob.geometry
    assert 0 < g.f_free + g.f_obst < 1  # floor behind the target is hidden


def test_occluded_target_not_seen(embedder):
    cells = np.zeros((200, 200), bool)
    cells[:, 118:120] = True  # wall at x = 5.9
    m = GridMap(cells, 0.05)
    s = slice_fov(TileLayout(), Pose(5, 5, 0))[4]
    assert observe_tile(m, (6.4, 5.0), s, embedder).geometry.v_target == 0.0


def test_flat_wall_is_feature_poor(embedder):
    cells = np.zeros((200, 200), bool)
    cells[:, 110:] = True  # wall face at x = 5.5, 0.5 m ahead
    m = GridMap(cells, 0.05)
    far_c = slice_fov(TileLayout(), Pose(5, 5, 0))[4]
    ob = observe_tile(m, None, far_c, embedder)
    assert ob.std_dev < 0.05
    assert ob.geometry.f_obst == pytest.approx(1.0)
    # a wall half way through the band reads as textured
    cells2 = np.zeros((200, 200), bool)
    cells2[:, 128:] = True
    ob2 = observe_tile(GridMap(cells2, 0.05), None, far_c, embedder)
    assert ob2.std_dev > 0.1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-math.pi, math.pi))
def test_fractions_sum_to_one(seed, heading):
    rng = np.random.default_rng(seed)
    m = GridMap(rng.random((60, 60)) < 0.05, 0.05)
    x, y = rng.uniform(0.2, 2.8, 2)
    for s in slice_fov(TileLayout(), Pose(x, y, heading)):
        g = tile_geometry(m, None, s, raycast_fan(m, s.origin, s.ray_angles(), s.r1))
        assert g.f_free + g.f_obst == pytest.approx(1.0, abs=1e-12)
        assert 0 <= g.f_free <= 1 and 0 <= g.std <= 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-20, 20), st.integers(-20, 20))
def test_translation_equivariance(seed, di, dj):
    emb, _, _ = default_stack(noise_std=0.0, place_weight=0.6)
    rng = np.random.default_rng(seed)
    cells = rng.random((60, 60)) < 0.05
    cells[27:34, 27:34] = False
    shift = (di * 0.05, dj * 0.05)
    a = GridMap(cells, 0.05)
    b = GridMap(cells, 0.05, shift)
    pose = Pose(1.512, 1.537, float(rng.uniform(-math.pi, math.pi)))
    target = (2.0, 1.7)
    fa = observe_frame(a, target, TileLayout(), pose, emb)
    fb = observe_frame(b, (target[0] + shift[0], target[1] + shift[1]), TileLayout(),
                       Pose(pose.x + shift[0], pose.y + shift[1], pose.heading), emb)
    for oa, ob in zip(fa, fb):
        assert np.allclose(oa.embedding, ob.embedding, atol=1e-9)
        assert oa.std_dev == pytest.approx(ob.std_dev, abs=1e-9)


def test_noise_free_observation_is_pure(embedder):
    m = GridMap.empty(6, 6, 0.05)
    frame = lambda: observe_frame(m, (4, 3), TileLayout(), Pose(3, 3, 0.3), embedder, np.random.default_rng(1))
    assert all(np.array_equal(a.embedding, b.embedding) for a, b in zip(frame(), frame()))


def test_place_term_separates_places():
    emb, _, _ = default_stack(noise_std=0.0, place_weight=0.6)
    m = GridMap.empty(12, 10, 0.05)
    s1 = slice_fov(TileLayout(), Pose(2, 2, 0))[4]
    s2 = slice_fov(TileLayout(), Pose(9, 8, 0))[4]
    e1, e2 = observe_tile(m, None, s1, emb).embedding, observe_tile(m, None, s2, emb).embedding
    assert e1 @ e2 < 0.95
    assert len(observe_frame(m, None, TileLayout(), Pose(6, 5, 0), emb)) == 6
    assert RAYS_PER_TILE == 32
