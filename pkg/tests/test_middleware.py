import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridnav.middleware import (
    FamiliarityDB,
    FamiliarityEntry,
    MergeStrategy,
    correlate,
    familiarity_query_update,
    score_frame,
)
from gridnav.perception import TileObservation
from gridnav.promptdb import EncodedPromptDB, Polarity

P, N = Polarity.POSITIVE, Polarity.NEGATIVE


def db_of(vectors, polarity):
    return EncodedPromptDB(np.array(vectors, dtype=float), tuple(polarity), tuple(f"p{i}" for i in range(len(vectors))))


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_correlate_self_similarity():
    db = db_of([[1, 0, 0], [0, 1, 0]], [P, N])
    assert correlate(np.array([1.0, 0, 0]), db) == 1.0
    assert correlate(np.array([0, 1.0, 0]), db) == -1.0


def test_correlate_hand_values():
    # e . pos = 0.62, e . neg = 0.30
    e = np.array([0.62, 0.30, math.sqrt(1 - 0.62**2 - 0.30**2)])
    db = db_of([[1, 0, 0], [0, 1, 0]], [P, N])
    assert correlate(e, db) == pytest.approx(0.62, abs=1e-15)


def test_correlate_rejects_wrong_dim():
    with pytest.raises(ValueError):
        correlate(np.ones(4), db_of([[1, 0, 0]], [P]))


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8))
def test_correlate_order_invariant(seed, n):
    rng = np.random.default_rng(seed)
    vecs = [unit(v) for v in rng.standard_normal((n, 6))]
    pol = [P if b else N for b in rng.random(n) < 0.5]
    e = unit(rng.standard_normal(6))
    perm = rng.permutation(n)
    a = correlate(e, db_of(vecs, pol))
    b = correlate(e, db_of([vecs[i] for i in perm], [pol[i] for i in perm]))
    assert a == b
    assert -1.0 <= a <= 1.0


def test_empty_db_scores_zero_and_grows():
    db = FamiliarityDB()
    assert familiarity_query_update(unit([1, 2, 3]), db) == 0.0
    assert len(db) == 1


def test_count_average_two_vectors():
    db = FamiliarityDB(tau_known=-1.0, strategy=MergeStrategy.COUNT_AVERAGE)
    db.add(np.array([1.0, 0.0]))
    familiarity_query_update(np.array([0.0, 1.0]), db)
    en = db.entries[0]
    assert np.allclose(en.raw, [0.5, 0.5], atol=0, rtol=0)
    assert np.allclose(en.vector, [math.sqrt(2) / 2] * 2, atol=1e-15)
    assert en.s == 2


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40), st.integers(2, 16))
def test_count_average_is_arithmetic_mean(seed, k, dim):
    rng = np.random.default_rng(seed)
    vs = [unit(v) for v in rng.standard_normal((k, dim))]
    db = FamiliarityDB(tau_known=-1.0, strategy=MergeStrategy.COUNT_AVERAGE)
    for v in vs:
        familiarity_query_update(v, db)
    assert len(db) == 1
    assert np.max(np.abs(db.entries[0].raw - np.mean(vs, axis=0))) <= 1e-12


def test_rolling_fixed_point_exact():
    db = FamiliarityDB(tau_known=0.5, decay=0.25)
    db.add(np.array([1.0, 0.0]))
    for _ in range(5):
        familiarity_query_update(np.array([1.0, 0.0]), db)
    assert np.array_equal(db.entries[0].raw, [1.0, 0.0])
    assert np.array_equal(db.entries[0].vector, [1.0, 0.0])


@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.99), st.integers(2, 64))
def test_rolling_fixed_point_random(seed, lam, dim):
    v = unit(np.random.default_rng(seed).standard_normal(dim))
    db = FamiliarityDB(tau_known=0.0, decay=lam)
    db.add(v)
    first = db.entries[0].vector.copy()
    for _ in range(3):
        familiarity_query_update(v, db)
    assert np.array_equal(db.entries[0].raw, v)
    assert np.array_equal(db.entries[0].vector, first)


@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95), st.integers(1, 30))
def test_rolling_contraction(seed, lam, m):
    rng = np.random.default_rng(seed)
    v0, vn = unit(rng.standard_normal(5)), unit(rng.standard_normal(5))
    db = FamiliarityDB(tau_known=-1.0, decay=lam)
    db.add(v0)
    for _ in range(m):
        db.merge(0, vn)
    assert np.linalg.norm(db.entries[0].raw - vn) <= (1 - lam) ** m * np.linalg.norm(v0 - vn) + 1e-12


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(-0.5, 0.99))
def test_familiarity_bounded_and_db_grows(seed, tau):
    rng = np.random.default_rng(seed)
    db = FamiliarityDB(tau_known=tau)
    sizes = []
    for v in rng.standard_normal((30, 4)):
        s = familiarity_query_update(unit(v), db)
        assert 0.0 <= s <= 1.0
        sizes.append(len(db))
    assert sizes == sorted(sizes)


def test_familiarity_round_trip():
    rng = np.random.default_rng(1)
    db = FamiliarityDB(tau_known=0.7, strategy=MergeStrategy.COUNT_AVERAGE)
    for v in rng.standard_normal((10, 8)):
        familiarity_query_update(unit(v), db)
    back = FamiliarityDB.loads(db.dumps())
    assert back.tau_known == 0.7 and back.strategy is db.strategy
    assert all(np.array_equal(a.raw, b.raw) and a.s == b.s for a, b in zip(db.entries, back.entries))
    with pytest.raises(ValueError):
        FamiliarityDB.loads("nonsense\n")


def test_rolling_rejects_bad_decay():
    with pytest.raises(ValueError):
        FamiliarityDB(decay=1.5)


def test_entry_normalizes_copy():
    raw = np.array([3.0, 4.0])
    en = FamiliarityEntry(raw)
    assert np.allclose(en.vector, [0.6, 0.8]) and en.raw is not raw


def test_score_frame():
    floor, wall, target, other = np.eye(4)
    nav_db = db_of([floor, wall], [P, N])
    tgt_db = db_of([target, other], [P, N])
    obs = [TileObservation(unit(floor + 0.2 * other), 0.1, divmod(k, 3)) for k in range(6)]
    obs[4] = TileObservation(unit(floor + 0.6 * target), 0.1, (1, 1))
    fam = FamiliarityDB()
    g = score_frame(obs, nav_db, tgt_db, fam)
    assert np.all(g.nav > 0)
    assert np.argwhere(g.target > 0).tolist() == [[1, 1]]
    again = score_frame(obs, nav_db, tgt_db, fam)
    assert np.all(again.familiarity > fam.tau_known)
    none = score_frame(obs, nav_db, tgt_db, None)
    assert not none.familiarity.any()
    with pytest.raises(ValueError):
        score_frame(obs[:5], nav_db, tgt_db, None)
