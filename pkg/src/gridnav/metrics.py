"""Evaluation metrics: SPL, success rate / mean inverse path length, and the entropy preserving score."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize


class MetricsError(ValueError):
    pass


class FitError(MetricsError):
    pass


@dataclass(frozen=True)
class RunRecord:
    pair_id: tuple[str, str]
    success: bool
    path: float
    baseline: float

    def __post_init__(self):
        if not self.baseline > 0:
            raise MetricsError(f"baseline distance must be > 0 for pair {self.pair_id}, got {self.baseline}")
        if self.success and not (math.isfinite(self.path) and self.path >= 0):
            raise MetricsError(f"successful run on {self.pair_id} needs a finite path, got {self.path}")

    @classmethod
    def failed(cls, pair_id, baseline: float) -> "RunRecord":
        return cls(tuple(pair_id), False, math.inf, baseline)


@dataclass(frozen=True)
class AggregateStats:
    n: int
    n_success: int
    R: float
    Lbar: float
    spl: float
    lbar_defined: bool = True


def _check(records) -> None:
    if not records:
        raise MetricsError("no records")


def spl(records) -> float:
    """(1/N) sum S_i l_i / max(p_i, l_i); failures contribute zero."""
    _check(records)
    total = 0.0
    for r in records:
        if r.success:
            total += r.baseline / max(r.path, r.baseline)
    return total / len(records)


def aggregate(records) -> AggregateStats:
    _check(records)
    wins = [r for r in records if r.success]
    n, ns = len(records), len(wins)
    R = ns / n
    if ns:
        # min(., 1): a path shorter than the baseline counts as optimal
        Lbar = float(np.mean([min(r.baseline / r.path, 1.0) if r.path > 0 else 1.0 for r in wins]))
        return AggregateStats(n, ns, R, Lbar, spl(records))
    return AggregateStats(n, 0, 0.0, 0.0, 0.0, lbar_defined=False)


# --------------------------------------------------------------------------
# R-L curve from random-walk trials


@dataclass(frozen=True)
class RLCurve:
    R: np.ndarray
    Lbar: np.ndarray
    cutoffs: np.ndarray

    def __len__(self) -> int:
        return len(self.R)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.R.tolist(), self.Lbar.tolist()))


def rl_curve(paths, baseline: float, cutoffs=None) -> RLCurve:
    """Sweep a failure cutoff over uncapped random-walk path lengths.

    With no cutoffs given, every distinct path length is used, which yields
    one point per attainable success rate.
    """
    p = np.asarray(paths, dtype=float)
    if p.size == 0:
        raise MetricsError("rl_curve needs at least one trial")
    if not baseline > 0:
        raise MetricsError("baseline must be > 0")
    if cutoffs is None:
        cutoffs = np.unique(p[np.isfinite(p)])
    cutoffs = np.asarray(cutoffs, dtype=float)
    if np.any(np.diff(cutoffs) < 0):
        raise MetricsError("cutoffs must be sorted ascending")
    inv = np.where(p > 0, np.minimum(baseline / np.where(p > 0, p, 1.0), 1.0), 1.0)
    Rs, Ls, Ds = [], [], []
    for D in cutoffs:
        ok = p <= D
        k = int(ok.sum())
        if k == 0:
            continue
        R = k / p.size
        if Rs and R == Rs[-1]:
            continue
        Rs.append(R)
        Ls.append(float(inv[ok].mean()))
        Ds.append(float(D))
    return RLCurve(np.array(Rs), np.array(Ls), np.array(Ds))


# --------------------------------------------------------------------------
# Entropy preserving score


@dataclass(frozen=True)
class EpsModel:
    """Rows are (k_n, t_n, p_n) for f_n(x) = k_n x^p_n + t_n, n = 1, 2, 3."""

    H: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float).reshape(3, 3)
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @classmethod
    def canonical(cls, p2: float, p3: float, t1: float) -> "EpsModel":
        return cls(np.array([[1.0 - t1, t1, 1.0], [1.0, 0.0, p2], [1.0, 0.0, p3]]))

    def f(self, n: int, x):
        k, t, p = self.H[n - 1]
        return k * np.power(x, p) + t

    @property
    def p2(self) -> float:
        return float(self.H[1, 2])

    @property
    def p3(self) -> float:
        return float(self.H[2, 2])

    @property
    def t1(self) -> float:
        return float(self.H[0, 1])

    def boundary_gap(self) -> float:
        return float(self.f(1, 1.0) - self.f(2, 1.0) * self.f(3, 1.0))


def _log_points(curve: RLCurve):
    R = np.asarray(curve.R, dtype=float)
    L = np.asarray(curve.Lbar, dtype=float)
    if len(R) < 3:
        raise FitError(f"need at least 3 curve points, got {len(R)}")
    if np.any(R <= 0) or np.any(L <= 0):
        raise FitError("curve points must lie in (0, 1] x (0, 1]")
    return np.log(L), np.log(R)


def fit_eps(curve: RLCurve, mode: str = "canonical", reg: float = 1e-3) -> EpsModel:
    """Fit the EPS = 0 equipotential to a random-walk curve.

    Canonical mode pins k2 = k3 = 1, t2 = t3 = 0, p1 = 1, k1 = 1 - t1.
    The remaining log-space condition ``p2 ln L + p3 ln R = ln t1`` is
    homogeneous in (p2, p3, ln t1), so one curve only fixes their ratios;
    the scale is pinned by ``p2 + p3 = 2`` (equal weights give 1 and 1).
    """
    a, b = _log_points(curve)
    if mode == "canonical":
        A = np.column_stack([a - b, -np.ones_like(a)])
        y = -(a + b)
        if np.linalg.matrix_rank(A) < 2:
            raise FitError("degenerate curve: all points share the same L/R balance")
        (delta, c), *_ = np.linalg.lstsq(A, y, rcond=None)
        p2, p3, t1 = 1.0 + delta, 1.0 - delta, math.exp(c)
        if not (p2 > 0 and p3 > 0):
            raise FitError(f"fit gave non-positive exponent (p2={p2:.4g}, p3={p3:.4g})")
        if not 0 < t1 < 1:
            raise FitError(f"fit gave t1={t1:.4g} outside (0, 1)")
        return EpsModel.canonical(p2, p3, t1)
    if mode == "full":
        return _fit_full(curve, reg)
    raise ValueError(f"unknown fit mode {mode!r}")


def _fit_full(curve: RLCurve, reg: float) -> EpsModel:
    """All nine parameters, regularised toward the canonical solution."""
    base = fit_eps(curve, "canonical")
    x0 = base.H.ravel().copy()
    R = np.asarray(curve.R, dtype=float)
    L = np.asarray(curve.Lbar, dtype=float)

    def unpack(x):
        return x.reshape(3, 3)

    def resid(x):
        H = unpack(x)
        (k1, t1, p1), (k2, t2, p2), (k3, t3, p3) = H
        on_curve = (k2 * L**p2 + t2) * (k3 * R**p3 + t3) - t1
        boundary = (k1 + t1) - (k2 + t2) * (k3 + t3)
        return np.concatenate([on_curve, [1e3 * boundary], math.sqrt(reg) * (x - x0)])

    lo = np.array([1e-6, 1e-9, 1e-3] * 3)
    hi = np.array([np.inf, 1 - 1e-9, np.inf] * 3)
    lo[[4, 7]] = -np.inf  # t2, t3 may be negative
    hi[[4, 7]] = np.inf
    sol = optimize.least_squares(resid, np.clip(x0, lo + 1e-12, hi - 1e-12), bounds=(lo, hi))
    H = unpack(sol.x).copy()
    # enforce the boundary condition exactly
    H[0, 0] = (H[1, 0] + H[1, 1]) * (H[2, 0] + H[2, 1]) - H[0, 1]
    if H[0, 0] <= 0:
        raise FitError("full fit violates monotonicity of f1")
    return EpsModel(H)


def eps_score(model: EpsModel, R: float, Lbar: float) -> float:
    """clamp(f1^-1(f2(Lbar) f3(R)), 0, 1)."""
    k1, t1, p1 = model.H[0]
    y = float(model.f(2, Lbar) * model.f(3, R))
    z = (y - t1) / k1
    if z <= 0:
        return 0.0
    v = z ** (1.0 / p1)
    return float(min(max(v, 0.0), 1.0))


# --------------------------------------------------------------------------
# CSV exports


def summary_csv(rows) -> str:
    """``rows``: iterable of (algo, AggregateStats, eps or None)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algo", "R", "Lbar", "SPL", "EPS"])
    for algo, st, eps in rows:
        w.writerow([algo, f"{st.R:.6f}", f"{st.Lbar:.6f}", f"{st.spl:.6f}", "" if eps is None else f"{eps:.6f}"])
    return buf.getvalue()


def equipotential_csv(model: EpsModel, n: int = 51) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["R", "Lbar", "EPS"])
    grid = np.linspace(0.0, 1.0, n)
    for R in grid:
        for L in grid[1:]:
            w.writerow([f"{R:.6f}", f"{L:.6f}", f"{eps_score(model, R, L):.6f}"])
    return buf.getvalue()
