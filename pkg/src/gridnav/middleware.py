"""Correlation middlewares: prompt scoring (navigability, target) and the familiarity store."""
from __future__ import annotations

import base64
import enum
import re
from dataclasses import dataclass, field

import numpy as np

from .promptdb import EncodedPromptDB

ROWS, COLS = 2, 3


def correlate(e: np.ndarray, db: EncodedPromptDB) -> float:
    """Signed best match: +s+ when the positive class wins, -s- otherwise.

    Each class's best inner product is -1 when that class is empty.
    """
    e = np.asarray(e, dtype=float)
    if e.shape != (db.dim,):
        raise ValueError(f"embedding has shape {e.shape}, prompt database dimension is {db.dim}")
    pos, neg = db.positives, db.negatives
    sp = float(np.max(pos @ e)) if len(pos) else -1.0
    sn = float(np.max(neg @ e)) if len(neg) else -1.0
    return sp if sp >= sn else -sn


class MergeStrategy(enum.Enum):
    COUNT_AVERAGE = "count"
    ROLLING_AVERAGE = "rolling"


@dataclass
class FamiliarityEntry:
    """A known spot. ``raw`` is the merge accumulator; ``vector`` its unit-norm copy.

    Keeping the accumulator separate lets the count-average strategy stay an
    exact running mean while similarity queries use normalized vectors.
    """

    raw: np.ndarray
    s: int = 1
    vector: np.ndarray = field(init=False)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float).copy()
        self._renormalize()

    def _renormalize(self) -> None:
        n = np.linalg.norm(self.raw)
        self.vector = self.raw / n if n > 0 else self.raw.copy()


@dataclass
class FamiliarityDB:
    tau_known: float = 0.85
    strategy: MergeStrategy = MergeStrategy.ROLLING_AVERAGE
    decay: float = 0.1
    entries: list[FamiliarityEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.strategy is MergeStrategy.ROLLING_AVERAGE and not 0 < self.decay < 1:
            raise ValueError("rolling-average decay must lie in (0, 1)")
        self._mat = np.zeros((0, 0))
        self._rows = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _matrix(self) -> np.ndarray:
        # cached stack of unit vectors; rows are patched in place on merge
        n = len(self.entries)
        if self._mat.shape[0] < n:
            grown = np.zeros((max(2 * n, 64), len(self.entries[0].vector)))
            if self._rows:
                grown[: self._rows] = self._mat[: self._rows]
            self._mat = grown
        for i in range(self._rows, n):
            self._mat[i] = self.entries[i].vector
        self._rows = n
        return self._mat[:n]

    def add(self, e: np.ndarray) -> None:
        self.entries.append(FamiliarityEntry(e))

    def query(self, e: np.ndarray) -> tuple[float, int]:
        """Best cosine match and its index, without touching the store (-1 when empty)."""
        if not self.entries:
            return 0.0, -1
        sims = self._matrix() @ np.asarray(e, dtype=float)
        i = int(np.argmax(sims))
        return float(sims[i]), i

    def merge(self, i: int, e: np.ndarray) -> None:
        en = self.entries[i]
        if self.strategy is MergeStrategy.COUNT_AVERAGE:
            s = en.s
            en.raw = s / (s + 1) * en.raw + 1 / (s + 1) * e
        else:
            # (1 - lam) raw + lam e, written so identical input leaves raw bit-exact
            en.raw = en.raw + self.decay * (e - en.raw)
        en.s += 1
        en._renormalize()
        if i < self._rows:
            self._mat[i] = en.vector

    def dumps(self) -> str:
        dim = len(self.entries[0].raw) if self.entries else 0
        lines = [f"familiaritydb v1 D={dim} tau={self.tau_known!r} strategy={self.strategy.value} decay={self.decay!r}"]
        for en in self.entries:
            blob = base64.b64encode(en.raw.astype("<f8").tobytes()).decode("ascii")
            lines.append(f"entry {blob} s={en.s} strategy={self.strategy.value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FamiliarityDB":
        lines = text.splitlines()
        m = re.fullmatch(r"familiaritydb v1 D=(\d+) tau=(\S+) strategy=(\w+) decay=(\S+)", lines[0].strip()) if lines else None
        if not m:
            raise ValueError("familiaritydb: bad header line")
        dim = int(m.group(1))
        db = cls(float(m.group(2)), MergeStrategy(m.group(3)), float(m.group(4)))
        for lineno, line in enumerate(lines[1:], 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4 or parts[0] != "entry" or not parts[2].startswith("s="):
                raise ValueError(f"familiaritydb line {lineno}: expected 'entry <vector> s=<n> strategy=<name>'")
            raw = np.frombuffer(base64.b64decode(parts[1]), dtype="<f8").copy()
            if raw.shape[0] != dim:
                raise ValueError(f"familiaritydb line {lineno}: vector has {raw.shape[0]} dims, header says {dim}")
            db.entries.append(FamiliarityEntry(raw, int(parts[2][2:])))
        return db


def familiarity_query_update(e: np.ndarray, db: FamiliarityDB) -> float:
    """Score ``e`` against known spots, then merge it or insert it as a new spot.

    Returns the pre-merge best similarity clamped at zero.
    """
    e = np.asarray(e, dtype=float)
    score, i = db.query(e)
    if i >= 0 and score > db.tau_known:
        db.merge(i, e)
    else:
        db.add(e)
    return min(max(score, 0.0), 1.0)


@dataclass
class ScoreGrid:
    nav: np.ndarray
    target: np.ndarray
    familiarity: np.ndarray
    std: np.ndarray

    @classmethod
    def zeros(cls) -> "ScoreGrid":
        return cls(*(np.zeros((ROWS, COLS)) for _ in range(4)))


def score_frame(observations, nav_db: EncodedPromptDB, target_db: EncodedPromptDB,
                fam_db: FamiliarityDB | None, update: bool = True) -> ScoreGrid:
    """Per-tile scores for six observations in (NEAR L C R, FAR L C R) order.

    With ``fam_db=None`` familiarity is reported as 0 everywhere and nothing is
    stored. With ``update=False`` the familiarity store is only queried.
    """
    if len(observations) != ROWS * COLS:
        raise ValueError(f"expected {ROWS * COLS} tile observations, got {len(observations)}")
    g = ScoreGrid.zeros()
    for k, ob in enumerate(observations):
        r, c = divmod(k, COLS)
        g.nav[r, c] = correlate(ob.embedding, nav_db)
        g.target[r, c] = correlate(ob.embedding, target_db)
        if fam_db is None:
            g.familiarity[r, c] = 0.0
        elif update:
            g.familiarity[r, c] = familiarity_query_update(ob.embedding, fam_db)
        else:
            g.familiarity[r, c] = min(max(fam_db.query(ob.embedding)[0], 0.0), 1.0)
        g.std[r, c] = ob.std_dev
    return g
