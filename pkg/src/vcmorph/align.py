"""Dynamic time warping of source/target feature sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ShapeError

# predecessor codes, in tie-break order
DIAG, UP, LEFT = 0, 1, 2  # (i-1, j-1), (i-1, j), (i, j-1)


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    frames: np.ndarray
    timing: np.ndarray | None = None
    voiced: np.ndarray | None = None

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        object.__setattr__(self, "frames", f)
        if self.timing is not None:
            t = np.asarray(self.timing, dtype=np.int64)
            if t.size != len(f) or np.any(np.diff(t) <= 0):
                raise ShapeError("timing must be strictly increasing, one entry per frame")
            object.__setattr__(self, "timing", t)
        if self.voiced is not None:
            v = np.asarray(self.voiced, dtype=bool)
            if v.size != len(f):
                raise ShapeError("voicing flags must match frame count")
            object.__setattr__(self, "voiced", v)

    def __len__(self):
        return self.frames.shape[0] if self.frames.size else 0

    @property
    def dim(self):
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class WarpPath:
    pairs: np.ndarray  # (L, 2) int
    total_cost: float

    def __len__(self):
        return self.pairs.shape[0]


def local_costs(src: FeatureSequence, tgt: FeatureSequence, voicing_penalty: float = 1.0):
    d = np.sqrt(np.sum((src.frames[:, None, :] - tgt.frames[None, :, :]) ** 2, axis=-1))
    if voicing_penalty and src.voiced is not None and tgt.voiced is not None:
        d = d + voicing_penalty * (src.voiced[:, None] != tgt.voiced[None, :])
    return d


def dtw_align(src: FeatureSequence, tgt: FeatureSequence, voicing_penalty: float = 1.0,
              band: int | None = None) -> WarpPath:
    """Minimum-cost monotone alignment with steps (1,1), (1,0), (0,1).

    Local cost is the Euclidean distance, plus `voicing_penalty` where the
    voicing flags of the two frames differ. Ties prefer the diagonal step,
    then (1,0). `band` limits |i*(M-1)/(N-1) - j| (Sakoe-Chiba radius).
    """
    if len(src) == 0 or len(tgt) == 0:
        raise EmptyInputError("cannot align an empty sequence")
    if src.dim != tgt.dim:
        raise ShapeError(f"dimension mismatch: {src.dim} vs {tgt.dim}")
    c = local_costs(src, tgt, voicing_penalty)
    N, M = c.shape
    if band is not None:
        i = np.arange(N)[:, None] * ((M - 1) / max(N - 1, 1))
        c = np.where(np.abs(i - np.arange(M)[None, :]) <= band, c, np.inf)

    D = np.full((N, M), np.inf)
    back = np.zeros((N, M), dtype=np.int8)
    D[0, 0] = c[0, 0]
    # sweep anti-diagonals; every cell on diagonal d depends only on d-1, d-2
    for d in range(1, N + M - 1):
        i = np.arange(max(0, d - M + 1), min(N, d + 1))
        j = d - i
        cand = np.full((3, i.size), np.inf)
        ok = (i > 0) & (j > 0)
        cand[DIAG, ok] = D[i[ok] - 1, j[ok] - 1]
        ok = i > 0
        cand[UP, ok] = D[i[ok] - 1, j[ok]]
        ok = j > 0
        cand[LEFT, ok] = D[i[ok], j[ok] - 1]
        k = np.argmin(cand, axis=0)  # first minimum wins: DIAG, then UP
        D[i, j] = c[i, j] + cand[k, np.arange(i.size)]
        back[i, j] = k
    if not np.isfinite(D[-1, -1]):
        raise EmptyInputError("no admissible path inside the band")

    path = [(N - 1, M - 1)]
    i, j = N - 1, M - 1
    while (i, j) != (0, 0):
        k = back[i, j]
        if k == DIAG:
            i, j = i - 1, j - 1
        elif k == UP:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    return WarpPath(np.array(path[::-1], dtype=np.int64), float(D[-1, -1]))


def paired_vectors(src: FeatureSequence, tgt: FeatureSequence, path: WarpPath) -> np.ndarray:
    """Stack aligned frames into joint vectors z = [x; y], one row per path pair."""
    i, j = path.pairs[:, 0], path.pairs[:, 1]
    return np.hstack((src.frames[i], tgt.frames[j]))
