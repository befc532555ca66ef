"""Pitch tracking, glottal closure instants and pitch-synchronous analysis.

Voiced speech is cut into frames spanning two pitch periods, from one
glottal closure instant (GCI) to the one after next, so consecutive frames
overlap by one period. The vocal tract is estimated by covariance-method LPC
restricted to the closed phase that follows each GCI, and the glottal
derivative is recovered by inverse filtering with that estimate.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import lpc
from .errors import FrameKindError, TooShortError
from .wavio import Waveform

log = logging.getLogger(__name__)

COARSE_ORDER = 12


@dataclass
class PitchConfig:
    hop: float = 0.010
    window: float = 0.030
    fmin: float = 50.0
    fmax: float = 500.0
    voicing_threshold: float = 0.3
    silence_db: float = -50.0
    octave_ratio: float = 0.9


@dataclass(frozen=True, eq=False)
class PitchTrack:
    hop: float
    f0: np.ndarray
    voicing: np.ndarray
    sample_rate: int

    @property
    def hop_samples(self):
        return int(round(self.hop * self.sample_rate))

    def hop_index(self, n):
        return min(max(int(round(n / self.hop_samples)), 0), self.f0.size - 1)

    def period_at(self, n):
        """Local pitch period in samples at sample index n, or 0 if unvoiced."""
        f = self.f0[self.hop_index(n)]
        return self.sample_rate / f if f > 0 else 0.0


@dataclass(frozen=True, eq=False)
class GciMarks:
    instants: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.instants, dtype=np.int64).reshape(-1)
        if g.size > 1 and np.any(np.diff(g) <= 0):
            raise ValueError("GCI marks must be strictly increasing")
        object.__setattr__(self, "instants", g)

    def __len__(self):
        return self.instants.size

    def shifted(self, n):
        return GciMarks(self.instants + n)


@dataclass
class AnalysisFrame:
    start: int
    samples: np.ndarray
    gci: tuple = ()
    pitch_period: float = 0.0
    voiced: bool = False
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lpc: lpc.LpcModel | None = None
    residual: np.ndarray | None = None
    silent: bool = False
    fallback: bool = False

    @property
    def end(self):
        return self.start + self.samples.size

    def __len__(self):
        return self.samples.size


def _nccf(seg, win, minlag, maxlag):
    ref = seg[:win]
    num = np.correlate(seg[: win + maxlag], ref, mode="valid")
    c = np.concatenate(([0.0], np.cumsum(seg * seg)))
    e0 = c[win]
    ek = c[win: win + maxlag + 1] - c[: maxlag + 1]
    den = np.sqrt(np.maximum(e0 * ek, 1e-300))
    v = num / den
    v[:minlag] = 0.0
    return v


def _runs(mask):
    """[start, stop) index ranges of True runs."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    d = np.diff(m.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def estimate_pitch(w: Waveform, cfg: PitchConfig | None = None) -> PitchTrack:
    """Normalized-autocorrelation pitch track, one estimate per hop.

    Among local NCCF maxima in the search range the shortest lag within
    `octave_ratio` of the best one wins, which suppresses period doubling.
    """
    cfg = cfg or PitchConfig()
    fs = w.sample_rate
    if fs < 8000:
        raise ValueError(f"sample rate {fs} below 8000 Hz")
    x = w.samples
    hop = int(round(cfg.hop * fs))
    win = int(round(cfg.window * fs))
    minlag = int(math.floor(fs / cfg.fmax))
    maxlag = int(math.ceil(fs / cfg.fmin))
    if x.size < win + maxlag:
        raise TooShortError(f"need at least {win + maxlag} samples for pitch analysis, got {x.size}")

    n_hops = x.size // hop + 1
    pad = np.concatenate((np.zeros(win), x, np.zeros(win + maxlag)))
    f0 = np.zeros(n_hops)
    strength = np.zeros(n_hops)
    energy = np.zeros(n_hops)
    for i in range(n_hops):
        s = i * hop - win // 2 + win
        seg = pad[s: s + win + maxlag]
        energy[i] = np.dot(seg[:win], seg[:win])
        if energy[i] <= 0:
            continue
        v = _nccf(seg, win, minlag, maxlag)
        k = np.arange(minlag + 1, maxlag)
        peaks = k[(v[k] >= v[k - 1]) & (v[k] > v[k + 1])]
        if peaks.size == 0:
            continue
        best = v[peaks].max()
        lag = peaks[np.argmax(v[peaks] >= cfg.octave_ratio * best)]
        a, b, c = v[lag - 1], v[lag], v[lag + 1]
        den = a - 2 * b + c
        delta = 0.5 * (a - c) / den if den < 0 else 0.0
        strength[i] = best
        f0[i] = fs / (lag + delta)

    emax = energy.max()
    gate = emax * 10 ** (cfg.silence_db / 10) if emax > 0 else np.inf
    voiced = (strength >= cfg.voicing_threshold) & (energy > gate) \
        & (f0 >= cfg.fmin) & (f0 <= cfg.fmax)
    # drop isolated voiced hops
    iso = voiced.copy()
    iso[1:-1] = voiced[1:-1] & ~voiced[:-2] & ~voiced[2:]
    iso[0] = voiced[0] and (n_hops < 2 or not voiced[1])
    iso[-1] = voiced[-1] and (n_hops < 2 or not voiced[-2])
    voiced &= ~iso
    f0 = np.where(voiced, f0, 0.0)
    # octave jumps: unvoice hops more than half an octave away from their run's median
    for a, b in _runs(voiced):
        med = np.median(f0[a:b])
        bad = np.abs(np.log2(f0[a:b] / med)) > 0.5
        voiced[a:b] &= ~bad
    f0 = np.where(voiced, f0, 0.0)
    # 3-point median inside voiced runs
    sm = f0.copy()
    for i in range(1, n_hops - 1):
        if voiced[i - 1] and voiced[i] and voiced[i + 1]:
            sm[i] = np.median(f0[i - 1: i + 2])
    return PitchTrack(cfg.hop, sm, voiced, fs)


def coarse_residual(x, fs, order=COARSE_ORDER, hop=0.010, window=0.025):
    """Frame-wise autocorrelation LPC residual over the whole signal.

    Analysis windows are kept inside the signal so edges are not modelled on
    zero padding.
    """
    x = np.asarray(x, dtype=np.float64)
    h = int(round(hop * fs))
    win = min(int(round(window * fs)), x.size)
    res = np.zeros_like(x)
    for start in range(0, x.size, h):
        a = min(max(start + h // 2 - win // 2, 0), x.size - win)
        m = lpc.lpc_analysis(x[a:a + win], order)
        stop = min(start + h, x.size)
        res[start:stop] = lpc.inverse_filter(x[start:stop], m, x[max(0, start - order):start])
    return res


def _voiced_regions(track: PitchTrack, n, min_hops=3):
    """Sample ranges of voiced runs at least `min_hops` long, with their hop indices."""
    hop = track.hop_samples
    regions = []
    for i, j in _runs(track.voicing):
        j -= 1
        if j - i + 1 < min_hops:
            continue
        a = max(0, i * hop - hop // 2)
        b = min(n, j * hop + hop // 2 + 1)
        if b > a:
            regions.append((a, b, i, j))
    return regions


def residual_polarity(res, regions):
    """Sign of the residual skewness over voiced regions (+1 or -1).

    The excitation peak at closure dominates the skew; a positive sign means
    the utterance is recorded with inverted polarity.
    """
    v = np.concatenate([res[a:b] for a, b, *_ in regions])
    v = v - v.mean()
    return 1 if np.mean(v ** 3) > 0 else -1


def detect_gci(w: Waveform, track: PitchTrack, min_ratio: float = 0.3,
               core_ratio: float = 0.1) -> GciMarks:
    """Glottal closure instants as negative peaks of a coarse LPC residual.

    The residual is first flipped if its skew over voiced regions is positive.
    In each voiced region the strongest negative residual sample of the middle
    half anchors the sequence; marks are then chained forwards and backwards, each searched in
    [0.8 T0, 1.25 T0] from the previous one. Outside the voiced hops proper
    (within a one-period margin) a mark is kept only if its peak is at least
    `min_ratio` of the previous mark's, `core_ratio` inside them. Candidates
    must be local minima of the residual.
    """
    x = w.samples
    fs = w.sample_rate
    res = coarse_residual(x, fs)
    regions = _voiced_regions(track, x.size)
    if regions and residual_polarity(res, regions) > 0:
        res = -res
    marks = []
    for a, b, i0, j0 in regions:
        periods = track.f0[i0:j0 + 1]
        tmax = fs / periods.min()
        lo, hi = max(0, int(a - tmax)), min(x.size, int(b + tmax))

        def period(n):
            k = min(max(track.hop_index(n), i0), j0)
            return fs / track.f0[k]

        # anchor away from region edges, where voicing transitions live
        qa, qb = a + (b - a) // 4, b - (b - a) // 4
        anchor = qa + int(np.argmin(res[qa:qb]))
        if res[anchor] >= 0:
            continue
        region = [anchor]
        for direction in (1, -1):
            m = anchor
            while True:
                t = period(m)
                if direction > 0:
                    s, e = m + int(math.ceil(0.8 * t)), m + int(math.floor(1.25 * t)) + 1
                    s, e = max(s, lo), min(e, hi)
                else:
                    s, e = m - int(math.floor(1.25 * t)), m - int(math.ceil(0.8 * t)) + 1
                    s, e = max(s, lo), min(e, hi)
                if e <= s:
                    break
                c = s + int(np.argmin(res[s:e]))
                if res[c] >= 0 or c == 0 or c == x.size - 1:
                    break
                if res[c] > res[c - 1] or res[c] > res[c + 1]:
                    break
                ratio = core_ratio if a <= c < b else min_ratio
                if abs(res[c]) < ratio * abs(res[m]):
                    break
                region.append(c)
                m = c
        marks.extend(sorted(region))
    marks = np.unique(np.array(marks, dtype=np.int64))
    # margins of neighbouring regions can overlap; keep the stronger of close marks
    kept = []
    for g in marks:
        if kept:
            t = track.period_at(g) or track.period_at(kept[-1]) or fs / 500.0
            if g - kept[-1] < 0.6 * t:
                if res[g] < res[kept[-1]]:
                    kept[-1] = g
                continue
        kept.append(int(g))
    return GciMarks(np.array(kept, dtype=np.int64))


def _history(x, start, n):
    h = np.zeros(n)
    take = x[max(0, start - n):start]
    if take.size:
        h[n - take.size:] = take
    return h


def _mark_runs(marks, track, fs, fmin):
    runs, cur = [], []
    for g in marks:
        if cur:
            t = track.period_at(g) if track is not None else 0.0
            limit = 1.25 * t if t > 0 else fs / fmin
            if g - cur[-1] > limit:
                runs.append(cur)
                cur = []
        cur.append(int(g))
    if cur:
        runs.append(cur)
    return runs


def frame_pitch_synchronous(w: Waveform, marks: GciMarks, track: PitchTrack | None = None,
                            history: int = 32, unvoiced_length: float = 0.020,
                            unvoiced_hop: float = 0.010, fmin: float = 50.0):
    """Two-period voiced frames [g_k, g_{k+2}) plus fixed frames over the gaps.

    Runs of fewer than three closure instants are treated as unvoiced.
    """
    x = w.samples
    fs = w.sample_rate
    n = x.size
    frames = []
    spans = []
    for run in _mark_runs(marks.instants, track, fs, fmin):
        if len(run) < 3:
            log.warning("voiced run with %d GCIs at sample %d treated as unvoiced", len(run), run[0])
            continue
        for k in range(len(run) - 2):
            s, e = run[k], run[k + 2]
            frames.append(AnalysisFrame(
                start=s, samples=x[s:e].copy(), gci=(run[k], run[k + 1]),
                pitch_period=(e - s) / 2.0, voiced=True,
                history=_history(x, s, history)))
        spans.append((run[0], run[-1]))

    L = int(round(unvoiced_length * fs))
    H = int(round(unvoiced_hop * fs))
    gaps, pos = [], 0
    for s, e in sorted(spans):
        if s > pos:
            gaps.append((pos, s))
        pos = max(pos, e)
    if pos < n:
        gaps.append((pos, n))
    # gap frames reach half a hop into neighbouring voiced runs so that the
    # voiced/unvoiced joins get a crossfade too
    pad = H // 2
    for a, b in gaps:
        if a > 0:
            a = max(0, a - pad)
        if b < n:
            b = min(n, b + pad)
        count = max(1, int(math.ceil((b - a - L) / H)) + 1)
        for i in range(count):
            s = a + i * H
            if n >= L:
                s = min(s, n - L)
            s = max(s, 0)
            e = min(s + L, n)
            frames.append(AnalysisFrame(start=s, samples=x[s:e].copy(), voiced=False,
                                        history=_history(x, s, history)))
    frames.sort(key=lambda f: (f.start, not f.voiced))
    # clamping near the signal end can duplicate a start
    out = []
    for f in frames:
        if out and out[-1].start == f.start and not f.voiced and len(out[-1]) >= len(f):
            continue
        out.append(f)
    return out


def closed_phase_intervals(f: AnalysisFrame, fraction: float = 0.4):
    """Frame-relative [start, stop) sample ranges of the closed phase after each GCI."""
    bounds = list(f.gci) + [f.end]
    out = []
    for g, nxt in zip(bounds[:-1], bounds[1:]):
        t = nxt - g
        s = g + 1 - f.start
        e = g + int(round(fraction * t)) + 1 - f.start
        out.append((s, min(e, len(f))))
    return out


def closed_phase_lpc(f: AnalysisFrame, order: int, fraction: float = 0.4) -> lpc.LpcModel:
    """Covariance-method LPC over the pooled closed-phase samples of a voiced frame.

    Falls back to Hann-windowed autocorrelation LPC over the whole frame (and
    sets `f.fallback`) when fewer than 2*order closed-phase samples exist.
    """
    if not f.voiced:
        raise FrameKindError("closed-phase analysis needs a voiced frame")
    if len(f.gci) < 1:
        raise FrameKindError("voiced frame without GCIs")
    if f.history.size < order:
        raise ValueError(f"frame history ({f.history.size}) shorter than order {order}")
    rows = np.concatenate([np.arange(s, e) for s, e in closed_phase_intervals(f, fraction)])
    ext = np.concatenate((f.history, f.samples))
    off = f.history.size
    f.fallback = False
    if rows.size < 2 * order:
        f.fallback = True
        log.debug("closed phase too short at %d (%d samples); full-frame LPC", f.start, rows.size)
        return lpc.lpc_analysis(f.samples, order)
    idx = rows[:, None] + off - np.arange(1, order + 1)[None, :]
    X = ext[idx]
    y = ext[rows + off]
    if not np.any(X):
        f.fallback = True
        return lpc.lpc_analysis(f.samples, order)
    a, *_ = np.linalg.lstsq(X, y, rcond=None)
    m = lpc.LpcModel(a, 0.0)
    if m.pole_radius() >= lpc.MARGINAL_RADIUS:
        m = lpc.stabilize(m)
    e = lpc.inverse_filter(f.samples, m, f.history)
    return m.with_gain(float(np.sqrt(np.mean(e * e))))


def separate_glottal(f: AnalysisFrame, m: lpc.LpcModel) -> np.ndarray:
    """Glottal-derivative estimate: the frame inverse-filtered by the vocal tract."""
    e = lpc.inverse_filter(f.samples, m, f.history)
    f.lpc = m
    f.residual = e
    return e


def residual_decay_score(f: AnalysisFrame, fraction: float = 0.4) -> float:
    """Fraction of closed-phase intervals whose residual envelope decreases.

    Soft diagnostic only: compares mean |e| over the first and second half of
    each interval.
    """
    if f.residual is None or not f.voiced:
        return float("nan")
    hits, total = 0, 0
    for s, e in closed_phase_intervals(f, fraction):
        seg = np.abs(f.residual[s:e])
        if seg.size < 4:
            continue
        h = seg.size // 2
        total += 1
        hits += seg[:h].mean() >= seg[h:].mean()
    return hits / total if total else float("nan")


@dataclass
class Analysis:
    frames: list
    track: PitchTrack
    marks: GciMarks


def analyze(w: Waveform, order: int, pitch_cfg: PitchConfig | None = None,
            closed_phase: bool = True, fraction: float = 0.4,
            silence_db: float = -80.0) -> Analysis:
    """Full per-utterance analysis: pitch, GCIs, frames, vocal-tract models, residuals."""
    pitch_cfg = pitch_cfg or PitchConfig()
    track = estimate_pitch(w, pitch_cfg)
    marks = detect_gci(w, track)
    frames = frame_pitch_synchronous(w, marks, track, history=max(order, COARSE_ORDER) + 8,
                                     fmin=pitch_cfg.fmin)
    floor = w.peak * 10 ** (silence_db / 20)
    for f in frames:
        rms = float(np.sqrt(np.mean(f.samples ** 2))) if len(f) else 0.0
        if rms <= floor or rms == 0.0:
            f.silent = True
            separate_glottal(f, lpc.LpcModel.flat(order))
            continue
        if f.voiced and closed_phase:
            m = closed_phase_lpc(f, order, fraction)
        else:
            m = lpc.lpc_analysis(f.samples, order)
        separate_glottal(f, m)
    return Analysis(frames, track, marks)
