"""Synthetic speech with known ground truth.

Source-filter generators (Rosenberg-style glottal pulses with an optional
exponential return phase, formant resonator cascades) and a toy parallel
corpus of two "speakers" that differ in vocal-tract length, pitch, glottal
pulse shape and timing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lpc
from .wavio import ParallelCorpus, UtterancePair, Waveform, normalize_peak


def resonator_poly(freqs, bandwidths, fs):
    """Inverse-filter polynomial of a cascade of two-pole resonators."""
    poly = np.array([1.0])
    for f, b in zip(freqs, bandwidths):
        r = np.exp(-np.pi * b / fs)
        poly = np.convolve(poly, [1.0, -2.0 * r * np.cos(2 * np.pi * f / fs), r * r])
    return poly


def formant_model(freqs, bandwidths, fs, gain=1.0) -> lpc.LpcModel:
    return lpc.LpcModel(-resonator_poly(freqs, bandwidths, fs)[1:], gain)


def glottal_derivative(gcis, n, open_quotient=0.5, peak_phase=0.75, growth=2.0,
                       return_tau=0.0, amplitude=1.0):
    """LF-like glottal-flow derivative with closures at `gcis`.

    Each period [g_{k-1}, g_k) is closed for its first (1 - open_quotient)
    fraction. The open phase is an exponentially growing sinusoid whose first
    zero crossing sits at `peak_phase` of the open phase (the flow maximum),
    cut at g_k where it reaches its negative peak. With return_tau > 0
    (samples) the derivative then decays back to zero exponentially;
    otherwise it returns at once.
    """
    e = np.zeros(n)
    g = np.asarray(gcis, dtype=np.int64)
    for prev, cur in zip(g[:-1], g[1:]):
        T = cur - prev
        to = max(int(round(open_quotient * T)), 4)
        t = np.arange(1, to + 1)
        d = np.exp(growth * t / to) * np.sin(np.pi * t / (peak_phase * to))
        d *= amplitude / -d[-1]
        s = cur - to + 1
        lo, hi = max(s, 0), min(cur + 1, n)
        if hi > lo:
            e[lo:hi] += d[lo - s:hi - s]
        if return_tau > 0 and cur + 1 < n:
            k = np.arange(1, min(int(8 * return_tau) + 1, T, n - cur))
            e[cur + k] += -amplitude * np.exp(-k / return_tau)
    return e


def gci_positions(f0, fs, n, start=0):
    """Closure instants for a (possibly time-varying) f0 array sampled per sample."""
    f0 = np.broadcast_to(np.asarray(f0, dtype=np.float64), (n,))
    out = [start]
    pos = float(start)
    while True:
        nxt = pos + fs / f0[min(int(pos), n - 1)]
        if round(nxt) >= n:
            break
        out.append(int(round(nxt)))
        pos = nxt
    return np.array(sorted(set(out)), dtype=np.int64)


@dataclass
class SyntheticVowel:
    waveform: Waveform
    gcis: np.ndarray
    excitation: np.ndarray
    model: lpc.LpcModel


def synthetic_vowel(fs=16000, f0=100.0, formants=(700, 1200, 2500, 3500),
                    bandwidths=(80, 100, 150, 200), duration=0.5, open_quotient=0.5,
                    return_tau=0.0, first_gci=None, excitation="lf", noise=0.0, seed=0):
    """A stationary vowel from a known all-pole filter and known GCIs.

    excitation="lf" uses glottal_derivative; "impulse" uses negative unit
    impulses at the GCIs.
    """
    n = int(round(duration * fs))
    first = int(round(fs / f0)) if first_gci is None else first_gci
    gcis = gci_positions(f0, fs, n, start=first)
    if excitation == "impulse":
        e = np.zeros(n)
        e[gcis] = -1.0
    else:
        e = glottal_derivative(np.concatenate(([first - int(round(fs / f0))], gcis)), n,
                               open_quotient=open_quotient, return_tau=return_tau)
    if noise:
        e = e + noise * np.random.default_rng(seed).standard_normal(n)
    m = formant_model(formants, bandwidths, fs)
    y = lpc.synthesize(m, e)
    return SyntheticVowel(Waveform(y / max(np.max(np.abs(y)), 1e-12) * 0.5, fs), gcis, e, m)


def random_formants(rng, n_formants=4, fs=16000):
    """Random, well separated formant frequencies and bandwidths."""
    edges = np.linspace(250, min(4200, 0.45 * fs), n_formants + 1)
    freqs = [rng.uniform(lo + 50, hi - 50) for lo, hi in zip(edges[:-1], edges[1:])]
    bws = [rng.uniform(50, 150) * (1 + 0.3 * i) for i in range(n_formants)]
    return np.array(freqs), np.array(bws)


def closed_phase_trial(rng, fs=16000, n_formants=4, use_true_gcis=False):
    """One synthetic vowel; coefficient errors (closed-phase, full-frame).

    The vowel has random formants, f0 in [90, 220] Hz and open quotient in
    [0.4, 0.7]. GCIs come from the detector unless `use_true_gcis`. Errors are
    Euclidean distances to the true predictor coefficients, measured on the
    middle voiced frame at the true model order.
    """
    from .glottal import (PitchConfig, closed_phase_lpc, detect_gci, estimate_pitch,
                          frame_pitch_synchronous, GciMarks)
    freqs, bws = random_formants(rng, n_formants, fs)
    v = synthetic_vowel(fs, f0=float(rng.uniform(90, 220)), formants=freqs, bandwidths=bws,
                        duration=0.25, open_quotient=float(rng.uniform(0.4, 0.7)),
                        return_tau=float(rng.uniform(0.0, 1.0)))
    order = 2 * n_formants
    track = estimate_pitch(v.waveform, PitchConfig())
    marks = GciMarks(v.gcis) if use_true_gcis else detect_gci(v.waveform, track)
    frames = [f for f in frame_pitch_synchronous(v.waveform, marks, track, history=order + 8)
              if f.voiced]
    if not frames:
        raise ValueError("no voiced frame in synthetic vowel")
    f = frames[len(frames) // 2]
    cp = closed_phase_lpc(f, order)
    ff = lpc.lpc_analysis(f.samples, order)
    return (float(np.linalg.norm(cp.coeffs - v.model.coeffs)),
            float(np.linalg.norm(ff.coeffs - v.model.coeffs)))


VOWELS = {
    "iy": (270, 2290, 3010, 3500), "ih": (390, 1990, 2550, 3500),
    "eh": (530, 1840, 2480, 3500), "ae": (660, 1720, 2410, 3500),
    "aa": (730, 1090, 2440, 3500), "ao": (570, 840, 2410, 3500),
    "uh": (440, 1020, 2240, 3500), "uw": (300, 870, 2240, 3500),
    "ah": (520, 1190, 2390, 3500), "er": (490, 1350, 1690, 3500),
}
FRICATIVES = {"s": (4500, 6500), "sh": (2600, 4200), "f": (1800, 5500)}
VOWEL_BW = (60, 90, 120, 180)


@dataclass(frozen=True)
class SyntheticSpeaker:
    name: str
    f0: float = 110.0
    formant_scale: float = 1.0
    bandwidth_scale: float = 1.0
    open_quotient: float = 0.5
    return_tau: float = 3.0
    tempo: float = 1.0
    aspiration: float = 0.01


SPEAKERS = {
    "m1": SyntheticSpeaker("m1", f0=110.0, formant_scale=1.0, open_quotient=0.5, tempo=1.0),
    "f1": SyntheticSpeaker("f1", f0=190.0, formant_scale=1.17, bandwidth_scale=1.2,
                           open_quotient=0.6, return_tau=2.0, tempo=0.9),
    "m2": SyntheticSpeaker("m2", f0=95.0, formant_scale=0.92, bandwidth_scale=0.9,
                           open_quotient=0.45, return_tau=4.0, tempo=1.1),
}


def utterance_script(index, seed=0, n_phones=None):
    """Phone sequence for utterance `index`: pause, CV-ish syllables, pause."""
    rng = np.random.default_rng([seed, index])
    n = n_phones or int(rng.integers(6, 10))
    vowels, frics = list(VOWELS), list(FRICATIVES)
    phones = ["pau"]
    for i in range(n):
        if i % 3 == 2:
            phones.append(frics[int(rng.integers(len(frics)))])
        else:
            phones.append(vowels[int(rng.integers(len(vowels)))])
    phones.append("pau")
    base = [0.12 if p == "pau" else (0.09 if p in FRICATIVES else 0.15) for p in phones]
    return phones, np.array(base) * rng.uniform(0.85, 1.15, len(phones))


def speak(phones, durations, speaker: SyntheticSpeaker, fs=16000, seed=0, block=0.005):
    """Render a phone script with one speaker's voice."""
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(0.9, 1.1, len(durations))
    dur = np.asarray(durations) * speaker.tempo * jitter
    bounds = np.concatenate(([0], np.cumsum(np.round(dur * fs).astype(int))))
    n = int(bounds[-1])
    order = 2 * len(VOWEL_BW)

    # per-sample targets
    kind = np.empty(n, dtype=object)
    formants = np.zeros((n, len(VOWEL_BW)))
    for p, a, b in zip(phones, bounds[:-1], bounds[1:]):
        kind[a:b] = "v" if p in VOWELS else ("f" if p in FRICATIVES else "p")
        if p in VOWELS:
            formants[a:b] = np.array(VOWELS[p]) * speaker.formant_scale
        elif p in FRICATIVES:
            fr = FRICATIVES[p]
            formants[a:b] = (fr[0], fr[1], fr[1] + 500, min(fr[1] + 900, 0.45 * fs))
        else:
            formants[a:b] = np.array(VOWELS["ah"]) * speaker.formant_scale
    # smooth formant transitions over ~30 ms
    k = int(0.03 * fs)
    kern = np.ones(k) / k
    for j in range(formants.shape[1]):
        padded = np.concatenate((np.full(k, formants[0, j]), formants[:, j], np.full(k, formants[-1, j])))
        formants[:, j] = np.convolve(padded, kern, mode="same")[k:-k]
    formants = np.minimum(formants, 0.46 * fs)

    voiced = kind == "v"
    t = np.arange(n) / fs
    f0 = speaker.f0 * (1.1 - 0.2 * t / max(t[-1], 1e-9)) * (1 + 0.03 * np.sin(2 * np.pi * 3 * t))
    gcis = gci_positions(f0, fs, n)
    pulses = glottal_derivative(gcis, n, open_quotient=speaker.open_quotient,
                                return_tau=speaker.return_tau)
    env = np.convolve(voiced.astype(float), np.hanning(int(0.02 * fs)), mode="same")
    env /= max(env.max(), 1e-12)
    exc = pulses * env + speaker.aspiration * rng.standard_normal(n) * env
    fric = (kind == "f").astype(float)
    fenv = np.convolve(fric, np.hanning(int(0.02 * fs)), mode="same")
    fenv /= max(fenv.max(), 1e-12)
    exc += 0.02 * rng.standard_normal(n) * fenv
    exc += 1e-5 * rng.standard_normal(n)

    y = np.zeros(n)
    h = int(block * fs)
    bw = np.array(VOWEL_BW) * speaker.bandwidth_scale
    for s in range(0, n, h):
        e = min(s + h, n)
        c = (s + e) // 2
        fb = bw if kind[c] != "f" else bw * 6
        m = formant_model(formants[c], fb, fs)
        y[s:e] = lpc.synthesize(m, exc[s:e], y[max(0, s - order):s])
    return normalize_peak(Waveform(y / max(np.max(np.abs(y)), 1e-12), fs))


def make_parallel_corpus(n_pairs, source="m1", target="f1", fs=16000, seed=0,
                         first_index=0) -> ParallelCorpus:
    """In-memory parallel corpus; utterance k uses the same phone script for both speakers."""
    src = SPEAKERS[source] if isinstance(source, str) else source
    tgt = SPEAKERS[target] if isinstance(target, str) else target
    pairs = []
    for i in range(first_index, first_index + n_pairs):
        phones, durs = utterance_script(i, seed)
        a = speak(phones, durs, src, fs, seed=hash_seed(seed, i, src.name))
        b = a if src == tgt else speak(phones, durs, tgt, fs, seed=hash_seed(seed, i, tgt.name))
        pairs.append(UtterancePair(f"synth_{i:04d}", a, b))
    return ParallelCorpus(tuple(pairs), src.name, tgt.name)


def hash_seed(seed, index, name):
    return [seed, index] + [ord(c) for c in name]
