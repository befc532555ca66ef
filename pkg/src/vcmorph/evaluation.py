"""Objective metrics and the training-size x mixture-size experiment grid."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import correlate

from . import conversion, glottal, lpc
from .align import FeatureSequence, dtw_align
from .errors import (EmptySignalError, NoSpeechError, RateMismatchError,
                     UndefinedReferenceError, VcError)
from .wavio import ParallelCorpus, Waveform

log = logging.getLogger(__name__)

SNR_CAP_DB = 100.0
CSV_HEADER = ("training_pairs", "gaussians", "time_s", "snr_db", "avg_sd")
SNR_DEFINITION = ("SNR = 10 log10(sum r^2 / sum (r - t/g)^2) with t shifted by the best "
                  "cross-correlation lag within +-25 ms and g = <r,t>/<r,r>; capped at +-100 dB")
SD_DEFINITION = ("average over DTW-aligned voiced frames of the RMS difference (dB) between "
                 "512-point LPC envelopes")


def _check_pair(a: Waveform, b: Waveform):
    if len(a) == 0 or len(b) == 0:
        raise EmptySignalError("cannot compare empty signals")
    if a.sample_rate != b.sample_rate:
        raise RateMismatchError(f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")


def best_lag(reference, test, max_lag):
    """Lag L maximising sum_n r[n] t[n+L] over |L| <= max_lag."""
    c = correlate(test, reference, mode="full", method="auto")
    zero = reference.size - 1
    lo = max(0, zero - max_lag)
    hi = min(c.size, zero + max_lag + 1)
    return int(np.argmax(c[lo:hi]) + lo - zero)


def snr_db(reference: Waveform, test: Waveform, max_lag: float = 0.025) -> float:
    """Waveform SNR of `test` against `reference` after lag and gain compensation.

    The test signal is shifted by the lag that maximises cross-correlation
    (within +-max_lag seconds), then divided by g = <r, t>/<r, r>, the gain
    that best explains the test as a scaled reference. Identical signals give
    +100 dB; uncorrelated or anti-correlated ones give -100 dB.
    """
    _check_pair(reference, test)
    r, t = reference.samples, test.samples
    if not np.any(r):
        raise UndefinedReferenceError("reference has zero energy")
    lag = best_lag(r, t, int(round(max_lag * reference.sample_rate)))
    if lag >= 0:
        t = t[lag:]
    else:
        r = r[-lag:]
    n = min(r.size, t.size)
    r, t = r[:n], t[:n]
    err = float(np.dot(r, r))
    if err == 0.0:
        raise UndefinedReferenceError("reference has zero energy in the overlap")
    g = float(np.dot(r, t)) / err
    if g <= 0:
        return -SNR_CAP_DB
    noise = float(np.sum((r - t / g) ** 2))
    if noise <= err * 10 ** (-SNR_CAP_DB / 10):
        return SNR_CAP_DB
    return float(max(-SNR_CAP_DB, 10.0 * math.log10(err / noise)))


def voiced_envelopes(w: Waveform, order: int = 18, n_points: int = 512,
                     pitch_cfg: glottal.PitchConfig | None = None):
    """LPC envelopes (dB) and LSFs of the non-silent voiced pitch-synchronous frames."""
    a = glottal.analyze(w, order, pitch_cfg, closed_phase=False)
    env, feats = [], []
    for f in a.frames:
        if f.voiced and not f.silent:
            env.append(lpc.spectral_envelope(f.lpc, n_points))
            feats.append(lpc.lpc_to_lsf(f.lpc).freqs)
    if not env:
        raise NoSpeechError("no voiced frames found")
    return np.array(env), np.array(feats)


def avg_spectral_distortion(a: Waveform, b: Waveform, order: int = 18, n_points: int = 512,
                            pitch_cfg=None, return_count=False):
    """Mean RMS log-spectral distance (dB) between DTW-aligned voiced frames."""
    _check_pair(a, b)
    ea, fa = voiced_envelopes(a, order, n_points, pitch_cfg)
    eb, fb = voiced_envelopes(b, order, n_points, pitch_cfg)
    path = dtw_align(FeatureSequence(fa), FeatureSequence(fb), voicing_penalty=0.0)
    i, j = path.pairs[:, 0], path.pairs[:, 1]
    d = np.sqrt(np.mean((ea[i] - eb[j]) ** 2, axis=1))
    sd = float(np.mean(d))
    return (sd, len(path)) if return_count else sd


@dataclass
class EvalReport:
    snr_db: float
    avg_spectral_distortion: float
    frames_compared: int
    flagged_frames: int = 0

    def lines(self):
        return [f"snr_db {self.snr_db:.4f}",
                f"avg_sd {self.avg_spectral_distortion:.4f}",
                f"frames_compared {self.frames_compared}",
                f"flagged_frames {self.flagged_frames}"]


def evaluate(converted: Waveform, target: Waveform, flagged_frames: int = 0,
             order: int = 18, pitch_cfg=None) -> EvalReport:
    """SNR and average spectral distortion of a converted utterance against the target recording."""
    snr = snr_db(target, converted)
    sd, n = avg_spectral_distortion(converted, target, order, pitch_cfg=pitch_cfg,
                                    return_count=True)
    return EvalReport(snr, sd, n, flagged_frames)


# ---------------------------------------------------------------- experiment grid

@dataclass
class ExperimentRow:
    training_pairs: int
    gaussians: int
    time_s: float
    snr_db: float
    avg_sd: float
    error: str | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, ExperimentRow):
            return NotImplemented

        def same(x, y):
            return (math.isnan(x) and math.isnan(y)) or x == y
        return (self.training_pairs == other.training_pairs and self.gaussians == other.gaussians
                and same(self.time_s, other.time_s) and same(self.snr_db, other.snr_db)
                and same(self.avg_sd, other.avg_sd))


@dataclass
class ExperimentGrid:
    rows: list

    def __eq__(self, other):
        return isinstance(other, ExperimentGrid) and self.rows == other.rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.training_pairs, r.gaussians, repr(float(r.time_s)),
                        repr(float(r.snr_db)), repr(float(r.avg_sd))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentGrid":
        rd = csv.reader(io.StringIO(text))
        header = next(rd)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [ExperimentRow(int(a), int(b), float(c), float(d), float(e))
                for a, b, c, d, e in rd if a]
        return cls(rows)

    def table(self) -> str:
        head = f"{'pairs':>5} {'K':>3} {'time_s':>8} {'snr_db':>8} {'avg_sd':>8}  MOS"
        lines = [head]
        for r in self.rows:
            line = f"{r.training_pairs:>5} {r.gaussians:>3} {r.time_s:8.3f} {r.snr_db:8.4f} {r.avg_sd:8.4f}  n/a"
            if r.error:
                line += f"  error: {r.error}"
            lines.append(line)
        lines.append("MOS (listening-test quality) is subjective and not computed.")
        return "\n".join(lines)


def run_experiment(corpus: ParallelCorpus, training_pairs=(2, 8), gaussians=(1, 3, 5, 10),
                   n_eval: int = 6, base_cfg: conversion.ConversionConfig | None = None,
                   seed: int | None = None, timing_repeats: int = 5) -> ExperimentGrid:
    """Train and evaluate one model per (training pairs, K) cell.

    Training uses the first pairs of the corpus, evaluation the last `n_eval`
    (held-out source utterances converted and compared with the target
    recordings). Analysis and alignment are shared across cells and `time_s`
    is the wall time of fitting the cell's model (EM plus prototypes), which
    is the part that depends on K; fitting is deterministic, so the fastest of
    `timing_repeats` fits is reported. A failing cell is logged and recorded
    with NaN metrics.
    """
    base = base_cfg or conversion.ConversionConfig()
    if seed is not None:
        base = replace(base, seed=seed)
    need = max(training_pairs) + n_eval
    if len(corpus) < need:
        raise VcError(f"corpus has {len(corpus)} pairs; grid needs {need}")
    train_ids = corpus.ids[: max(training_pairs)]
    eval_pairs = corpus.pairs[len(corpus) - n_eval:]

    feats = conversion.extract_pair_features(corpus.subset(train_ids), base)
    eval_feats = [conversion.analyze_utterance(p.source, base) for p in eval_pairs]
    rows = []
    for n_train in training_pairs:
        # DTW pairing does not depend on K either
        data = conversion.collect_training_vectors(feats[:n_train], base)
        data.normalized_residuals(base.prototype_length)
        for K in gaussians:
            cfg = replace(base, n_components=K, train_pairs=n_train)
            t0 = time.perf_counter()
            try:
                elapsed = float("inf")
                for _ in range(max(1, timing_repeats)):
                    t0 = time.perf_counter()
                    model = conversion.fit_model(data, cfg)
                    elapsed = min(elapsed, time.perf_counter() - t0)
                snrs, sds = [], []
                for p, uf in zip(eval_pairs, eval_feats):
                    res = conversion.convert(model, p.source, details=True, features=uf)
                    rep = evaluate(res.waveform, p.target, res.flagged_frames, cfg.order, cfg.pitch)
                    snrs.append(rep.snr_db)
                    sds.append(rep.avg_spectral_distortion)
                rows.append(ExperimentRow(n_train, K, elapsed, float(np.mean(snrs)), float(np.mean(sds))))
            except VcError as exc:
                log.error("cell pairs=%d K=%d failed: %s", n_train, K, exc)
                rows.append(ExperimentRow(n_train, K, time.perf_counter() - t0,
                                          float("nan"), float("nan"), str(exc)))
            log.info("cell pairs=%d K=%d done", n_train, K)
    return ExperimentGrid(rows)
