"""Training and applying a voice-conversion model.

Training: pitch -> GCIs -> two-period frames -> closed-phase LPC -> LSF
features -> DTW per utterance pair -> joint GMM over stacked [source; target]
vectors, plus one excitation prototype per mixture component built from the
target speaker's glottal residuals.

Conversion: the same analysis on the source utterance, LSFs mapped through the
joint GMM, excitation predicted from the prototypes (or the source residual
passed through), all-pole synthesis with filter-state carry-over and a
raised-cosine crossfade over each one-period overlap.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import glottal, gmm, lpc
from .align import FeatureSequence, WarpPath, dtw_align, paired_vectors
from .errors import (IncompatibleModelError, InstabilityError, InsufficientDataError,
                     ModelParseError, RateMismatchError, SynthesisDivergenceError)
from .wavio import ParallelCorpus, Waveform

log = logging.getLogger(__name__)

MODEL_FORMAT = "vcmorph-conversion-model"
MODEL_VERSION = 1
MIN_LSF_GAP = np.pi / 1024
EXCITATION_MODES = ("predicted", "passthrough")
PULSE_FITS = ("pad", "stretch")
FEATURE_KINDS = ("lsf", "lpc")
HISTORY_RMS_LIMIT = 3.0


@dataclass
class ConversionConfig:
    order: int = 18
    n_components: int = 5
    train_pairs: int | None = None
    excitation: str = "predicted"
    pulse_fit: str = "pad"
    seed: int = 0
    sample_rate: int = 16000
    feature: str = "lsf"
    include_gain: bool = False
    closed_phase: bool = True
    closed_phase_fraction: float = 0.4
    voicing_penalty: float = 1.0
    dtw_band: int | None = None
    prototype_length: int = 256
    max_iters: int = 100
    tol: float = 1e-6
    covariance_type: str = "full"
    variance_floor: float = 1e-6
    pitch: glottal.PitchConfig = field(default_factory=glottal.PitchConfig)

    def __post_init__(self):
        if isinstance(self.pitch, dict):
            self.pitch = glottal.PitchConfig(**self.pitch)
        if self.order < 1 or self.n_components < 1 or self.prototype_length < 2:
            raise ValueError("order, n_components and prototype_length must be positive")
        if self.train_pairs is not None and self.train_pairs < 1:
            raise ValueError("train_pairs must be positive")
        if self.excitation not in EXCITATION_MODES:
            raise ValueError(f"excitation must be one of {EXCITATION_MODES}")
        if self.pulse_fit not in PULSE_FITS:
            raise ValueError(f"pulse_fit must be one of {PULSE_FITS}")
        if self.feature not in FEATURE_KINDS:
            raise ValueError(f"feature must be one of {FEATURE_KINDS}")

    def em_config(self) -> gmm.EmConfig:
        return gmm.EmConfig(n_components=self.n_components, max_iters=self.max_iters,
                            tol=self.tol, covariance_type=self.covariance_type,
                            seed=self.seed, variance_floor=self.variance_floor)

    @property
    def feature_dim(self):
        return self.order + int(self.include_gain)


# ---------------------------------------------------------------- features

def model_features(m: lpc.LpcModel, cfg: ConversionConfig) -> np.ndarray:
    if cfg.feature == "lsf":
        try:
            v = lpc.lpc_to_lsf(m).freqs
        except InstabilityError:
            v = lpc.lpc_to_lsf(lpc.stabilize(m, 0.99)).freqs
    else:
        v = m.coeffs.copy()
    if cfg.include_gain:
        v = np.append(v, np.log(m.gain + 1e-8))
    return v


def features_to_model(y, gain, cfg: ConversionConfig) -> lpc.LpcModel:
    """Filter for a regressed feature vector; LSFs are projected onto the stable cone first."""
    y = np.asarray(y)[: cfg.order]
    if cfg.feature == "lsf":
        m = lpc.lsf_to_lpc(lpc.project_lsf(y, MIN_LSF_GAP), gain)
        # tight LSF clusters are stable in exact arithmetic but not after rounding to
        # direct-form coefficients
        return m if m.is_stable() else lpc.stabilize(m)
    return lpc.stabilize(lpc.LpcModel(y, gain))


@dataclass
class UtteranceFeatures:
    analysis: glottal.Analysis
    features: FeatureSequence
    silent: np.ndarray

    @property
    def frames(self):
        return self.analysis.frames


def analyze_utterance(w: Waveform, cfg: ConversionConfig) -> UtteranceFeatures:
    a = glottal.analyze(w, cfg.order, cfg.pitch, cfg.closed_phase, cfg.closed_phase_fraction)
    feats = np.array([model_features(f.lpc, cfg) for f in a.frames])
    seq = FeatureSequence(feats, timing=[f.start for f in a.frames],
                          voiced=[f.voiced for f in a.frames])
    return UtteranceFeatures(a, seq, np.array([f.silent for f in a.frames], dtype=bool))


def align_utterances(src: UtteranceFeatures, tgt: UtteranceFeatures,
                     cfg: ConversionConfig) -> WarpPath:
    # align on the spectral part only
    s = FeatureSequence(src.features.frames[:, : cfg.order], voiced=src.features.voiced)
    t = FeatureSequence(tgt.features.frames[:, : cfg.order], voiced=tgt.features.voiced)
    return dtw_align(s, t, cfg.voicing_penalty, cfg.dtw_band)


# ---------------------------------------------------------------- excitation

def resample_periodic(x, n_out: int) -> np.ndarray:
    """Linear interpolation of one cycle of a periodic sequence onto n_out points."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n_out == n:
        return x.copy()
    pos = np.arange(n_out) * (n / n_out)
    return np.interp(pos, np.arange(n), x, period=n)


def resample_periods(x, split, n_out: int, out_split=None) -> np.ndarray:
    """Resample a two-period segment piecewise so both closure instants stay aligned.

    `split` is the index of the inner period boundary in `x`; it lands on
    `out_split` (default n_out // 2) in the output.
    """
    x = np.asarray(x, dtype=np.float64)
    if out_split is None:
        out_split = n_out // 2
    if split is None or not 0 < split < x.size or not 0 < out_split < n_out:
        return resample_periodic(x, n_out)
    return np.concatenate([resample_periodic(x[:split], out_split),
                           resample_periodic(x[split:], n_out - out_split)])


def _unit_rms(x):
    r = float(np.sqrt(np.mean(x * x)))
    return x / r if r > 0 else x


@dataclass(frozen=True, eq=False)
class ConversionModel:
    joint: gmm.JointGmm
    prototypes: np.ndarray
    prototype_period: np.ndarray
    prototype_gain: np.ndarray
    config: ConversionConfig
    summary: dict = field(default_factory=dict)
    version: int = MODEL_VERSION

    def __post_init__(self):
        K = self.joint.n_components
        if self.prototypes.shape[0] != K:
            raise ValueError("need one excitation prototype per mixture component")
        if self.joint.split != self.config.feature_dim:
            raise ValueError("joint model dimension does not match the feature config")

    @property
    def n_components(self):
        return self.joint.n_components

    @property
    def sample_rate(self):
        return self.config.sample_rate


def fit_period(x, n: int, keep: float = 0.0) -> np.ndarray:
    """Fit one residual period to n samples without changing the pulse shape.

    Longer periods get zeros inserted `keep` of the way in; the default puts
    them at the period start so the pulse stays anchored to the next closure.
    Shorter periods fall back to resampling.
    """
    x = np.asarray(x, dtype=np.float64)
    t = x.size
    if n <= t:
        return x.copy() if n == t else resample_periodic(x, n)
    r = int(round(keep * t))
    return np.concatenate([x[:r], np.zeros(n - t), x[r:]])


def predict_excitation(model: ConversionModel, features, responsibilities,
                       source_residual, pitch_period, split=None) -> np.ndarray:
    """Responsibility-weighted prototype, fitted to two source pitch periods.

    Scaled to the RMS of the source residual, so loudness follows the source.
    `features` (the converted vocal-tract vector) only enters through the
    responsibilities it produced. With `split` (inner closure index of the
    source frame) each prototype period is mapped onto its own source period.

    pulse_fit="stretch" resamples the template; "pad" first restores the
    target's own period length and then pads or shortens the closed phase.
    """
    h = np.asarray(responsibilities, dtype=np.float64)
    if pitch_period <= 0:
        raise ValueError("pitch period must be positive")
    blend = _unit_rms(h @ model.prototypes)
    L = blend.size
    n = int(round(2 * pitch_period))
    src = np.asarray(source_residual, dtype=np.float64)
    scale = float(np.sqrt(np.mean(src * src))) if src.size else 0.0
    cut = split if split is not None and n == src.size and 0 < split < n else n // 2
    if model.config.pulse_fit == "stretch":
        e = resample_periods(blend, L // 2, n, cut)
    else:
        t = max(2, int(round(float(h @ model.prototype_period) / h.sum())))
        e = np.concatenate([fit_period(resample_periodic(blend[: L // 2], t), cut),
                            fit_period(resample_periodic(blend[L // 2:], t), n - cut)])
    return scale * _unit_rms(e)


def normalize_residuals(residuals, splits, length) -> np.ndarray:
    """Unit-RMS residuals, length-normalized period by period (at `splits`)
    so the closure pulses line up."""
    if splits is None:
        splits = [None] * len(residuals)
    return np.array([_unit_rms(resample_periods(r, sp, length))
                     for r, sp in zip(residuals, splits)]).reshape(-1, length)


def build_prototypes(joint: gmm.JointGmm, Z, residuals, periods, gains, length, splits=None):
    """Per-component responsibility-weighted mean of unit-RMS target residuals.

    `residuals` may also be the (n, length) output of normalize_residuals.
    """
    R = np.asarray(residuals) if isinstance(residuals, np.ndarray) else \
        normalize_residuals(residuals, splits, length)
    H = gmm.posterior(joint.base, Z)
    H = np.atleast_2d(H)
    mass = H.sum(axis=0)
    K = joint.n_components
    overall = _unit_rms(R.mean(axis=0))
    protos = np.empty((K, length))
    per = np.empty(K)
    gain = np.empty(K)
    for k in range(K):
        if mass[k] > 1e-9:
            protos[k] = _unit_rms(H[:, k] @ R / mass[k])
            per[k] = H[:, k] @ periods / mass[k]
            gain[k] = H[:, k] @ gains / mass[k]
        else:
            protos[k] = overall
            per[k] = float(np.mean(periods))
            gain[k] = float(np.mean(gains))
        if not np.any(protos[k]):
            protos[k] = overall
    return protos, per, gain


# ---------------------------------------------------------------- training

def _inner_split(f) -> int | None:
    return f.gci[1] - f.start if len(f.gci) > 1 else None


@dataclass
class TrainingSet:
    vectors: np.ndarray
    voiced: np.ndarray
    residuals: list
    splits: list
    periods: np.ndarray
    gains: np.ndarray
    n_pairs: int
    _normalized: dict = field(default_factory=dict, repr=False)

    def normalized_residuals(self, length: int) -> np.ndarray:
        if length not in self._normalized:
            self._normalized[length] = normalize_residuals(self.residuals, self.splits, length)
        return self._normalized[length]


def collect_training_vectors(features, cfg: ConversionConfig) -> TrainingSet:
    """Pool DTW-aligned [source; target] vectors over utterance pairs.

    Pairs touching a silent frame or crossing the voicing classes are dropped.
    """
    Z, V, res, per, gains, splits = [], [], [], [], [], []
    for src, tgt in features:
        path = align_utterances(src, tgt, cfg)
        z = paired_vectors(src.features, tgt.features, path)
        for (i, j), row in zip(path.pairs, z):
            if src.silent[i] or tgt.silent[j]:
                continue
            fi, fj = src.frames[i], tgt.frames[j]
            if fi.voiced != fj.voiced:
                continue
            Z.append(row)
            V.append(fi.voiced)
            if fi.voiced:
                res.append(fj.residual)
                splits.append(_inner_split(fj))
                per.append(fj.pitch_period)
                gains.append(fj.lpc.gain)
    dim = 2 * cfg.feature_dim
    return TrainingSet(np.array(Z).reshape(-1, dim), np.array(V, dtype=bool), res, splits,
                       np.array(per), np.array(gains), len(features))


def extract_pair_features(corpus: ParallelCorpus, cfg: ConversionConfig):
    out = []
    for p in corpus.pairs:
        for w in (p.source, p.target):
            if w.sample_rate != cfg.sample_rate:
                raise RateMismatchError(f"{p.id}: rate {w.sample_rate} != configured {cfg.sample_rate}")
        out.append((analyze_utterance(p.source, cfg), analyze_utterance(p.target, cfg)))
    return out


def train_from_features(features, cfg: ConversionConfig) -> ConversionModel:
    return fit_model(collect_training_vectors(features, cfg), cfg)


def fit_model(data: TrainingSet, cfg: ConversionConfig) -> ConversionModel:
    """EM on pooled aligned vectors, then the excitation prototypes."""
    n_voiced = int(data.voiced.sum())
    need = 10 * cfg.n_components
    if n_voiced < need:
        raise InsufficientDataError(
            f"{n_voiced} aligned voiced vector pairs ({len(data.vectors)} total) "
            f"from {data.n_pairs} utterance pairs; need at least {need} for "
            f"{cfg.n_components} components")
    base = gmm.em_fit(data.vectors, cfg.em_config())
    joint = gmm.JointGmm(base, cfg.feature_dim)
    v = data.voiced
    protos, per, gain = build_prototypes(joint, data.vectors[v],
                                         data.normalized_residuals(cfg.prototype_length),
                                         data.periods, data.gains, cfg.prototype_length)
    summary = {"pairs": data.n_pairs, "vectors": int(len(data.vectors)),
               "voiced_vectors": n_voiced, "em_iterations": len(base.history),
               "log_likelihood": base.history[-1]}
    log.info("trained K=%d on %d vectors (%d voiced) from %d pairs, avg log-lik %.4f",
             cfg.n_components, len(data.vectors), n_voiced, data.n_pairs, base.history[-1])
    return ConversionModel(joint, protos, per, gain, cfg, summary)


def train(corpus: ParallelCorpus, cfg: ConversionConfig | None = None) -> ConversionModel:
    cfg = cfg or ConversionConfig()
    if len(corpus) == 0:
        raise InsufficientDataError("empty corpus")
    if cfg.train_pairs is not None:
        if cfg.train_pairs > len(corpus):
            raise InsufficientDataError(
                f"train_pairs={cfg.train_pairs} exceeds corpus size {len(corpus)}")
        corpus = corpus.subset(corpus.ids[: cfg.train_pairs])
    return train_from_features(extract_pair_features(corpus, cfg), cfg)


# ---------------------------------------------------------------- conversion

@dataclass
class ConversionResult:
    waveform: Waveform
    flagged_frames: int
    frames: int
    voiced_frames: int


def _crossfade_weights(frames, n):
    """Per-frame raised-cosine tapers over the overlaps with neighbouring frames."""
    out = []
    for i, f in enumerate(frames):
        L = len(f)
        w = np.ones(L)
        if i > 0:
            ov = min(frames[i - 1].end, f.end) - f.start
            if ov > 0:
                t = (np.arange(ov) + 0.5) / ov
                w[:ov] *= np.sin(0.5 * np.pi * t) ** 2
        if i + 1 < len(frames):
            ov = f.end - frames[i + 1].start
            if ov > 0:
                ov = min(ov, L)
                t = (np.arange(ov) + 0.5) / ov
                w[L - ov:] *= np.cos(0.5 * np.pi * t) ** 2
        out.append(w)
    return out


def _loudness_gain(m: lpc.LpcModel, exc, reference, history=None) -> float:
    """Excitation gain g giving the frame synthesis the RMS of `reference`.

    Synthesis is linear in g on top of the free response f of the carried
    filter state: y = g z + f. The positive root of |g z + f|^2 = |reference|^2
    is used; without one (the free response alone is too loud) the zero-state
    match want / rms(z) is returned.
    """
    ref = np.asarray(reference, dtype=np.float64)
    want2 = float(np.dot(ref, ref))
    if want2 == 0.0 or not np.any(exc):
        return 1.0
    z = lpc.synthesize(m, exc, np.zeros(0))
    a = float(np.dot(z, z))
    if not np.isfinite(a) or a == 0.0:
        return 1.0
    if history is not None and np.any(history):
        f = lpc.synthesize(m, np.zeros(ref.size), history)
        b = float(np.dot(z, f))
        c = float(np.dot(f, f)) - want2
        disc = b * b - a * c
        if disc >= 0:
            g = (-b + np.sqrt(disc)) / a
            if g > 0:
                return g
    return float(np.sqrt(want2 / a))


def convert(model: ConversionModel, src: Waveform, details: bool = False,
            features: UtteranceFeatures | None = None):
    """Convert a source utterance; returns a Waveform (or ConversionResult if `details`).

    `features` may carry a precomputed analysis of `src` under the model's config.
    """
    cfg = model.config
    if src.sample_rate != cfg.sample_rate:
        raise RateMismatchError(f"input rate {src.sample_rate} != model rate {cfg.sample_rate}")
    n = len(src)
    if src.peak == 0.0:
        result = ConversionResult(src.with_samples(np.zeros(n)), 0, 0, 0)
        return result if details else result.waveform

    uf = features or analyze_utterance(src, cfg)
    frames = uf.frames
    active = np.flatnonzero(~uf.silent)
    Y = np.zeros((len(frames), cfg.feature_dim))
    H = np.zeros((len(frames), model.n_components))
    if active.size:
        Y[active], H[active] = gmm.regress(model.joint, uf.features.frames[active],
                                           return_posterior=True)

    acc = np.zeros(n)
    wsum = np.zeros(n)
    weights = _crossfade_weights(frames, n)
    flagged = 0
    p = cfg.order
    for idx, (f, w) in enumerate(zip(frames, weights)):
        s, e = f.start, f.end
        if uf.silent[idx]:
            y = f.samples
        else:
            m = features_to_model(Y[idx], f.lpc.gain, cfg)
            if f.voiced and cfg.excitation == "predicted":
                exc = predict_excitation(model, Y[idx], H[idx], f.residual, f.pitch_period,
                                         _inner_split(f))
            else:
                exc = f.residual
            lo = max(0, s - p)
            ws = wsum[lo:s]
            hist = np.divide(acc[lo:s], ws, out=np.zeros(s - lo), where=ws > 0)
            exc = exc * _loudness_gain(m, exc, f.samples, hist)
            try:
                y = lpc.synthesize(m, exc, hist)
                # the free response of a very different filter can swamp the frame
                ref = np.sqrt(np.mean(f.samples ** 2))
                if np.sqrt(np.mean(y * y)) > HISTORY_RMS_LIMIT * ref:
                    y = lpc.synthesize(m, exc, np.zeros(0))
                limit = 100.0 * max(np.max(np.abs(f.samples)), 1e-6)
                if np.max(np.abs(y)) > limit:
                    raise SynthesisDivergenceError("synthesized frame exploded")
            except SynthesisDivergenceError:
                log.warning("synthesis diverged in frame at sample %d; using source frame", s)
                flagged += 1
                y = f.samples
        acc[s:e] += w * y
        wsum[s:e] += w
    out = np.divide(acc, wsum, out=np.zeros(n), where=wsum > 0)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= src.peak / peak
    result = ConversionResult(src.with_samples(out), flagged, len(frames),
                              int(sum(f.voiced for f in frames)))
    return result if details else result.waveform


# ---------------------------------------------------------------- persistence

def _config_to_dict(cfg: ConversionConfig) -> dict:
    return asdict(cfg)


def model_to_dict(model: ConversionModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": model.version,
        "config": _config_to_dict(model.config),
        "split": model.joint.split,
        "feature_space": model.config.feature,
        "gmm": gmm.gmm_to_dict(model.joint.base),
        "prototypes": model.prototypes.tolist(),
        "prototype_period": model.prototype_period.tolist(),
        "prototype_gain": model.prototype_gain.tolist(),
        "summary": model.summary,
    }


def model_from_dict(doc: dict) -> ConversionModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelParseError("not a conversion model file")
    if doc.get("version") != MODEL_VERSION:
        raise IncompatibleModelError(f"model version {doc.get('version')} != {MODEL_VERSION}")
    try:
        cfg = ConversionConfig(**doc["config"])
        base = gmm.gmm_from_dict(doc["gmm"])
        joint = gmm.JointGmm(base, int(doc["split"]))
        protos = np.array(doc["prototypes"], dtype=np.float64).reshape(base.n_components, -1)
        return ConversionModel(joint, protos,
                               np.array(doc["prototype_period"], dtype=np.float64),
                               np.array(doc["prototype_gain"], dtype=np.float64),
                               cfg, dict(doc.get("summary", {})), int(doc["version"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"malformed model: {exc}") from exc


def save_model(model: ConversionModel, path) -> None:
    """Write the model as JSON (floats round-trip exactly); atomic rename."""
    path = Path(path)
    text = json.dumps(model_to_dict(model), sort_keys=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path) -> ConversionModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc)
