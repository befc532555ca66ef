"""Linear prediction: analysis, LSF conversion, inverse filtering and synthesis.

Predictor convention: x_hat[n] = sum_k a_k x[n-k], so the inverse filter is
A(z) = 1 - sum_k a_k z^-k and synthesis runs 1 / A(z).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter, lfiltic

from .errors import (DegenerateSignalError, InstabilityError, OrderingError,
                     SizeError, SynthesisDivergenceError)

log = logging.getLogger(__name__)

LSF_GRID = 4096
BANDWIDTH_EXPANSION = 0.994
MARGINAL_RADIUS = 0.999


@dataclass(frozen=True, eq=False)
class LpcModel:
    coeffs: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if a.size < 1:
            raise ValueError("LPC order must be positive")
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite LPC coefficients")
        if not (np.isfinite(self.gain) and self.gain >= 0):
            raise ValueError(f"gain must be finite and nonnegative, got {self.gain}")
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "gain", float(self.gain))

    @property
    def order(self):
        return self.coeffs.size

    @property
    def polynomial(self):
        """Inverse-filter polynomial [1, -a_1, ..., -a_p] in powers of z^-1."""
        return np.concatenate(([1.0], -self.coeffs))

    def pole_radius(self):
        return float(np.max(np.abs(np.roots(self.polynomial)))) if self.order else 0.0

    def is_stable(self):
        return self.pole_radius() < 1.0

    def with_gain(self, gain):
        return LpcModel(self.coeffs, gain)

    @classmethod
    def flat(cls, order, gain=0.0):
        return cls(np.zeros(order), gain)


@dataclass(frozen=True, eq=False)
class LsfVector:
    freqs: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=np.float64).reshape(-1)
        if f.size < 1:
            raise OrderingError("empty LSF vector")
        if not (np.all(np.isfinite(f)) and f[0] > 0 and f[-1] < np.pi and np.all(np.diff(f) > 0)):
            raise OrderingError("LSFs must be strictly increasing inside (0, pi)")
        f.setflags(write=False)
        object.__setattr__(self, "freqs", f)

    @property
    def order(self):
        return self.freqs.size


def autocorrelate(frame, max_lag: int) -> np.ndarray:
    """r[k] = sum_n x[n] x[n+k] for k = 0..max_lag."""
    x = np.asarray(frame, dtype=np.float64)
    n = x.size
    if n < max_lag + 1:
        raise SizeError(f"frame of {n} samples too short for lag {max_lag}")
    return np.array([np.dot(x[:n - k], x[k:]) for k in range(max_lag + 1)])


def levinson_durbin(r, p: int) -> LpcModel:
    """Solve the Yule-Walker equations for an order-p predictor.

    The returned gain is sqrt of the final prediction error, in the same
    units as r. If the error vanishes before order p, the remaining
    coefficients are left at zero.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.size < p + 1:
        raise SizeError(f"need {p + 1} autocorrelation lags, got {r.size}")
    if not r[0] > 0:
        raise DegenerateSignalError("r[0] must be positive")
    a = np.zeros(p)
    err = r[0]
    for i in range(p):
        k = (r[i + 1] - np.dot(a[:i], r[i:0:-1])) / err
        a[:i] = a[:i] - k * a[:i][::-1]
        a[i] = k
        err *= 1.0 - k * k
        if err <= r[0] * 1e-15:
            if i + 1 < p:
                warnings.warn(f"prediction error vanished at order {i + 1} of {p}; "
                              "padding with zeros", RuntimeWarning, stacklevel=2)
            err = max(err, 0.0)
            break
    return LpcModel(a, np.sqrt(err))


def lpc_analysis(frame, order: int, window: str | None = "hann") -> LpcModel:
    """Autocorrelation-method LPC of one frame; gain is the residual RMS.

    Frames with no energy get a flat model with zero gain.
    """
    x = np.asarray(frame, dtype=np.float64)
    if window == "hann":
        x = x * np.hanning(x.size + 2)[1:-1]
    r = autocorrelate(x, order) / x.size
    if r[0] <= 1e-20:
        return LpcModel.flat(order)
    # white-noise correction keeps the Toeplitz matrix well conditioned
    r[0] *= 1.0 + 1e-9
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return levinson_durbin(r, order)


def reflection_coefficients(m: LpcModel) -> np.ndarray:
    """Step-down recursion; |k_i| < 1 for all i iff the model is stable."""
    a = m.coeffs.copy()
    p = a.size
    k = np.zeros(p)
    for i in range(p, 0, -1):
        k[i - 1] = a[i - 1]
        if abs(k[i - 1]) >= 1.0:
            raise InstabilityError(f"reflection coefficient {i} has magnitude >= 1")
        if i > 1:
            a = (a[: i - 1] + k[i - 1] * a[: i - 1][::-1]) / (1.0 - k[i - 1] ** 2)
    return k


def power_gain(m: LpcModel) -> float:
    """Output power of 1/A(z) driven by unit-variance white noise."""
    k = reflection_coefficients(m)
    return float(1.0 / np.prod(1.0 - k * k))


def bandwidth_expand(m: LpcModel, gamma: float = BANDWIDTH_EXPANSION) -> LpcModel:
    return LpcModel(m.coeffs * gamma ** np.arange(1, m.order + 1), m.gain)


def stabilize(m: LpcModel, max_radius: float = MARGINAL_RADIUS) -> LpcModel:
    """Reflect poles outside the unit circle, then expand bandwidth until the
    largest pole radius is below `max_radius`."""
    poles = np.roots(m.polynomial)
    if poles.size and np.max(np.abs(poles)) >= 1.0:
        outside = np.abs(poles) >= 1.0
        poles[outside] = 1.0 / np.conj(poles[outside])
        # pole exactly on the circle stays there; nudge it inward
        on = np.abs(poles) >= 1.0
        poles[on] *= max_radius
        poly = np.real(np.poly(poles))
        m = LpcModel(-poly[1:], m.gain)
    while m.pole_radius() >= max_radius:
        m = bandwidth_expand(m)
    return m


def _sum_diff_polynomials(m: LpcModel):
    """Deflated symmetric P and Q polynomials (trivial roots at z = +-1 removed)."""
    a = m.polynomial
    ext = np.concatenate((a, [0.0]))
    rev = ext[::-1]
    P, Q = ext + rev, ext - rev
    p = m.order
    if p % 2 == 0:
        P = _deflate(P, [1.0, 1.0])
        Q = _deflate(Q, [1.0, -1.0])
    else:
        Q = _deflate(Q, [1.0, 0.0, -1.0])
    return P, Q


def _deflate(poly, divisor):
    # synthetic division in powers of z^-1; remainder is zero by construction
    q = lfilter([1.0], divisor, poly)[: poly.size - len(divisor) + 1]
    return q


def _cos_series(c):
    """Return f(w) = real(exp(j w n/2) C(e^jw)) for a symmetric polynomial c."""
    n = c.size - 1
    k = np.arange(c.size)
    half = n / 2.0 - k
    return lambda w: np.cos(np.multiply.outer(w, half)) @ c


def _roots_on_circle(c, expected, grid):
    f = _cos_series(c)
    for mult in (1, 8, 64):
        w = np.linspace(0.0, np.pi, grid * mult + 1)
        v = f(w)
        idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
        exact = np.nonzero(v[1:-1] == 0.0)[0] + 1
        if len(idx) + len(exact) == expected:
            break
    else:
        return None
    roots = [w[i] for i in exact]
    for i in idx:
        roots.append(brentq(lambda t: float(f(np.array([t]))[0]), w[i], w[i + 1],
                            xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return np.sort(np.array(roots))


def lpc_to_lsf(m: LpcModel) -> LsfVector:
    """Line spectral frequencies of a stable model.

    Roots of the sum/difference polynomials are bracketed on a uniform grid
    of pi/4096 (refined if roots are missed) and polished with Brent's method.
    """
    p = m.order
    P, Q = _sum_diff_polynomials(m)
    n_p = (p + 1) // 2
    n_q = p // 2
    wp = _roots_on_circle(P, n_p, LSF_GRID)
    wq = _roots_on_circle(Q, n_q, LSF_GRID)
    if wp is None or wq is None:
        raise InstabilityError("LSFs not found on the unit circle; model is unstable")
    freqs = np.empty(p)
    freqs[0::2] = wp
    freqs[1::2] = wq
    if not (freqs[0] > 0 and freqs[-1] < np.pi and np.all(np.diff(freqs) > 0)):
        raise InstabilityError("LSFs do not interleave; model is unstable")
    return LsfVector(freqs)


def lsf_to_lpc(v: LsfVector | np.ndarray, gain: float = 1.0) -> LpcModel:
    if not isinstance(v, LsfVector):
        v = LsfVector(v)
    f = v.freqs
    p = f.size

    def product(ws):
        poly = np.array([1.0])
        for w in ws:
            poly = np.convolve(poly, [1.0, -2.0 * np.cos(w), 1.0])
        return poly

    P = product(f[0::2])
    Q = product(f[1::2])
    if p % 2 == 0:
        P = np.convolve(P, [1.0, 1.0])
        Q = np.convolve(Q, [1.0, -1.0])
    else:
        Q = np.convolve(Q, [1.0, 0.0, -1.0])
    a = 0.5 * (P + Q)[: p + 1]
    return LpcModel(-a[1:], gain)


def project_lsf(freqs, min_gap: float = np.pi / 1024) -> np.ndarray:
    """Euclidean projection onto {min_gap <= f_1, f_i + min_gap <= f_{i+1}, f_p <= pi - min_gap}.

    Substituting u_i = f_i - i*min_gap turns the gap constraints into
    monotonicity, solved by pool-adjacent-violators and clipped to the box.
    """
    f = np.asarray(freqs, dtype=np.float64)
    p = f.size
    if (p + 1) * min_gap >= np.pi:
        raise ValueError("min_gap too large for this order")
    steps = min_gap * np.arange(p)
    u = _isotonic(f - steps)
    u = np.clip(u, min_gap, np.pi - min_gap * p)
    return u + steps


def _isotonic(y):
    blocks = []  # (mean, weight)
    for v in y:
        blocks.append([v, 1.0])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2 = blocks.pop()
            m1, w1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2])
    return np.concatenate([np.full(int(w), m) for m, w in blocks])


def _history(history, p):
    h = np.zeros(p)
    if history is not None:
        hist = np.asarray(history, dtype=np.float64)[-p:]
        if hist.size:
            h[p - hist.size:] = hist
    return h


def inverse_filter(frame, m: LpcModel, history=None) -> np.ndarray:
    """Prediction residual e[n] = x[n] - sum_k a_k x[n-k].

    `history` holds the samples preceding the frame (oldest first); missing
    samples count as zeros.
    """
    x = np.asarray(frame, dtype=np.float64)
    p = m.order
    ext = np.concatenate((_history(history, p), x))
    return lfilter(m.polynomial, [1.0], ext)[p:]


def synthesize(m: LpcModel, excitation, history=None) -> np.ndarray:
    """All-pole synthesis y[n] = e[n] + sum_k a_k y[n-k].

    `history` holds previous output samples (oldest first).
    """
    e = np.asarray(excitation, dtype=np.float64)
    p = m.order
    if e.size == 0:
        return e.copy()
    zi = lfiltic([1.0], m.polynomial, _history(history, p)[::-1])
    with np.errstate(all="ignore"):
        y, _ = lfilter([1.0], m.polynomial, e, zi=zi)
    if not np.all(np.isfinite(y)):
        raise SynthesisDivergenceError("synthesis produced non-finite output")
    return y


def spectral_envelope(m: LpcModel, n_points: int = 512) -> np.ndarray:
    """20 log10(gain / |A(e^jw)|) in dB at n_points uniform w in [0, pi]."""
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    w = np.linspace(0.0, np.pi, n_points)
    A = np.exp(-1j * np.outer(w, np.arange(m.order + 1))) @ m.polynomial
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(m.gain / np.abs(A))
