"""Gaussian mixtures: k-means++ initialisation, EM, and joint-density regression.

A JointGmm is fit on stacked vectors z = [x; y]. Its conversion function is the
conditional mean

    y_hat(x) = sum_k h_k(x) (mu_y^k + S_yx^k (S_xx^k)^-1 (x - mu_x^k))

with h_k(x) the component posteriors under the x-marginal.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import (ConditioningError, DegenerateDataError, IncompatibleModelError,
                     ModelParseError, NumericalFailureError)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LL_SLACK = 1e-9


@dataclass
class EmConfig:
    n_components: int = 1
    max_iters: int = 100
    tol: float = 1e-6
    covariance_type: str = "full"
    seed: int = 0
    variance_floor: float = 1e-6
    kmeans_iters: int = 10

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.covariance_type not in ("full", "diag"):
            raise ValueError(f"unknown covariance type {self.covariance_type!r}")


@dataclass(frozen=True, eq=False)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str = "full"
    history: tuple = field(default=())

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def _chol(self):
        out = []
        for k, S in enumerate(self.covariances):
            try:
                out.append(cholesky(S, lower=True))
            except LinAlgError as exc:
                raise ConditioningError(f"covariance of component {k} is not positive definite") from exc
        return out

    def log_joint(self, X):
        """(N, K) array of log w_k + log N(x_n | mu_k, S_k)."""
        X = np.atleast_2d(X)
        N, d = X.shape
        out = np.empty((N, self.n_components))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        for k, L in enumerate(self._chol()):
            z = solve_triangular(L, (X - self.means[k]).T, lower=True)
            logdet = 2.0 * np.sum(np.log(np.diag(L)))
            out[:, k] = logw[k] - 0.5 * (d * np.log(2 * np.pi) + logdet + np.sum(z * z, axis=0))
        return out

    def log_likelihood(self, X):
        """Average per-point log-likelihood."""
        return float(np.mean(logsumexp(self.log_joint(X), axis=1)))

    def marginal(self, idx):
        idx = np.asarray(idx)
        return Gmm(self.weights, self.means[:, idx], self.covariances[:, idx][:, :, idx],
                   self.covariance_type)


def variance_floor(data, scale):
    return scale * float(np.mean(np.var(data, axis=0)))


def floor_covariance(S, floor, covariance_type="full"):
    """Raise eigenvalues below `floor`; untouched if already above it."""
    if covariance_type == "diag":
        return np.diag(np.maximum(np.diag(S), floor)), bool(np.any(np.diag(S) < floor))
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    if lam.min() >= floor:
        return S, False
    S = (V * np.maximum(lam, floor)) @ V.T
    return 0.5 * (S + S.T), True


def _cluster_cov(pts, mean):
    diff = pts - mean
    return diff.T @ diff / pts.shape[0]


def kmeans_init(data, n_components, seed=0, floor_scale=1e-6, iters=10,
                covariance_type="full") -> Gmm:
    """k-means++ seeding plus Lloyd iterations, turned into a starting mixture."""
    X = np.asarray(data, dtype=np.float64)
    N, d = X.shape
    K = n_components
    if N < K:
        raise DegenerateDataError(f"{N} points cannot seed {K} components")
    if np.unique(X, axis=0).shape[0] < K:
        raise DegenerateDataError(f"fewer than {K} distinct data points")
    rng = np.random.default_rng(seed)
    centers = np.empty((K, d))
    centers[0] = X[rng.integers(N)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:
            raise DegenerateDataError("data collapsed onto fewer than K points")
        centers[k] = X[rng.choice(N, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[k]) ** 2, axis=1))

    def assign(C):
        dist = np.sum(X ** 2, 1)[:, None] - 2 * X @ C.T + np.sum(C ** 2, 1)[None, :]
        return np.argmin(dist, axis=1), dist

    for _ in range(iters):
        labels, dist = assign(centers)
        for k in range(K):
            members = labels == k
            if members.any():
                centers[k] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(dist[np.arange(N), labels]))
                centers[k] = X[far]
                labels[far] = k
    labels, _ = assign(centers)

    floor = variance_floor(X, floor_scale)
    glob = _cluster_cov(X, X.mean(axis=0))
    weights = np.empty(K)
    covs = np.empty((K, d, d))
    for k in range(K):
        pts = X[labels == k]
        weights[k] = pts.shape[0] / N
        if pts.shape[0] > d:
            centers[k] = pts.mean(axis=0)
            S = _cluster_cov(pts, centers[k])
        else:
            if pts.shape[0]:
                centers[k] = pts.mean(axis=0)
            S = np.diag(np.diag(glob)) / K
        if covariance_type == "diag":
            S = np.diag(np.diag(S))
        covs[k], _ = floor_covariance(S, floor, covariance_type)
    # an emptied cluster keeps a small weight so EM can still use it
    weights = np.maximum(weights, 1.0 / (10 * N))
    weights /= weights.sum()
    return Gmm(weights, centers, covs, covariance_type)


def em_fit(data, cfg: EmConfig | None = None, init: Gmm | None = None) -> Gmm:
    """Maximum-likelihood mixture by EM.

    The returned model's `history` holds the average log-likelihood before
    each M-step and after the last one. It must never decrease (beyond
    LL_SLACK) unless covariance flooring intervened.
    """
    cfg = cfg or EmConfig()
    X = np.asarray(data, dtype=np.float64)
    N, d = X.shape
    K = cfg.n_components
    if N < 10 * K:
        log.warning("only %d vectors for %d components (fewer than 10 per component)", N, K)
    g = init or kmeans_init(X, K, cfg.seed, cfg.variance_floor, cfg.kmeans_iters,
                            cfg.covariance_type)
    floor = variance_floor(X, cfg.variance_floor)
    history = []
    floored_last = False
    for it in range(cfg.max_iters):
        lj = g.log_joint(X)
        lse = logsumexp(lj, axis=1)
        ll = float(np.mean(lse))
        if not np.isfinite(ll):
            raise NumericalFailureError(f"non-finite log-likelihood at EM iteration {it}", it)
        if history and ll < history[-1] - LL_SLACK * max(1.0, abs(history[-1])):
            msg = f"log-likelihood decreased at iteration {it}: {history[-1]!r} -> {ll!r}"
            if not floored_last:
                raise NumericalFailureError(msg, it)
            log.warning("%s (covariance flooring active)", msg)
        converged = bool(history) and ll - history[-1] <= cfg.tol * abs(history[-1])
        history.append(ll)
        if converged:
            break
        gamma = np.exp(lj - lse[:, None])
        Nk = gamma.sum(axis=0)
        weights = Nk / N
        means = np.where(Nk[:, None] > 0, (gamma.T @ X) / np.maximum(Nk, 1e-300)[:, None], g.means)
        covs = np.empty((K, d, d))
        floored_last = False
        for k in range(K):
            if Nk[k] <= 0:
                covs[k] = g.covariances[k]
                continue
            diff = X - means[k]
            S = (gamma[:, k, None] * diff).T @ diff / Nk[k]
            if cfg.covariance_type == "diag":
                S = np.diag(np.diag(S))
            covs[k], hit = floor_covariance(S, floor, cfg.covariance_type)
            floored_last |= hit
        g = Gmm(weights, means, covs, cfg.covariance_type)
    else:
        final = g.log_likelihood(X)
        if not np.isfinite(final):
            raise NumericalFailureError("non-finite log-likelihood after EM", cfg.max_iters)
        history.append(final)
    return replace(g, history=tuple(history))


def posterior(g: Gmm, x) -> np.ndarray:
    """Component responsibilities, log-sum-exp stabilised. Accepts (d,) or (N, d)."""
    x = np.asarray(x, dtype=np.float64)
    lj = g.log_joint(np.atleast_2d(x))
    h = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    h /= h.sum(axis=1, keepdims=True)
    return h[0] if x.ndim == 1 else h


class JointGmm:
    """Mixture over z = [x; y] with the split after the first `split` dims."""

    def __init__(self, base: Gmm, split: int):
        if not 0 < split < base.dim:
            raise ValueError(f"split {split} outside (0, {base.dim})")
        self.base = base
        self.split = split
        p = split
        self.x_marginal = base.marginal(np.arange(p))
        self._slopes = np.empty((base.n_components, base.dim - p, p))
        for k, S in enumerate(base.covariances):
            try:
                cf = cho_factor(S[:p, :p], lower=True)
            except LinAlgError as exc:
                raise ConditioningError(f"S_xx of component {k} is singular") from exc
            self._slopes[k] = cho_solve(cf, S[:p, p:]).T
        self._offsets = base.means[:, p:] - np.einsum("kij,kj->ki", self._slopes, base.means[:, :p])

    @property
    def n_components(self):
        return self.base.n_components

    def posterior(self, x):
        return posterior(self.x_marginal, x)

    def component_predictions(self, x):
        """(N, K, q) per-component affine predictions mu_y + S_yx S_xx^-1 (x - mu_x)."""
        X = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.einsum("kij,nj->nki", self._slopes, X) + self._offsets[None]


def regress(j: JointGmm, x, return_posterior=False):
    """Conditional expectation E[y | x] under the joint mixture."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    if X.shape[1] != j.split:
        raise ValueError(f"expected {j.split}-dim input, got {X.shape[1]}")
    h = np.atleast_2d(j.posterior(X))
    y = np.einsum("nk,nki->ni", h, j.component_predictions(X))
    if not np.all(np.isfinite(y)):
        raise ConditioningError("regression produced non-finite output")
    if x.ndim == 1:
        y, h = y[0], h[0]
    return (y, h) if return_posterior else y


def gmm_to_dict(g: Gmm) -> dict:
    return {
        "n_components": g.n_components,
        "dim": g.dim,
        "covariance_type": g.covariance_type,
        "weights": g.weights.tolist(),
        "means": g.means.tolist(),
        "covariances": g.covariances.tolist(),
        "history": list(g.history),
    }


def gmm_from_dict(d: dict) -> Gmm:
    try:
        K, dim = int(d["n_components"]), int(d["dim"])
        w = np.array(d["weights"], dtype=np.float64).reshape(K)
        mu = np.array(d["means"], dtype=np.float64).reshape(K, dim)
        S = np.array(d["covariances"], dtype=np.float64).reshape(K, dim, dim)
        return Gmm(w, mu, S, str(d["covariance_type"]), tuple(d.get("history", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"malformed mixture record: {exc}") from exc


def save_joint(j: JointGmm, path, meta=None):
    doc = {"format": "vcmorph-joint-gmm", "version": FORMAT_VERSION,
           "split": j.split, "gmm": gmm_to_dict(j.base), "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_joint(path) -> JointGmm:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelParseError(f"{path}: {exc}") from exc
    if doc.get("format") != "vcmorph-joint-gmm":
        raise ModelParseError(f"{path}: not a joint GMM file")
    if doc.get("version") != FORMAT_VERSION:
        raise IncompatibleModelError(f"{path}: version {doc.get('version')} != {FORMAT_VERSION}")
    return JointGmm(gmm_from_dict(doc["gmm"]), int(doc["split"]))
