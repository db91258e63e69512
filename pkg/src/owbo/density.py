"""Likelihood-ratio pipeline: posterior-mean samples -> 1-D KDE -> w(x) -> GMM.

All inputs live in the unit hypercube; the prior passed in must already be
expressed there (see :meth:`owbo.core.InputPrior.to_unit`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import fftconvolve
from scipy.special import logsumexp

from .core import InputPrior

log = logging.getLogger(__name__)

PMIN_REL = 1e-6
COV_FLOOR = 1e-6
EM_MAX_ITER = 200
EM_TOL = 1e-6
MIN_COMPONENT_WEIGHT = 1e-8
FLOOR_HITS_TO_PRUNE = 10


class DegenerateDensity(ValueError):
    """Samples have (numerically) zero spread; no density can be estimated."""


# ---------------------------------------------------------------------------
# kernel density estimate


@dataclass(frozen=True)
class Kde1d:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    @property
    def p_min(self) -> float:
        return PMIN_REL * float(np.max(self.density))

    def __call__(self, y) -> np.ndarray:
        """Density at ``y`` by linear interpolation, floored at ``p_min``."""
        y = np.asarray(y, dtype=float)
        p = np.interp(y, self.grid, self.density, left=0.0, right=0.0)
        return np.maximum(p, self.p_min)

    def integral(self) -> float:
        return float(trapezoid(self.density, self.grid))

    def scaled(self, c: float) -> "Kde1d":
        return Kde1d(self.grid, c * self.density, self.bandwidth)


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = samples.size
    std = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = (q75 - q25) / 1.34
    spread = min(std, iqr) if iqr > 0 else std
    return 0.9 * spread * n ** (-0.2)


def kde_1d(samples, grid_size: int = 1024) -> Kde1d:
    """Gaussian KDE by linear binning and FFT convolution.

    The grid spans ``[min - 3h, max + 3h]`` with Silverman's bandwidth ``h``.
    Cost is linear in the number of samples plus O(m log m) in grid size.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 100:
        raise ValueError(f"need at least 100 samples, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples contain non-finite values")
    lo, hi = float(s.min()), float(s.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo), abs(hi)):
        raise DegenerateDensity(f"samples have no spread (range {hi - lo:g})")
    h = silverman_bandwidth(s)
    if not h > 0:
        raise DegenerateDensity("bandwidth collapsed to zero")
    grid = np.linspace(lo - 3 * h, hi + 3 * h, grid_size)
    delta = grid[1] - grid[0]

    t = (s - grid[0]) / delta
    j = np.clip(np.floor(t).astype(np.int64), 0, grid_size - 2)
    frac = t - j
    counts = np.bincount(j, weights=1.0 - frac, minlength=grid_size)
    counts += np.bincount(j + 1, weights=frac, minlength=grid_size)

    half = min(grid_size - 1, int(np.ceil(8 * h / delta)))
    offsets = np.arange(-half, half + 1) * delta
    kern = np.exp(-0.5 * (offsets / h) ** 2) / (h * np.sqrt(2 * np.pi))
    dens = fftconvolve(counts, kern, mode="same") / s.size
    return Kde1d(grid, np.maximum(dens, 0.0), h)


# ---------------------------------------------------------------------------
# likelihood ratio


def _mean_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.mean if hasattr(model, "mean") else model


def sample_mu(model, prior: InputPrior, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Posterior mean at ``n_samples`` points drawn from the input prior.

    ``model`` is a :class:`~owbo.gp.GpModel` or any vectorized callable.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    X = prior.sample(n_samples, rng)
    return np.asarray(_mean_fn(model)(X), dtype=float)


class LikelihoodRatio:
    """``w(x) = p_x(x) / max(p_mu(mu(x)), p_min)``."""

    def __init__(self, model, prior: InputPrior, kde: Kde1d):
        self.mean_fn = _mean_fn(model)
        self.prior = prior
        self.kde = kde

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.prior.density(X) / self.kde(self.mean_fn(X))

    def upper_bound(self, X) -> float:
        """``max p_x / p_min`` over the points ``X``: a bound on w there."""
        return float(np.max(self.prior.density(X)) / self.kde.p_min)


def likelihood_ratio(model, prior: InputPrior, kde: Kde1d) -> LikelihoodRatio:
    return LikelihoodRatio(model, prior, kde)


# ---------------------------------------------------------------------------
# Gaussian mixture


@dataclass(frozen=True)
class GaussianMixture:
    """Unnormalized mixture ``total_mass * sum_i weights_i N(x; means_i, covariances_i)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    total_mass: float
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _prec: np.ndarray = field(init=False, repr=False, compare=False)
    _lognorm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float).reshape(mu.shape[0], mu.shape[1], mu.shape[1])
        if np.any(w <= 0) or not np.isclose(w.sum(), 1.0, atol=1e-10):
            raise ValueError("mixture weights must be positive and sum to 1")
        if not self.total_mass > 0:
            raise ValueError("total_mass must be positive")
        chol = np.linalg.cholesky(cov)
        d = mu.shape[1]
        prec = np.linalg.inv(cov)
        lognorm = -0.5 * d * np.log(2 * np.pi) - np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        for name, val in (("weights", w), ("means", mu), ("covariances", cov)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "total_mass", float(self.total_mass))
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_prec", 0.5 * (prec + np.swapaxes(prec, 1, 2)))
        object.__setattr__(self, "_lognorm", lognorm)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def betas(self) -> np.ndarray:
        """Absolute component weights ``total_mass * weights``."""
        return self.total_mass * self.weights

    def component_logpdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], self.n_components))
        for i in range(self.n_components):
            z = (X - self.means[i]) @ np.linalg.inv(self._chol[i]).T
            out[:, i] = self._lognorm[i] - 0.5 * np.sum(z**2, axis=1)
        return out

    def pdf(self, X) -> np.ndarray:
        """Normalized mixture density."""
        return np.exp(logsumexp(self.component_logpdf(X) + np.log(self.weights), axis=1))

    def evaluate(self, X) -> np.ndarray:
        return self.total_mass * self.pdf(X)

    __call__ = evaluate

    def value_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float).ravel()
        diff = x - self.means
        pd = np.einsum("kij,kj->ki", self._prec, diff)
        dens = self.betas * np.exp(self._lognorm - 0.5 * np.sum(diff * pd, axis=1))
        return float(dens.sum()), -(dens[:, None] * pd).sum(axis=0)

    def scaled(self, c: float) -> "GaussianMixture":
        return GaussianMixture(self.weights, self.means, self.covariances, c * self.total_mass)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], z)

    def max_on(self, X) -> float:
        return float(np.max(self.evaluate(X)))


@dataclass
class EmTrace:
    """Weighted log-likelihood after every E-step, per attempted fit."""

    objective: list = field(default_factory=list)
    pruned: int = 0


def _floor_cov(S: np.ndarray) -> tuple[np.ndarray, bool]:
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    hit = bool(np.any(vals < COV_FLOOR))
    vals = np.maximum(vals, COV_FLOOR)
    return (vecs * vals) @ vecs.T, hit


def _kmeanspp(X, wts, k, rng) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.choice(n, p=wts)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        p = wts * d2
        total = p.sum()
        idx = rng.choice(n, p=p / total) if total > 0 else rng.choice(n, p=wts)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _weighted_em(X, wts, k, rng, trace: Optional[list] = None):
    """Weighted EM; returns (weights, means, covs) or None if degenerate."""
    n, d = X.shape
    means = _kmeanspp(X, wts, k, rng)
    labels = np.argmin(((X[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    # responsibilities stored (k, n) so reductions over points are contiguous
    resp = np.zeros((k, n))
    resp[labels, np.arange(n)] = 1.0
    log2pi = 0.5 * d * np.log(2 * np.pi)

    floor_hits = np.zeros(k, dtype=int)
    prev = -np.inf
    pis = covs = None
    for it in range(EM_MAX_ITER + 1):
        # M-step
        wr = resp * wts
        nk = wr.sum(axis=1)
        if np.any(nk < MIN_COMPONENT_WEIGHT):
            return None
        pis = nk / nk.sum()
        means = (wr @ X) / nk[:, None]
        covs = np.empty((k, d, d))
        for i in range(k):
            diff = X - means[i]
            S = (wr[i, :, None] * diff).T @ diff / nk[i]
            covs[i], hit = _floor_cov(S)
            floor_hits[i] += hit
        if np.any(floor_hits >= FLOOR_HITS_TO_PRUNE):
            return None
        # E-step
        logp = np.empty((k, n))
        for i in range(k):
            L = np.linalg.cholesky(covs[i])
            z = np.linalg.inv(L) @ (X - means[i]).T
            logp[i] = np.log(pis[i]) - log2pi - np.log(np.diag(L)).sum() - 0.5 * np.einsum("ij,ij->j", z, z)
        top = logp.max(axis=0)
        np.subtract(logp, top, out=logp)
        np.exp(logp, out=resp)
        tot = resp.sum(axis=0)
        resp /= tot
        obj = float(wts @ (top + np.log(tot)))
        if trace is not None:
            trace.append(obj)
        if it > 0 and abs(obj - prev) <= EM_TOL:
            break
        prev = obj
    return pis, means, covs


def fit_gmm(
    w: Callable[[np.ndarray], np.ndarray],
    prior: InputPrior,
    n_gmm: int,
    n_fit_samples: int,
    rng: np.random.Generator,
    trace: Optional[EmTrace] = None,
) -> GaussianMixture:
    """Fit an unnormalized Gaussian mixture to the function ``w``.

    Points are drawn from the prior and weighted by ``w / q`` where ``q`` is
    the prior's sampling density, so the normalized mixture targets
    ``w / int w``. The importance estimate ``mean(w / q)`` of ``int w`` becomes
    ``total_mass``. Degenerate components (vanishing weight, or a covariance
    pinned at the floor) trigger a refit with one component fewer.
    """
    if n_gmm < 1:
        raise ValueError("n_gmm must be >= 1")
    X = prior.sample(n_fit_samples, rng)
    iw = np.asarray(w(X), dtype=float) / prior.sampling_density(X)
    if not np.all(np.isfinite(iw)) or np.any(iw < 0):
        raise ValueError("w must be finite and nonnegative on the prior's support")
    total_mass = float(np.mean(iw))
    if not total_mass > 0:
        raise DegenerateDensity("w vanishes on every fit sample")
    wts = iw / iw.sum()

    k = n_gmm
    while k >= 1:
        history: list = []
        fitted = _weighted_em(X, wts, k, rng, history)
        if trace is not None:
            trace.objective.append(history)
        if fitted is not None:
            pis, means, covs = fitted
            return GaussianMixture(pis, means, covs, total_mass)
        log.debug("degenerate GMM component; refitting with %d components", k - 1)
        if trace is not None:
            trace.pruned += 1
        k -= 1
    raise DegenerateDensity("could not fit even a single Gaussian")


@dataclass
class LikelihoodPipeline:
    """KDE, likelihood ratio and mixture built for one iteration."""

    kde: Kde1d
    ratio: LikelihoodRatio
    mixture: GaussianMixture


def build_pipeline(
    model,
    prior: InputPrior,
    n_gmm: int,
    n_samples: int,
    n_fit_samples: int,
    rng_kde: np.random.Generator,
    rng_gmm: np.random.Generator,
) -> LikelihoodPipeline:
    """Sample mu, estimate p_mu, form w and fit the mixture.

    Raises :class:`DegenerateDensity` when the posterior mean is flat.
    """
    samples = sample_mu(model, prior, n_samples, rng_kde)
    kde = kde_1d(samples)
    ratio = likelihood_ratio(model, prior, kde)
    mixture = fit_gmm(ratio, prior, n_gmm, n_fit_samples, rng_gmm)
    return LikelihoodPipeline(kde, ratio, mixture)
