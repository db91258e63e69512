"""Exact GP regression with a constant mean and an RBF-ARD kernel."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .core import Dataset
from .kernel import RbfArd

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_BOUNDS_REL = (1e-4, 1e2)
JITTER_LADDER = tuple(10.0**e for e in range(-10, -3))


class GpTrainingError(RuntimeError):
    """Covariance matrix could not be factorized even with maximum jitter."""


@dataclass(frozen=True)
class GpHyperparams:
    mean_const: float
    kernel: RbfArd
    noise_variance: float

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")


class Local(NamedTuple):
    """Posterior quantities at a single point, with gradients."""

    kx: np.ndarray  # k(x, X), (n,)
    dkx: np.ndarray  # d k(x, X) / dx, (n, d)
    q: np.ndarray  # K^-1 k(X, x), (n,)
    v: np.ndarray  # L^-1 k(X, x), (n,)
    mean: float
    dmean: np.ndarray
    var: float
    dvar: np.ndarray


def _cholesky_with_jitter(K: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    n = K.shape[0]
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    for rel in JITTER_LADDER:
        jitter = rel * scale
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            continue
    raise GpTrainingError(f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:g} * sf2")


class GpModel:
    """Trained surrogate: hyperparameters plus the cached factorization of K.

    Instances are immutable after construction; all queries are read-only.
    """

    def __init__(self, data: Dataset, hyperparams: GpHyperparams):
        self.data = data
        self.hyperparams = hyperparams
        self.kernel = hyperparams.kernel
        X = data.inputs
        n = len(data)
        if n and X.shape[1] != self.kernel.dim:
            raise ValueError("data and kernel dimensions differ")
        sf2 = self.kernel.signal_variance
        K = self.kernel.matrix(X, X) + hyperparams.noise_variance * np.eye(n)
        if n:
            self.chol, self.jitter = _cholesky_with_jitter(K, sf2)
        else:
            self.chol, self.jitter = np.zeros((0, 0)), 0.0
        self.K = K + self.jitter * np.eye(n)
        resid = data.outputs - hyperparams.mean_const
        self.alpha = cho_solve((self.chol, True), resid) if n else np.zeros(0)
        self.Kinv = cho_solve((self.chol, True), np.eye(n)) if n else np.zeros((0, 0))

    @property
    def dim(self) -> int:
        return self.kernel.dim

    @property
    def effective_noise(self) -> float:
        return self.hyperparams.noise_variance + self.jitter

    # -- vectorized queries ------------------------------------------------

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m0 = self.hyperparams.mean_const
        if not len(self.data):
            return np.full(X.shape[0], m0)
        out = np.empty(X.shape[0])
        # chunked so huge sample sets never build a giant cross-covariance
        for s in range(0, X.shape[0], 20000):
            out[s : s + 20000] = m0 + self.kernel.matrix(X[s : s + 20000], self.data.inputs) @ self.alpha
        return out

    def var(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        prior = np.full(X.shape[0], self.kernel.signal_variance)
        if not len(self.data):
            return prior
        V = solve_triangular(self.chol, self.kernel.matrix(self.data.inputs, X), lower=True)
        return np.maximum(prior - np.sum(V**2, axis=0), 0.0)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        return self.mean(X), self.var(X)

    def cov(self, x, xp) -> float:
        return float(self.cov_matrix(np.vstack([np.ravel(x), np.ravel(xp)]))[0, 1])

    def cov_matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        prior = self.kernel.matrix(X, X)
        if not len(self.data):
            return prior
        V = solve_triangular(self.chol, self.kernel.matrix(self.data.inputs, X), lower=True)
        return prior - V.T @ V

    def lookahead_var(self, xp, x) -> np.ndarray:
        """Variance at ``xp`` after a hypothetical (noisy) observation at ``x``.

        ``xp`` may be a batch of points; ``x`` is a single point.
        """
        Xp = np.atleast_2d(np.asarray(xp, dtype=float))
        x = np.asarray(x, dtype=float).reshape(1, -1)
        kxp = self.kernel.matrix(Xp, x)[:, 0]
        if len(self.data):
            V = solve_triangular(self.chol, self.kernel.matrix(self.data.inputs, np.vstack([Xp, x])), lower=True)
            cov = kxp - V[:, :-1].T @ V[:, -1]
            var_p = self.kernel.signal_variance - np.sum(V[:, :-1] ** 2, axis=0)
            var_x = self.kernel.signal_variance - np.sum(V[:, -1] ** 2)
        else:
            cov = kxp
            var_p = np.full(Xp.shape[0], self.kernel.signal_variance)
            var_x = self.kernel.signal_variance
        out = var_p - cov**2 / (max(var_x, 0.0) + self.effective_noise)
        out = np.maximum(out, 0.0)
        return out if np.ndim(xp) > 1 else float(out[0])

    # -- single-point queries with gradients -------------------------------

    def local(self, x) -> Local:
        x = np.asarray(x, dtype=float).ravel()
        kx, dkx = self.kernel.grad_rows(x, self.data.inputs)
        # triangular solves rather than Kinv: the variance cancels badly near data
        v = solve_triangular(self.chol, kx, lower=True) if len(kx) else kx
        q = solve_triangular(self.chol, v, lower=True, trans="T") if len(kx) else kx
        mean = self.hyperparams.mean_const + kx @ self.alpha
        dmean = dkx.T @ self.alpha
        var = self.kernel.signal_variance - v @ v
        dvar = -2.0 * dkx.T @ q
        return Local(kx, dkx, q, v, float(mean), dmean, float(max(var, 0.0)), dvar)

    def mean_grad(self, x) -> tuple[float, np.ndarray]:
        loc = self.local(x)
        return loc.mean, loc.dmean

    def var_grad(self, x) -> tuple[float, np.ndarray]:
        loc = self.local(x)
        return loc.var, loc.dvar


# ---------------------------------------------------------------------------
# training


def _unpack(theta: np.ndarray, d: int) -> tuple[float, np.ndarray, float]:
    e = np.exp(theta)
    return e[0], e[1 : 1 + d], e[1 + d]


def log_marginal_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray, mean_const: float):
    """Log marginal likelihood and its gradient in log-parameters.

    ``theta = log([sf2, theta_1..theta_d, noise])``. Returns ``(-inf, nan)``
    when K is numerically indefinite.
    """
    n, d = X.shape
    sf2, ls, noise = _unpack(theta, d)
    diff2 = (X[:, None, :] - X[None, :, :]) ** 2 / ls
    Kf = sf2 * np.exp(-0.5 * diff2.sum(-1))
    K = Kf + noise * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return -np.inf, np.full(theta.shape, np.nan)
    r = y - mean_const
    alpha = cho_solve((L, True), r)
    lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty_like(theta)
    grad[0] = 0.5 * np.sum(W * Kf)
    grad[1 : 1 + d] = 0.5 * np.einsum("ij,ijk->k", W * Kf, 0.5 * diff2)
    grad[1 + d] = 0.5 * noise * np.trace(W)
    return float(lml), grad


def hyperparameter_bounds(y: np.ndarray, d: int) -> np.ndarray:
    vy = float(np.var(y))
    lo_s, hi_s = SIGNAL_BOUNDS_REL
    bounds = [(np.log(lo_s * vy), np.log(hi_s * vy))]
    bounds += [tuple(np.log(LENGTHSCALE_BOUNDS))] * d
    bounds += [(np.log(NOISE_FLOOR), np.log(max(vy, 10 * NOISE_FLOOR)))]
    return np.array(bounds)


def fallback_hyperparams(data: Dataset, d: int, noise_hint: Optional[float] = None) -> GpHyperparams:
    """Prior hyperparameters for data too small or too flat to train on."""
    y = data.outputs
    m0 = float(np.mean(y)) if len(y) else 0.0
    vy = float(np.var(y)) if len(y) > 1 else 0.0
    sf2 = vy if vy > 0 else 1.0
    noise = max(NOISE_FLOOR, noise_hint if noise_hint is not None else 1e-6 * sf2)
    return GpHyperparams(m0, RbfArd(sf2, np.full(d, 0.1)), noise)


@dataclass
class FitReport:
    """Diagnostics from :func:`fit` (starting and final LML of each restart)."""

    start_lml: list
    final_lml: list
    best_lml: float


def fit(
    data: Dataset,
    rng: np.random.Generator,
    n_restarts: int = 8,
    init: Optional[GpHyperparams] = None,
    noise_hint: Optional[float] = None,
    report: Optional[FitReport] = None,
) -> GpModel:
    """Train hyperparameters by maximizing the log marginal likelihood.

    The mean is fixed to the sample mean of the outputs. Restart 0 starts from
    ``init`` when given (warm start), otherwise from a default guess; the rest
    start log-uniformly inside the bounds.
    """
    X, y = data.inputs, data.outputs
    n, d = X.shape
    if n < 2 or np.ptp(y) == 0:
        return GpModel(data, fallback_hyperparams(data, d, noise_hint))
    m0 = float(np.mean(y))
    bounds = hyperparameter_bounds(y, d)
    vy = float(np.var(y))

    starts = []
    if init is not None:
        first = np.log(np.r_[init.kernel.signal_variance, init.kernel.lengthscales, init.noise_variance])
    else:
        first = np.log(np.r_[vy, np.full(d, 0.1), max(1e-3 * vy, NOISE_FLOOR)])
    starts.append(np.clip(first, bounds[:, 0], bounds[:, 1]))
    for _ in range(n_restarts - 1):
        starts.append(bounds[:, 0] + (bounds[:, 1] - bounds[:, 0]) * rng.random(len(bounds)))

    def negative(theta):
        val, grad = log_marginal_likelihood(theta, X, y, m0)
        if not np.isfinite(val):
            return 1e25, np.zeros_like(theta)
        return -val, -grad

    best_theta, best_val = None, -np.inf
    start_vals, final_vals = [], []
    for theta0 in starts:
        v0 = -negative(theta0)[0]
        res = minimize(negative, theta0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": 200})
        cand = [(v0, theta0), (-res.fun, res.x)]
        val, theta = max(cand, key=lambda c: c[0])
        start_vals.append(v0)
        final_vals.append(val)
        if val > best_val:
            best_val, best_theta = val, theta
    if report is not None:
        report.start_lml, report.final_lml, report.best_lml = start_vals, final_vals, best_val
    if best_theta is None or not np.isfinite(best_val):
        raise GpTrainingError("no restart produced a finite marginal likelihood")
    sf2, ls, noise = _unpack(best_theta, d)
    hyp = GpHyperparams(m0, RbfArd(sf2, ls), max(noise, NOISE_FLOOR))
    return GpModel(data, hyp)
