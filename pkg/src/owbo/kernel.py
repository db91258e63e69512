"""RBF-ARD covariance and its closed-form product integrals.

Conventions: ``lengthscales`` holds the diagonal of Theta, so the kernel is

    k(x, x') = sf2 * exp(-0.5 * sum_j (x_j - x'_j)**2 / theta_j)

Two integrals over all of R^d are provided, each with a gradient in the first
argument:

* ``khat(x1, x2)       = int k(x1, x') k(x', x2) dx'``
* ``khat_gauss(x1, x2) = int k(x1, x') k(x', x2) N(x'; omega, Sigma) dx'``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


@dataclass(frozen=True)
class RbfArd:
    signal_variance: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def matrix(self, X1, X2) -> np.ndarray:
        """Gram matrix ``k(X1, X2)`` of shape (m, n)."""
        X1 = _rows(X1, self.dim)
        X2 = _rows(X2, self.dim)
        return self.signal_variance * np.exp(-0.5 * _sqdist(X1, X2, self.lengthscales))

    def grad_rows(self, x, X2) -> tuple[np.ndarray, np.ndarray]:
        """``k(x, X2)`` (n,) and its gradient in ``x`` (n, d)."""
        x = _point(x, self.dim)
        X2 = _rows(X2, self.dim)
        diff = x - X2
        kv = self.signal_variance * np.exp(-0.5 * np.sum(diff**2 / self.lengthscales, axis=1))
        return kv, -kv[:, None] * diff / self.lengthscales


def _point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {x.size}")
    return x


def _rows(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, d) if X.size else X.reshape(0, d)
    if X.shape[-1] != d:
        raise ValueError(f"dimension mismatch: expected {d}, got {X.shape[-1]}")
    return X


def _sqdist(X1, X2, scale) -> np.ndarray:
    A = X1 / np.sqrt(scale)
    B = X2 / np.sqrt(scale)
    d2 = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


# ---------------------------------------------------------------------------
# pointwise API


def k(x, xp, params: RbfArd) -> float:
    x = _point(x, params.dim)
    xp = _point(xp, params.dim)
    return float(params.signal_variance * np.exp(-0.5 * np.sum((x - xp) ** 2 / params.lengthscales)))


def k_grad(x, xp, params: RbfArd) -> np.ndarray:
    """Gradient of ``k(x, xp)`` with respect to ``x``."""
    val = k(x, xp, params)
    return -val * (np.asarray(x, float).ravel() - np.asarray(xp, float).ravel()) / params.lengthscales


def _khat_prefactor(params: RbfArd) -> float:
    d = params.dim
    return params.signal_variance**2 * np.pi ** (d / 2) * np.sqrt(np.prod(params.lengthscales))


def khat(x1, x2, params: RbfArd) -> float:
    return float(khat_matrix(params, _point(x1, params.dim)[None], _point(x2, params.dim)[None])[0, 0])


def khat_grad(x1, x2, params: RbfArd) -> np.ndarray:
    val, grad = khat_grad_rows(params, x1, _point(x2, params.dim)[None])
    return grad[0]


def khat_matrix(params: RbfArd, X1, X2) -> np.ndarray:
    X1 = _rows(X1, params.dim)
    X2 = _rows(X2, params.dim)
    return _khat_prefactor(params) * np.exp(-0.25 * _sqdist(X1, X2, params.lengthscales))


def khat_grad_rows(params: RbfArd, x, X2) -> tuple[np.ndarray, np.ndarray]:
    """``khat(x, X2)`` (n,) and its gradient in ``x`` (n, d)."""
    x = _point(x, params.dim)
    X2 = _rows(X2, params.dim)
    diff = x - X2
    val = _khat_prefactor(params) * np.exp(-0.25 * np.sum(diff**2 / params.lengthscales, axis=1))
    return val, -val[:, None] * diff / (2.0 * params.lengthscales)


# ---------------------------------------------------------------------------
# Gaussian-weighted integral


@dataclass(frozen=True)
class GaussFactor:
    """Per-component quantities reused by every ``khat_gauss`` evaluation."""

    mean: np.ndarray
    prefactor: float  # sf2**2 * |I + 2 Theta^-1 Sigma|^{-1/2}
    precision: np.ndarray  # (Theta + 2 Sigma)^-1


def gauss_factor(params: RbfArd, mean, cov) -> GaussFactor:
    d = params.dim
    mean = _point(mean, d)
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        cov = np.diag(cov)
    if cov.shape != (d, d):
        raise ValueError(f"covariance must be {d}x{d}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise ValueError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
        c, low = cho_factor(np.diag(params.lengthscales) + 2.0 * cov, lower=True)
    except (LinAlgError, np.linalg.LinAlgError) as err:
        raise ValueError("covariance is not positive definite") from err
    logdet = 2.0 * np.sum(np.log(np.diag(c))) - np.sum(np.log(params.lengthscales))
    precision = cho_solve((c, low), np.eye(d))
    return GaussFactor(mean, params.signal_variance**2 * np.exp(-0.5 * logdet), 0.5 * (precision + precision.T))


def _as_factor(params: RbfArd, component) -> GaussFactor:
    if isinstance(component, GaussFactor):
        return component
    mean, cov = component
    return gauss_factor(params, mean, cov)


def khat_gauss(x1, x2, params: RbfArd, component) -> float:
    fac = _as_factor(params, component)
    return float(khat_gauss_matrix(params, _point(x1, params.dim)[None], _point(x2, params.dim)[None], fac)[0, 0])


def khat_gauss_grad(x1, x2, params: RbfArd, component) -> np.ndarray:
    fac = _as_factor(params, component)
    return khat_gauss_grad_rows(params, x1, _point(x2, params.dim)[None], fac)[1][0]


def khat_gauss_matrix(params: RbfArd, X1, X2, component) -> np.ndarray:
    fac = _as_factor(params, component)
    X1 = _rows(X1, params.dim)
    X2 = _rows(X2, params.dim)
    out = np.empty((X1.shape[0], X2.shape[0]))
    # explicit pairwise differences keep the value exactly symmetric in (x1, x2)
    step = max(1, 250_000 // max(1, X2.shape[0] * params.dim))
    S2 = X2 - fac.mean
    for s in range(0, X1.shape[0], step):
        A = X1[s : s + step]
        diff = A[:, None, :] - X2[None, :, :]
        ssum = (A - fac.mean)[:, None, :] + S2[None, :, :]
        q_diff = np.sum(diff**2 / params.lengthscales, axis=-1)
        q_sum = np.einsum("mnd,de,mne->mn", ssum, fac.precision, ssum)
        out[s : s + step] = fac.prefactor * np.exp(-0.25 * q_diff - 0.25 * np.maximum(q_sum, 0.0))
    return out


def khat_gauss_grad_rows(params: RbfArd, x, X2, component) -> tuple[np.ndarray, np.ndarray]:
    """``khat_gauss(x, X2)`` (n,) and its gradient in ``x`` (n, d)."""
    fac = _as_factor(params, component)
    x = _point(x, params.dim)
    X2 = _rows(X2, params.dim)
    diff = x - X2
    ssum = x + X2 - 2.0 * fac.mean
    Ps = ssum @ fac.precision
    val = fac.prefactor * np.exp(
        -0.25 * np.sum(diff**2 / params.lengthscales, axis=1) - 0.25 * np.sum(ssum * Ps, axis=1)
    )
    grad = -0.5 * val[:, None] * (diff / params.lengthscales + Ps)
    return val, grad
