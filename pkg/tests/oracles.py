"""Independent reference computations used by the tests.

Nothing here imports the production code paths being checked: the GP is
solved with dense ``np.linalg.solve``, integrals by quadrature or Monte
Carlo, densities by direct summation.
"""
from __future__ import annotations

import numpy as np
from scipy import integrate, stats


def rbf(A, B, sf2, theta):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    d2 = (((A[:, None, :] - B[None, :, :]) ** 2) / np.asarray(theta)).sum(-1)
    return sf2 * np.exp(-0.5 * d2)


class NaiveGp:
    """Textbook GP posterior by dense solves."""

    def __init__(self, X, y, m0, sf2, theta, noise):
        self.X, self.y = np.atleast_2d(X), np.asarray(y, float)
        self.m0, self.sf2, self.theta, self.noise = m0, sf2, np.atleast_1d(theta), noise
        self.K = rbf(self.X, self.X, sf2, self.theta) + noise * np.eye(len(self.y))

    def mean(self, P):
        return self.m0 + rbf(P, self.X, self.sf2, self.theta) @ np.linalg.solve(self.K, self.y - self.m0)

    def cov(self, A, B):
        kA = rbf(self.X, A, self.sf2, self.theta)
        kB = rbf(self.X, B, self.sf2, self.theta)
        return rbf(A, B, self.sf2, self.theta) - kA.T @ np.linalg.solve(self.K, kB)

    def var(self, P):
        P = np.atleast_2d(P)
        kP = rbf(self.X, P, self.sf2, self.theta)
        return self.sf2 - np.sum(kP * np.linalg.solve(self.K, kP), axis=0)

    def with_point(self, x, y):
        return NaiveGp(np.vstack([self.X, x]), np.r_[self.y, y], self.m0, self.sf2, self.theta, self.noise)


def fd_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_grad_ridders(f, x, h=1e-3, n_tab=10, shrink=1.4):
    """Central differences with Richardson extrapolation (Ridders' scheme).

    Starts at step ``h`` and shrinks it, keeping the extrapolated estimate with
    the smallest internal error, so no single step size has to suit both
    high-curvature and cancellation-prone points.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    c2 = shrink * shrink
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1.0
        tab = np.zeros((n_tab, n_tab))
        hh = h
        tab[0, 0] = (f(x + hh * e) - f(x - hh * e)) / (2 * hh)
        best, err = tab[0, 0], np.inf
        for j in range(1, n_tab):
            hh /= shrink
            tab[0, j] = (f(x + hh * e) - f(x - hh * e)) / (2 * hh)
            fac = c2
            for m in range(1, j + 1):
                tab[m, j] = (tab[m - 1, j] * fac - tab[m - 1, j - 1]) / (fac - 1)
                fac *= c2
                e_new = max(abs(tab[m, j] - tab[m - 1, j]), abs(tab[m, j] - tab[m - 1, j - 1]))
                if e_new <= err:
                    err, best = e_new, tab[m, j]
            if abs(tab[j, j] - tab[j - 1, j - 1]) >= 2 * err:
                break
        g[i] = best
    return g


def rel_err(g, ref, floor=1e-6):
    return float(np.linalg.norm(np.asarray(g) - ref) / max(np.linalg.norm(ref), floor))


def quad_1d(f, lo=-12.0, hi=12.0):
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)
    return val


def tensor_rule(lo, hi, n_nodes):
    """Gauss-Legendre tensor grid on a box: points (m, d) and weights (m,)."""
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    axes = [0.5 * (h - l) * t + 0.5 * (h + l) for l, h in zip(lo, hi)]
    wts = [0.5 * (h - l) * w for l, h in zip(lo, hi)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, lo.size)
    W = np.ones(1)
    for wj in wts:
        W = np.multiply.outer(W, wj).ravel()
    return P, W


def gauss_mixture_density(P, betas, means, covs):
    out = np.zeros(len(P))
    for b, m, c in zip(betas, means, covs):
        out += b * stats.multivariate_normal(m, c).pdf(P).reshape(len(P))
    return out


def ivr_by_quadrature(gp: NaiveGp, x, weight=None, pad=8.0, n_nodes=None):
    """``int cov(x, x')^2 w(x') dx' / var(x)`` on a padded box by Gauss-Legendre."""
    x = np.atleast_2d(x)
    ell = np.sqrt(gp.theta.max())
    lo = np.minimum(gp.X.min(0), x.min(0)) - pad * ell
    hi = np.maximum(gp.X.max(0), x.max(0)) + pad * ell
    if weight is not None and getattr(weight, "box", None) is not None:
        lo = np.minimum(lo, weight.box[0])
        hi = np.maximum(hi, weight.box[1])
    if n_nodes is None:
        n_nodes = int(min(400, max(80, 6 * (hi - lo).max() / ell)))
    P, W = tensor_rule(lo, hi, n_nodes)
    c2 = gp.cov(x, P)[0] ** 2
    if weight is not None:
        c2 = c2 * weight(P)
    return float(W @ c2 / gp.var(x)[0])


def kde_direct(samples, h, y):
    """Gaussian KDE by explicit summation."""
    samples = np.asarray(samples)
    y = np.atleast_1d(y)
    return np.array([np.mean(stats.norm.pdf((v - samples) / h)) / h for v in y])


def running_min(a):
    out, cur = [], np.inf
    for v in a:
        cur = min(cur, v)
        out.append(cur)
    return np.array(out)
