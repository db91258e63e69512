"""Acquisition functions (values and analytic gradients).

Kinds and their optimization rule:

==========  ========  ================================================
kind        rule      value
==========  ========  ================================================
pi          maximize  Phi(lam),  lam = (best_y - mu - xi) / sigma
ei          maximize  sigma * (lam * Phi(lam) + phi(lam))
lcb         minimize  mu - kappa * sigma
lcb-lw      minimize  mu - kappa * sigma * w_gmm(x)
ivr         maximize  int cov(x, x')^2 dx' / sigma^2(x)
ivr-bo      minimize  mu - kappa * ivr
ivr-lw      maximize  int cov(x, x')^2 w_gmm(x') dx' / sigma^2(x)
ivr-lwbo    minimize  mu - kappa * ivr-lw
==========  ========  ================================================

The integrals are taken over R^d in closed form via :mod:`owbo.kernel`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .density import GaussianMixture
from .gp import GpModel
from .kernel import gauss_factor, khat_gauss_grad_rows, khat_gauss_matrix, khat_grad_rows, khat_matrix

KINDS = ("pi", "ei", "lcb", "lcb-lw", "ivr", "ivr-bo", "ivr-lw", "ivr-lwbo")
MAXIMIZE = frozenset({"pi", "ei", "ivr", "ivr-lw"})
WEIGHTED = frozenset({"lcb-lw", "ivr-lw", "ivr-lwbo"})
INTEGRAL = frozenset({"ivr", "ivr-bo", "ivr-lw", "ivr-lwbo"})

VAR_FLOOR = 1e-12  # IVR denominator floor
SIGMA2_ZERO = 1e-20  # below this the closed forms switch to their sigma -> 0 limits

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str
    xi: float = 0.01
    kappa: float = 1.0

    def __post_init__(self):
        kind = self.kind.lower().replace("_", "-")
        if kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}; expected one of {KINDS}")
        if self.xi < 0 or self.kappa < 0:
            raise ValueError("xi and kappa must be nonnegative")
        object.__setattr__(self, "kind", kind)

    @property
    def rule(self) -> str:
        return "maximize" if self.kind in MAXIMIZE else "minimize"

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED


class Acquisition:
    """An acquisition bound to one surrogate (and mixture), with caches.

    Build once per BO iteration; :meth:`value_grad` is then O(n^2) per point.
    """

    def __init__(
        self,
        spec: AcquisitionSpec,
        model: GpModel,
        best_y: Optional[float] = None,
        mixture: Optional[GaussianMixture] = None,
    ):
        if spec.weighted and mixture is None:
            raise ValueError(f"{spec.kind} needs a fitted mixture")
        self.spec = spec
        self.model = model
        self.mixture = mixture
        if best_y is None:
            best_y = float(np.min(model.data.outputs)) if len(model.data) else 0.0
        self.best_y = float(best_y)
        if spec.kind in INTEGRAL:
            self._build_integral_cache()

    def _build_integral_cache(self):
        m = self.model
        X, kern = m.data.inputs, m.kernel
        if self.spec.kind in ("ivr", "ivr-bo"):
            self._factors = None
            khXX = khat_matrix(kern, X, X)
            self._khat_xx = float(khat_matrix(kern, np.zeros((1, kern.dim)), np.zeros((1, kern.dim)))[0, 0])
        else:
            self._factors = [
                (beta, gauss_factor(kern, mu, cov))
                for beta, mu, cov in zip(self.mixture.betas, self.mixture.means, self.mixture.covariances)
            ]
            khXX = sum(beta * khat_gauss_matrix(kern, X, X, fac) for beta, fac in self._factors)
        # whitened L^-1 khat L^-T stays O(1); K^-1 khat K^-1 would carry cond(K)^2
        if len(X):
            B = solve_triangular(m.chol, khXX, lower=True)
            B = solve_triangular(m.chol, B.T, lower=True)
            self._B = 0.5 * (B + B.T)
        else:
            self._B = np.zeros((0, 0))

    # -- integral kinds ------------------------------------------------------

    def _integrated_cov2(self, x, loc):
        """``int cov(x, x')^2 [w(x')] dx'`` and its gradient."""
        m = self.model
        X = m.data.inputs
        kern = m.kernel
        if self._factors is None:
            kxx, dkxx = self._khat_xx, np.zeros(kern.dim)
            b, db = khat_grad_rows(kern, x, X)  # khat(x, X_j) and d/dx
        else:
            kxx, dkxx = 0.0, np.zeros(kern.dim)
            b = np.zeros(len(X))
            db = np.zeros((len(X), kern.dim))
            xx = x[None]
            for beta, fac in self._factors:
                v, g = khat_gauss_grad_rows(kern, x, xx, fac)
                kxx += beta * v[0]
                # total derivative of khat(x, x): both slots move with x
                dkxx += beta * 2.0 * g[0]
                if len(X):
                    bv, bg = khat_gauss_grad_rows(kern, x, X, fac)
                    b += beta * bv
                    db += beta * bg
        if not len(X):
            return kxx, dkxx
        L = m.chol
        v = loc.v
        dv = solve_triangular(L, loc.dkx, lower=True)
        c = solve_triangular(L, b, lower=True)
        dc = solve_triangular(L, db, lower=True)
        Bv = self._B @ v
        num = kxx + v @ Bv - 2.0 * v @ c
        dnum = dkxx + 2.0 * dv.T @ Bv - 2.0 * (dv.T @ c + dc.T @ v)
        return num, dnum

    def _ivr(self, x, loc):
        num, dnum = self._integrated_cov2(x, loc)
        if loc.var < VAR_FLOOR:
            # cov^2 <= var(x) var(x') keeps num / VAR_FLOOR bounded here
            return num / VAR_FLOOR, dnum / VAR_FLOOR
        a = num / loc.var
        return a, (dnum - a * loc.dvar) / loc.var

    # -- public -------------------------------------------------------------

    def value_grad(self, x) -> tuple[float, np.ndarray]:
        """Raw acquisition value (not sign-adjusted) and gradient at ``x``."""
        x = np.asarray(x, dtype=float).ravel()
        loc = self.model.local(x)
        kind = self.spec.kind
        if kind in INTEGRAL:
            a, da = self._ivr(x, loc)
            if kind in ("ivr", "ivr-lw"):
                return float(a), da
            kap = self.spec.kappa
            return float(loc.mean - kap * a), loc.dmean - kap * da

        var = loc.var
        degenerate = var <= SIGMA2_ZERO
        sigma = math.sqrt(var)
        dsigma = np.zeros_like(loc.dvar) if degenerate else loc.dvar / (2.0 * sigma)
        if kind in ("pi", "ei"):
            imp = self.best_y - loc.mean - self.spec.xi
            if degenerate:
                if kind == "pi":
                    return float(imp > 0), np.zeros_like(loc.dmean)
                return max(imp, 0.0), (-loc.dmean if imp > 0 else np.zeros_like(loc.dmean))
            lam = imp / sigma
            cdf = float(ndtr(lam))
            pdf = _INV_SQRT_2PI * math.exp(-0.5 * lam * lam)
            if kind == "pi":
                dlam = -loc.dmean / sigma - lam * dsigma / sigma
                return cdf, pdf * dlam
            return imp * cdf + sigma * pdf, -loc.dmean * cdf + dsigma * pdf
        kap = self.spec.kappa
        if kind == "lcb":
            return loc.mean - kap * sigma, loc.dmean - kap * dsigma
        wv, dw = self.mixture.value_grad(x)
        return loc.mean - kap * sigma * wv, loc.dmean - kap * (dsigma * wv + sigma * dw)

    def __call__(self, x) -> float:
        return self.value_grad(x)[0]

    def values(self, X) -> np.ndarray:
        return np.array([self.value_grad(x)[0] for x in np.atleast_2d(X)])

    def to_minimize(self) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
        """Objective for a minimizer: negated for the 'maximize' kinds."""
        sign = -1.0 if self.spec.rule == "maximize" else 1.0

        def f(x):
            v, g = self.value_grad(x)
            return sign * v, sign * g

        return f


def eval_closed(spec: AcquisitionSpec, model: GpModel, x, best_y: float, mixture=None):
    """Value and gradient of PI, EI, LCB or LCB-LW at ``x``."""
    if spec.kind in INTEGRAL:
        raise ValueError(f"{spec.kind} is an integral acquisition; use eval_integral")
    return Acquisition(spec, model, best_y, mixture).value_grad(x)


def eval_integral(spec: AcquisitionSpec, model: GpModel, x, mixture=None):
    """Value and gradient of IVR, IVR-BO, IVR-LW or IVR-LWBO at ``x``."""
    if spec.kind not in INTEGRAL:
        raise ValueError(f"{spec.kind} is not an integral acquisition; use eval_closed")
    return Acquisition(spec, model, None, mixture).value_grad(x)


def a_B_oracle(
    model: GpModel,
    x,
    w,
    n_mc: int,
    rng: np.random.Generator,
    box=None,
    return_stderr: bool = False,
):
    """Monte Carlo estimate of ``int lookahead_var(x'; x) w(x') dx'``.

    Test-only. When ``w`` is a :class:`GaussianMixture` the integral is over
    R^d with x' drawn from the normalized mixture; otherwise x' is uniform on
    ``box`` (default the unit cube).
    """
    x = np.asarray(x, dtype=float).ravel()
    if isinstance(w, GaussianMixture):
        pts = w.sample(n_mc, rng)
        vals = w.total_mass * model.lookahead_var(pts, x)
    else:
        lo, hi = (np.zeros(x.size), np.ones(x.size)) if box is None else map(np.asarray, box)
        vol = float(np.prod(hi - lo))
        pts = lo + (hi - lo) * rng.random((n_mc, x.size))
        vals = vol * model.lookahead_var(pts, x) * np.asarray(w(pts))
    est = float(np.mean(vals))
    if return_stderr:
        return est, float(np.std(vals, ddof=1) / math.sqrt(n_mc))
    return est
