"""Extreme-event precursors in a three-variable system with z-bursts.

The state (x, y, z) evolves by::

    x' =  a x + w y + a x^2 + 2 w x y + z^2
    y' = -w x + a y - w x^2 + 2 a x y
    z' = -l z - (l + b) x z

Trajectories spiral out of the origin towards (-1, 0, 0), get kicked off
the z = 0 plane, and return. The danger of an initial condition is the
largest z reached within a fixed horizon. Initial conditions are searched
in the two leading principal directions of a long background run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Domain, InputPrior


class IntegrationError(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"state became non-finite at t={t:g}")
        self.t = t


@dataclass(frozen=True)
class DynSystem:
    alpha: float = 0.01
    omega: float = 2 * math.pi
    lam: float = 0.1
    beta: float = 0.1
    dt: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def rhs(self, x: float, y: float, z: float) -> tuple[float, float, float]:
        a, w, l, b = self.alpha, self.omega, self.lam, self.beta
        return (
            a * x + w * y + a * x * x + 2.0 * w * x * y + z * z,
            -w * x + a * y - w * x * x + 2.0 * a * x * y,
            -l * z - (l + b) * x * z,
        )


def integrate(system: DynSystem, x0, tau: float, dt: float | None = None) -> np.ndarray:
    """Fixed-step classical RK4 from ``x0`` over ``[0, tau]``.

    Returns the ``(n_steps + 1, 3)`` trajectory including both end points.
    Scalar arithmetic on purpose: three states are far too few for numpy
    to pay off.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    h = system.dt if dt is None else dt
    n = int(round(tau / h))
    if abs(n * h - tau) > 1e-9 * max(tau, 1.0):
        raise ValueError("dt must divide tau")
    f = system.rhs
    x, y, z = (float(v) for v in np.ravel(x0))
    out = np.empty((n + 1, 3))
    out[0] = x, y, z
    h2, h6 = 0.5 * h, h / 6.0
    for i in range(1, n + 1):
        k1x, k1y, k1z = f(x, y, z)
        k2x, k2y, k2z = f(x + h2 * k1x, y + h2 * k1y, z + h2 * k1z)
        k3x, k3y, k3z = f(x + h2 * k2x, y + h2 * k2y, z + h2 * k2z)
        k4x, k4y, k4z = f(x + h * k3x, y + h * k3y, z + h * k3z)
        x += h6 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y += h6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z += h6 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)) or abs(x) + abs(y) + abs(z) > 1e150:
            raise IntegrationError(i * h)
        out[i] = x, y, z
    return out


def danger(system: DynSystem, x0, tau: float) -> float:
    """Largest z over the trajectory from ``x0`` (sampled every step)."""
    return float(integrate(system, x0, tau)[:, 2].max())


@dataclass(frozen=True)
class PcaSubspace:
    mean: np.ndarray
    components: np.ndarray  # (2, 3), orthonormal rows
    eigenvalues: np.ndarray  # descending

    def to_state(self, a) -> np.ndarray:
        return self.mean + np.asarray(a, dtype=float) @ self.components


def pca_subspace(samples: np.ndarray, n_components: int = 2) -> PcaSubspace:
    """Leading principal directions of ``samples`` (rows are states)."""
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    C = np.cov(samples - mean, rowvar=False)
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1][:n_components]
    vals, vecs = vals[order], vecs[:, order].T
    if not np.all(vals > 1e-14 * max(vals.max(), 1e-300)):
        raise ValueError("degenerate covariance: fewer than two active directions")
    return PcaSubspace(mean, vecs, vals)


def build_subspace(
    system: DynSystem,
    burn_in: float = 100.0,
    sample_T: float = 1000.0,
    stride: float = 0.1,
    x0=(0.01, 0.0, 0.01),
) -> PcaSubspace:
    """PCA of one long trajectory, after discarding ``burn_in``."""
    if not sample_T > burn_in:
        raise ValueError("sample_T must exceed burn_in")
    every = int(round(stride / system.dt))
    if every < 1 or abs(every * system.dt - stride) > 1e-9:
        raise ValueError("dt must divide the sampling stride")
    traj = integrate(system, x0, sample_T)
    start = int(round(burn_in / system.dt))
    return pca_subspace(traj[start::every])


@dataclass(frozen=True)
class PrecursorProblem:
    objective: Callable[[np.ndarray], float]
    domain: Domain
    prior: InputPrior
    subspace: PcaSubspace


def precursor_objective(subspace: PcaSubspace, system: DynSystem, tau: float = 50.0) -> PrecursorProblem:
    """``a -> -danger(mean + a @ components)`` on the 4-sigma PCA box."""
    half = 4.0 * np.sqrt(subspace.eigenvalues)
    domain = Domain(-half, half)
    prior = InputPrior.gaussian(subspace.eigenvalues, domain=domain)

    def objective(a) -> float:
        return -danger(system, subspace.to_state(a), tau)

    return PrecursorProblem(objective, domain, prior, subspace)
