"""Shared value types: search domain, datasets, input priors, run configuration.

Everything downstream of the objective wrappers works in the unit hypercube;
:class:`Domain` owns the affine map to and from the physical box.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional

import numpy as np
from scipy.special import ndtr, ndtri

if TYPE_CHECKING:  # pragma: no cover
    from .acquisition import AcquisitionSpec

DOMAIN_SLACK = 1e-12

# substream indices within one experiment repeat
STREAM_DESIGN = 0
STREAM_NOISE = 1
STREAM_KDE = 2
STREAM_GMM = 3
STREAM_RESTARTS = 4
STREAM_GP = 5


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Deterministic PCG64 stream for ``seed``, optionally a keyed substream.

    ``make_rng(seed, r, c)`` is the stream for component ``c`` of repeat ``r``.
    Substreams are derived from the seed and key alone, so drawing from one
    never shifts another.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ValueError("lower/upper must be 1-D arrays of equal length >= 1")
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be strictly below its upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "Domain":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, x, slack: float = DOMAIN_SLACK) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - slack) & (x <= self.upper + slack), axis=-1)

    def to_unit(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last axis of size {self.dim}, got {x.shape}")
        if not np.all(self.contains(x)):
            raise ValueError("point lies outside the domain")
        return (x - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise ValueError(f"expected last axis of size {self.dim}, got {u.shape}")
        return self.lower + u * self.width


def rescale_to_unit(domain: Domain, x) -> np.ndarray:
    return domain.to_unit(x)


def unrescale(domain: Domain, u) -> np.ndarray:
    return domain.from_unit(u)


@dataclass(frozen=True)
class Dataset:
    """Observed inputs (rows) and their noisy outputs."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.outputs, dtype=float)).ravel()
        if np.asarray(self.inputs).size == 0:
            X = X.reshape(0, X.shape[-1] if X.ndim == 2 else 0)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} input rows but {y.shape[0]} outputs")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def check_inside(self, domain: Domain) -> None:
        if len(self) and not np.all(domain.contains(self.inputs)):
            raise ValueError("dataset has inputs outside the domain")

    def append(self, x, y: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.inputs, x]), np.append(self.outputs, float(y)))


@dataclass(frozen=True)
class InputPrior:
    """Input density p_x: uniform on a box, or a diagonal Gaussian.

    A Gaussian prior with a ``domain`` is truncated to that box without
    renormalization (the density is simply zeroed outside).
    """

    kind: str
    domain: Optional[Domain] = None
    variances: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "uniform" and self.domain is None:
            raise ValueError("uniform prior needs a domain")
        if self.kind == "gaussian":
            var = np.atleast_1d(np.asarray(self.variances, dtype=float))
            if not np.all(var > 0):
                raise ValueError("Gaussian prior variances must be strictly positive")
            mean = np.zeros_like(var) if self.mean is None else np.asarray(self.mean, dtype=float)
            object.__setattr__(self, "variances", var)
            object.__setattr__(self, "mean", mean)

    @classmethod
    def uniform(cls, domain: Domain) -> "InputPrior":
        return cls("uniform", domain=domain)

    @classmethod
    def gaussian(cls, variances, domain: Optional[Domain] = None, mean=None) -> "InputPrior":
        return cls("gaussian", domain=domain, variances=variances, mean=mean)

    @property
    def dim(self) -> int:
        return self.domain.dim if self.domain is not None else self.variances.size

    def density(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "uniform":
            return np.where(self.domain.contains(X, slack=0.0), 1.0 / self.domain.volume, 0.0)
        z2 = np.sum((X - self.mean) ** 2 / self.variances, axis=1)
        norm = np.sqrt(np.prod(2.0 * np.pi * self.variances))
        p = np.exp(-0.5 * z2) / norm
        if self.domain is not None:
            p = np.where(self.domain.contains(X, slack=0.0), p, 0.0)
        return p

    def _truncation_bounds(self):
        sd = np.sqrt(self.variances)
        return ndtr((self.domain.lower - self.mean) / sd), ndtr((self.domain.upper - self.mean) / sd)

    def mass(self) -> float:
        """Probability mass of the (untruncated) prior inside its domain."""
        if self.kind == "uniform" or self.domain is None:
            return 1.0
        lo, hi = self._truncation_bounds()
        return float(np.prod(hi - lo))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` points from p_x (restricted to the domain if it has one)."""
        if self.kind == "uniform":
            return self.domain.from_unit(rng.random((n, self.dim)))
        sd = np.sqrt(self.variances)
        if self.domain is None:
            return self.mean + sd * rng.standard_normal((n, self.dim))
        lo, hi = self._truncation_bounds()
        u = lo + (hi - lo) * rng.random((n, self.dim))
        return np.clip(self.mean + sd * ndtri(u), self.domain.lower, self.domain.upper)

    def sampling_density(self, X) -> np.ndarray:
        """Normalized density of :meth:`sample`'s output."""
        return self.density(X) / self.mass()

    def to_unit(self, domain: Domain) -> "InputPrior":
        """The same prior expressed in the unit-cube coordinates of ``domain``."""
        unit = Domain.unit(domain.dim)
        if self.kind == "uniform":
            return InputPrior.uniform(unit)
        mean = (self.mean - domain.lower) / domain.width
        return InputPrior.gaussian(self.variances / domain.width**2, domain=unit, mean=mean)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one batch of BO runs."""

    objective: str
    domain: Domain
    acquisition: "AcquisitionSpec"
    n_init: int = 3
    n_iter: int = 60
    noise_variance: float = 1e-3
    n_gmm: int = 2
    n_samples_kde: int = 100_000
    n_fit_samples: int = 10_000
    seed: int = 0
    prior: Optional[InputPrior] = None
    objective_params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.n_iter < 0:
            raise ValueError("n_iter must be >= 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        if self.n_gmm < 1:
            raise ValueError("n_gmm must be >= 1")
        if self.prior is None:
            self.prior = InputPrior.uniform(self.domain)

    @property
    def dim(self) -> int:
        return self.domain.dim

