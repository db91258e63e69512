"""Synthetic benchmark objectives, their fixtures, and unit-cube wrappers.

Reference minimizers and minimum values are not hard-coded: they come from
the brute-force oracles in :func:`derive_fixture`, stored once in
``data/benchmarks.json`` (override the path with ``OWBO_FIXTURES``) and
re-probed by the test-suite.
"""
from __future__ import annotations

import functools
import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .core import Domain
from .density import Kde1d, kde_1d
from .optim import lhs

MICHALEWICZ_M = 10

HARTMANN_A = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_ALPHA = np.array(
    [
        [10, 3, 17, 3.5, 1.7, 8],
        [0.05, 10, 17, 0.1, 8, 14],
        [3, 3.5, 1.7, 10, 17, 8],
        [17, 8, 0.05, 10, 0.1, 14],
    ]
)
HARTMANN_P = np.array(
    [
        [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
        [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
        [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
        [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
    ]
)


def _as_rows(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def _out(vals, single):
    return float(vals[0]) if single else vals


def ackley(x, a: float = 20.0, b: float = 0.2, c: float = 2 * np.pi):
    X, single = _as_rows(x)
    d = X.shape[1]
    r = np.sqrt(np.sum(X**2, axis=1) / d)
    vals = -a * np.exp(-b * r) - np.exp(np.sum(np.cos(c * X), axis=1) / d) + a + np.e
    return _out(vals, single)


def branin(x):
    X, single = _as_rows(x)
    a, b, c, r, s, t = 1.0, 5.1 / (4 * np.pi**2), 5.0 / np.pi, 6.0, 10.0, 1.0 / (8 * np.pi)
    x1, x2 = X[:, 0], X[:, 1]
    vals = a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s
    return _out(vals, single)


def bukin(x):
    X, single = _as_rows(x)
    x1, x2 = X[:, 0], X[:, 1]
    vals = 100.0 * np.sqrt(np.abs(x2 - 0.01 * x1**2)) + 0.01 * np.abs(x1 + 10.0)
    return _out(vals, single)


def michalewicz_terms(X, m: int = MICHALEWICZ_M) -> np.ndarray:
    """Per-coordinate terms; the function is their sum (it is separable)."""
    i = np.arange(1, X.shape[1] + 1)
    return -np.sin(X) * np.sin(i * X**2 / np.pi) ** (2 * m)


def michalewicz(x, m: int = MICHALEWICZ_M):
    X, single = _as_rows(x)
    return _out(michalewicz_terms(X, m).sum(axis=1), single)


def hartmann6(x):
    X, single = _as_rows(x)
    inner = np.einsum("ij,nij->ni", HARTMANN_ALPHA, (X[:, None, :] - HARTMANN_P[None]) ** 2)
    vals = -np.exp(-inner) @ HARTMANN_A
    return _out(vals, single)


def hartmann6_grad(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    diff = x - HARTMANN_P
    e = HARTMANN_A * np.exp(-np.sum(HARTMANN_ALPHA * diff**2, axis=1))
    return (2.0 * e[:, None] * HARTMANN_ALPHA * diff).sum(axis=0)


# ---------------------------------------------------------------------------
# registry

_FUNCTIONS: dict[str, Callable] = {
    "ackley": ackley,
    "branin": branin,
    "bukin": bukin,
    "michalewicz": michalewicz,
    "hartmann6": hartmann6,
}
_FIXED_DIM = {"branin": 2, "bukin": 2, "hartmann6": 6}
NAMES = tuple(_FUNCTIONS)


def standard_domain(name: str, d: int) -> Domain:
    if name == "ackley":
        return Domain(np.full(d, -32.768), np.full(d, 32.768))
    if name == "branin":
        return Domain([-5.0, 0.0], [10.0, 15.0])
    if name == "bukin":
        return Domain([-15.0, -3.0], [-5.0, 3.0])
    if name == "michalewicz":
        return Domain(np.zeros(d), np.full(d, np.pi))
    if name == "hartmann6":
        return Domain(np.zeros(6), np.ones(6))
    raise ValueError(f"unknown benchmark {name!r}")


def _resolve_dim(name: str, d: Optional[int]) -> int:
    if name not in _FUNCTIONS:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {NAMES}")
    if name in _FIXED_DIM:
        if d not in (None, _FIXED_DIM[name]):
            raise ValueError(f"{name} is only defined for d={_FIXED_DIM[name]}")
        return _FIXED_DIM[name]
    if d is None:
        d = 2
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return int(d)


@dataclass(frozen=True)
class Benchmark:
    name: str
    dim: int
    domain: Domain
    evaluate: Callable
    true_minimizers: tuple
    true_min_value: float

    def __call__(self, x):
        return self.evaluate(x)

    def unit_objective(self) -> Callable:
        """Noise-free objective on the unit hypercube."""
        domain, f = self.domain, self.evaluate
        return lambda u: f(domain.from_unit(u))


# ---------------------------------------------------------------------------
# fixtures


def fixture_path() -> str:
    env = os.environ.get("OWBO_FIXTURES")
    if env:
        return env
    return str(resources.files("owbo") / "data" / "benchmarks.json")


@functools.lru_cache(maxsize=4)
def _load_fixtures(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_fixtures() -> dict:
    return _load_fixtures(fixture_path())


def _key(name: str, d: int) -> str:
    return name if name in _FIXED_DIM else f"{name}{d}"


def make(name: str, d: Optional[int] = None) -> Benchmark:
    """Benchmark ``name`` in dimension ``d`` with fixture minimizers."""
    name = name.lower()
    d = _resolve_dim(name, d)
    domain = standard_domain(name, d)
    fx = load_fixtures()
    entry = fx.get(_key(name, d))
    if entry is not None:
        mins = tuple(np.array(m, dtype=float) for m in entry["minimizers"])
        value = float(entry["min_value"])
    elif name == "ackley":
        mins, value = (np.zeros(d),), 0.0
    elif name == "michalewicz" and d <= len(fx["michalewicz_coordinates"]["argmins"]):
        coords = fx["michalewicz_coordinates"]
        mins = (np.array(coords["argmins"][:d]),)
        value = float(michalewicz(mins[0]))
    else:
        raise ValueError(f"no fixture for {name} in d={d}; run tools/derive_fixtures.py")
    return Benchmark(name, d, domain, _FUNCTIONS[name], mins, value)


def _grid(domain: Domain, per_dim: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(domain.lower, domain.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)


def _michalewicz_coordinate(i: int, n_grid: int = 1_000_001) -> tuple[float, float]:
    def g(t):
        return -np.sin(t) * np.sin(i * t**2 / np.pi) ** (2 * MICHALEWICZ_M)

    t = np.linspace(0.0, np.pi, n_grid)
    j = int(np.argmin(g(t)))
    step = t[1] - t[0]
    res = minimize_scalar(g, bounds=(max(t[j] - step, 0.0), min(t[j] + step, np.pi)), method="bounded",
                          options={"xatol": 1e-14})
    return float(res.x), float(res.fun)


def derive_fixture(name: str, d: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> dict:
    """Brute-force reference minimizers for one benchmark.

    * ackley (d=2), branin: dense grid, then local refinement of every grid
      cell within reach of the best value.
    * bukin: 1-D search along the ridge x2 = 0.01 x1^2 cross-checked by a
      dense 2-D grid.
    * michalewicz: separable, so each coordinate is minimized on a 10^6-point
      1-D grid and refined.
    * hartmann6: L-BFGS-B from 10^4 Latin hypercube starts.
    """
    name = name.lower()
    d = _resolve_dim(name, d)
    domain = standard_domain(name, d)
    f = _FUNCTIONS[name]
    rng = rng if rng is not None else np.random.default_rng(0)
    bounds = list(zip(domain.lower, domain.upper))

    if name in ("ackley", "branin") and d == 2:
        per_dim = 2001
        G = _grid(domain, per_dim)
        vals = f(G)
        cut = vals.min() + 0.05 * (np.median(vals) - vals.min())
        cand = G[np.argsort(vals)[:2000]]
        cand = cand[f(cand) <= cut]
        found = []
        for x0 in cand:
            res = minimize(f, x0, method="Nelder-Mead", bounds=bounds,
                           options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000})
            if name == "branin":
                res = minimize(f, res.x, method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-16, "gtol": 1e-12})
            found.append((float(res.fun), np.asarray(res.x)))
        best = min(v for v, _ in found)
        mins = []
        for v, x in sorted(found, key=lambda t: t[0]):
            if v - best <= 1e-8 and all(np.linalg.norm(x - m) > 1e-3 for m in mins):
                mins.append(x)
        settings = {"oracle": "grid+local", "grid_per_dim": per_dim, "refine": "Nelder-Mead"
                    + ("+L-BFGS-B" if name == "branin" else "")}
        return _entry(name, d, domain, mins, f, settings)

    if name == "bukin":
        def ridge(x1):
            return float(f(np.array([x1, 0.01 * x1**2])))

        t = np.linspace(domain.lower[0], domain.upper[0], 100_001)
        j = int(np.argmin([ridge(v) for v in t]))
        res = minimize_scalar(ridge, bounds=(t[max(j - 1, 0)], t[min(j + 1, t.size - 1)]), method="bounded",
                              options={"xatol": 1e-14})
        xm = np.array([res.x, 0.01 * res.x**2])
        G = _grid(domain, 2001)
        grid_min = float(f(G).min())
        if grid_min < f(xm) - 1e-9:
            raise RuntimeError("bukin ridge search disagrees with the grid")
        settings = {"oracle": "ridge line search + grid cross-check", "ridge_points": t.size,
                    "grid_per_dim": 2001, "grid_min": grid_min}
        return _entry(name, d, domain, [xm], f, settings)

    if name == "michalewicz":
        coords = [_michalewicz_coordinate(i) for i in range(1, d + 1)]
        xm = np.array([c[0] for c in coords])
        settings = {"oracle": "separable 1-D grid + bounded refine", "grid_points": 1_000_001}
        return _entry(name, d, domain, [xm], f, settings)

    if name == "hartmann6":
        starts = lhs(10_000, 6, rng)
        best_v, best_x = np.inf, None
        for x0 in starts:
            res = minimize(f, x0, jac=hartmann6_grad, method="L-BFGS-B", bounds=bounds,
                           options={"ftol": 1e-15, "gtol": 1e-12})
            if res.fun < best_v:
                best_v, best_x = float(res.fun), res.x
        settings = {"oracle": "multistart L-BFGS-B", "starts": 10_000, "design": "LHS"}
        return _entry(name, d, domain, [best_x], f, settings)

    if name == "ackley":
        # radial symmetry: the d-dimensional minimizer is the origin for every d
        return _entry(name, d, domain, [np.zeros(d)], f, {"oracle": "grid+local at d=2, symmetric in d"})
    raise ValueError(f"no oracle for {name} in d={d}")


def _entry(name, d, domain, mins, f, settings) -> dict:
    mins = [np.asarray(m, dtype=float) for m in mins]
    value = min(float(f(m)) for m in mins)
    return {
        "name": name,
        "dim": d,
        "domain": {"lower": domain.lower.tolist(), "upper": domain.upper.tolist(),
                   "note": "standard box from the virtual library of simulation experiments; derived, not from the source text"},
        "minimizers": [m.tolist() for m in mins],
        "min_value": value,
        "oracle": settings,
        "derived": True,
    }


def derive_all(rng_seed: int = 0) -> dict:
    out = {}
    for name, d in (("ackley", 2), ("branin", None), ("bukin", None), ("michalewicz", 2),
                    ("michalewicz", 10), ("hartmann6", None)):
        entry = derive_fixture(name, d, np.random.default_rng(rng_seed))
        out[_key(name, entry["dim"])] = entry
    coords = [_michalewicz_coordinate(i) for i in range(1, 11)]
    out["michalewicz_coordinates"] = {
        "argmins": [c[0] for c in coords],
        "min_values": [c[1] for c in coords],
        "note": "per-coordinate minima of the separable Michalewicz terms, i = 1..10",
    }
    return out


# ---------------------------------------------------------------------------
# wrappers


def output_variance(benchmark: Benchmark, rng: np.random.Generator, n_probes: int = 1000) -> float:
    """Output variance over an LHS design of ``n_probes`` points."""
    U = lhs(n_probes, benchmark.dim, rng)
    return float(np.var(benchmark.evaluate(benchmark.domain.from_unit(U))))


class NoisyUnitObjective:
    """``u -> f(unrescale(u)) + N(0, sigma_eps2 * var0)`` on the unit cube."""

    def __init__(self, benchmark: Benchmark, sigma_eps2: float, rng: np.random.Generator):
        if sigma_eps2 < 0:
            raise ValueError("sigma_eps2 must be nonnegative")
        self.benchmark = benchmark
        self.var0 = output_variance(benchmark, rng)
        self.noise_variance = sigma_eps2 * self.var0
        self._rng = rng

    def exact(self, u):
        return self.benchmark.evaluate(self.benchmark.domain.from_unit(u))

    def __call__(self, u) -> float:
        val = float(self.exact(np.asarray(u, dtype=float).ravel()))
        if self.noise_variance > 0:
            val += float(np.sqrt(self.noise_variance) * self._rng.standard_normal())
        return val


def noisy_unit_wrapper(benchmark: Benchmark, sigma_eps2: float, rng: np.random.Generator) -> NoisyUnitObjective:
    return NoisyUnitObjective(benchmark, sigma_eps2, rng)


def output_samples(benchmark: Benchmark, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    X = benchmark.domain.from_unit(rng.random((n_samples, benchmark.dim)))
    return np.asarray(benchmark.evaluate(X))


def output_pdf(benchmark: Benchmark, n_samples: int, rng: np.random.Generator) -> Kde1d:
    """KDE of f(x) for x uniform on the benchmark domain."""
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    return kde_1d(output_samples(benchmark, n_samples, rng))
