"""Latin hypercube designs and bounded multistart minimization on [0, 1]^d."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

ValueGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


class OptimizationError(RuntimeError):
    pass


def lhs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``[0, 1]^d``.

    Each column holds exactly one point per stratum ``[i/n, (i+1)/n)``:
    an independent random permutation of the strata plus uniform jitter.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    return (strata + rng.random((n, d))) / n


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    starts: np.ndarray
    start_values: np.ndarray
    restart_index: int
    trajectories: list = field(default_factory=list)


def minimize_bounded(
    f: ValueGrad,
    d: int,
    n_restarts: int,
    rng: np.random.Generator,
    extra_starts: Optional[Sequence[np.ndarray]] = None,
    maxiter: int = 200,
    gtol: float = 1e-8,
    record: bool = False,
) -> MinimizeResult:
    """Minimize ``f`` over the unit hypercube from several starts.

    Starts are an LHS design of ``n_restarts`` points followed by any
    ``extra_starts`` (e.g. the incumbent). Each start runs L-BFGS-B, a
    projected quasi-Newton method, stopping when the projected gradient norm
    drops below ``gtol`` or after ``maxiter`` iterations. The lowest terminal
    value wins; ties go to the earliest start.

    With ``record=True`` the objective value at every accepted iterate of
    each restart is kept in ``trajectories``.
    """
    starts = [lhs(n_restarts, d, rng)] if n_restarts > 0 else []
    if extra_starts is not None:
        extra = [np.clip(np.asarray(x, float).ravel(), 0.0, 1.0) for x in extra_starts]
        if extra:
            starts.append(np.vstack(extra))
    if not starts:
        raise ValueError("no starting points")
    starts = np.vstack(starts)
    bounds = [(0.0, 1.0)] * d

    best_x, best_f, best_i = None, np.inf, -1
    start_values = np.full(len(starts), np.nan)
    trajectories = []
    for i, x0 in enumerate(starts):
        f0, g0 = f(x0)
        start_values[i] = f0
        if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
            trajectories.append(None)
            continue
        seen = {x0.tobytes(): f0}
        traj = [f0]

        def fun(x):
            val, grad = f(x)
            if record:
                seen[x.tobytes()] = val
            if not np.isfinite(val):
                return 1e300, np.zeros(d)
            return val, grad

        def callback(xk):
            traj.append(seen.get(np.asarray(xk).tobytes(), np.nan))

        res = minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=callback if record else None,
            options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-12},
        )
        x = np.clip(res.x, 0.0, 1.0)
        fx = float(res.fun)
        if not np.isfinite(fx) or fx > f0:
            x, fx = x0.copy(), float(f0)
        trajectories.append(traj if record else None)
        if fx < best_f:
            best_x, best_f, best_i = x, fx, i
    if best_x is None:
        raise OptimizationError("objective was non-finite at every starting point")
    return MinimizeResult(best_x, best_f, starts, start_values, best_i, trajectories if record else [])
