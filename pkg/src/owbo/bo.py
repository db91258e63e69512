"""The sequential BO loop and its regret metrics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import gp as gplib
from .acquisition import Acquisition, AcquisitionSpec
from .core import (
    STREAM_DESIGN,
    STREAM_GMM,
    STREAM_GP,
    STREAM_KDE,
    STREAM_NOISE,
    STREAM_RESTARTS,
    Dataset,
    ExperimentConfig,
    make_rng,
)
from .density import DegenerateDensity, build_pipeline
from .optim import lhs, minimize_bounded

log = logging.getLogger(__name__)

UNWEIGHTED = {"lcb-lw": "lcb", "ivr-lw": "ivr", "ivr-lwbo": "ivr-bo"}


@dataclass(frozen=True)
class Truth:
    """Global minimizers (original coordinates) and the minimum value."""

    minimizers: Sequence[np.ndarray]
    y_true: float = 0.0


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    x_rec: np.ndarray  # original coordinates
    simple_regret: float
    distance: float
    observation_regret: float
    wall_seconds: float


@dataclass
class RegretTrace:
    records: list = field(default_factory=list)
    failed: bool = False
    error: str = ""
    data: Optional[Dataset] = None
    noise_variance: float = 0.0
    fallbacks: int = 0  # iterations where the density pipeline was degenerate

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def simple_regret(self) -> np.ndarray:
        return self.column("simple_regret")

    @property
    def distance(self) -> np.ndarray:
        return self.column("distance")

    @property
    def observation_regret(self) -> np.ndarray:
        return self.column("observation_regret")


def metrics(f_rec, y_obs_counts, y_obs, x_rec=None, truth: Optional[Truth] = None):
    """Running-minimum regret sequences.

    Parameters
    ----------
    f_rec : sequence of float
        Noise-free objective at each recommendation.
    y_obs_counts : sequence of int
        Number of observations available at each record.
    y_obs : sequence of float
        All noisy observations, in order.
    x_rec : sequence of arrays, optional
        Recommendations; needed for the distance metric.
    truth : Truth, optional
        Without it, ``y_true = 0`` and the distance is NaN.

    Returns
    -------
    r, ell, r_o : ndarray
    """
    y_true = truth.y_true if truth is not None else 0.0
    r = np.minimum.accumulate(np.asarray(f_rec, dtype=float) - y_true)
    y_obs = np.asarray(y_obs, dtype=float)
    r_o = np.array([y_obs[:c].min() for c in y_obs_counts])
    r_o = np.minimum.accumulate(r_o)
    if truth is None or x_rec is None or not len(truth.minimizers):
        ell = np.full(r.shape, np.nan)
    else:
        M = np.atleast_2d(np.asarray(truth.minimizers, dtype=float))
        d2 = [float(np.min(np.sum((M - np.ravel(x)) ** 2, axis=1))) for x in x_rec]
        ell = np.minimum.accumulate(np.asarray(d2))
    return r, ell, r_o


class BoLoop:
    """Algorithm state for one seeded repeat; advance with :meth:`step`.

    ``objective`` maps unit-cube points to noise-free values; the loop adds
    observation noise itself from its own substream.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        objective: Callable[[np.ndarray], float],
        truth: Optional[Truth] = None,
        noise_scale: Optional[float] = None,
        repeat: int = 0,
        gp_restarts: int = 8,
    ):
        self.config = config
        self.objective = objective
        self.truth = truth
        self.noise_scale = noise_scale
        self.gp_restarts = gp_restarts
        d = config.dim
        self.d = d
        seed = config.seed
        self.rng_design = make_rng(seed, repeat, STREAM_DESIGN)
        self.rng_noise = make_rng(seed, repeat, STREAM_NOISE)
        self.rng_kde = make_rng(seed, repeat, STREAM_KDE)
        self.rng_gmm = make_rng(seed, repeat, STREAM_GMM)
        self.rng_restarts = make_rng(seed, repeat, STREAM_RESTARTS)
        self.rng_gp = make_rng(seed, repeat, STREAM_GP)
        self.unit_prior = config.prior.to_unit(config.domain)
        self.model: Optional[gplib.GpModel] = None
        self.data: Optional[Dataset] = None
        self.trace = RegretTrace()
        self._f_rec: list = []
        self._x_rec: list = []
        self._counts: list = []
        self._u_rec: Optional[np.ndarray] = None
        self.last_pipeline = None

    # -- pieces ---------------------------------------------------------------

    def _observe(self, U: np.ndarray) -> np.ndarray:
        return np.array([float(self.objective(u)) for u in U])

    def _noisy(self, f: np.ndarray) -> np.ndarray:
        if self.noise_var <= 0:
            return f
        return f + np.sqrt(self.noise_var) * self.rng_noise.standard_normal(f.shape)

    def _refit(self):
        init = self.model.hyperparams if self.model is not None else None
        self.model = gplib.fit(self.data, self.rng_gp, n_restarts=self.gp_restarts, init=init,
                               noise_hint=max(self.noise_var, gplib.NOISE_FLOOR))

    def _acquisition(self) -> Acquisition:
        spec = self.config.acquisition
        mixture = None
        self.last_pipeline = None
        if spec.weighted:
            try:
                pipe = build_pipeline(self.model, self.unit_prior, self.config.n_gmm, self.config.n_samples_kde,
                                      self.config.n_fit_samples, self.rng_kde, self.rng_gmm)
                mixture = pipe.mixture
                self.last_pipeline = pipe
            except DegenerateDensity as exc:
                log.info("density pipeline degenerate (%s); using w = 1 this iteration", exc)
                self.trace.fallbacks += 1
                spec = AcquisitionSpec(UNWEIGHTED[spec.kind], spec.xi, spec.kappa)
        return Acquisition(spec, self.model, float(self.data.outputs.min()), mixture)

    def _recommend(self):
        model = self.model
        incumbent = self.data.inputs[int(np.argmin(self.data.outputs))]
        extra = [incumbent] + ([self._u_rec] if self._u_rec is not None else [])
        res = minimize_bounded(model.mean_grad, self.d, 20 * self.d, self.rng_restarts, extra_starts=extra)
        self._u_rec = res.x
        x = self.config.domain.from_unit(res.x)
        self._x_rec.append(x)
        self._f_rec.append(float(self.objective(res.x)))
        self._counts.append(len(self.data))

    def _record(self, seconds: float):
        r, ell, r_o = metrics(self._f_rec, self._counts, self.data.outputs, self._x_rec, self.truth)
        n = len(self.trace.records)
        self.trace.records.append(TraceRecord(n, self._x_rec[-1], float(r[-1]), float(ell[-1]), float(r_o[-1]), seconds))

    # -- public ---------------------------------------------------------------

    def initialize(self):
        t0 = time.perf_counter()
        cfg = self.config
        U = lhs(cfg.n_init, self.d, self.rng_design)
        f = self._observe(U)
        if self.noise_scale is not None:
            scale = self.noise_scale
        else:
            scale = float(np.var(f)) if cfg.n_init > 1 else 0.0
            scale = scale if scale > 0 else 1.0
        self.noise_var = cfg.noise_variance * scale
        self.trace.noise_variance = self.noise_var
        self.data = Dataset(U, self._noisy(f))
        self._refit()
        self._recommend()
        self._record(time.perf_counter() - t0)

    def advance(self) -> np.ndarray:
        """Select the next point, query it and update the surrogate."""
        acq = self._acquisition()
        incumbent = self.data.inputs[int(np.argmin(self.data.outputs))]
        res = minimize_bounded(acq.to_minimize(), self.d, 10 * self.d, self.rng_restarts, extra_starts=[incumbent])
        y = self._noisy(np.array([float(self.objective(res.x))]))[0]
        self.data = self.data.append(res.x, y)
        self._refit()
        return res.x

    def step(self):
        """One iteration: :meth:`advance`, then recommend and record."""
        t0 = time.perf_counter()
        self.advance()
        self._recommend()
        self._record(time.perf_counter() - t0)

    def run(self) -> RegretTrace:
        try:
            self.initialize()
            for _ in range(self.config.n_iter):
                self.step()
        except gplib.GpTrainingError as exc:
            log.warning("surrogate training failed: %s", exc)
            self.trace.failed = True
            self.trace.error = str(exc)
        self.trace.data = self.data
        return self.trace


def run(
    config: ExperimentConfig,
    objective: Callable[[np.ndarray], float],
    truth: Optional[Truth] = None,
    noise_scale: Optional[float] = None,
    repeat: int = 0,
) -> RegretTrace:
    """Run one seeded BO experiment and return its regret trace.

    Parameters
    ----------
    config : ExperimentConfig
    objective : callable
        Noise-free objective on the unit hypercube.
    truth : Truth, optional
        Minimizers in original coordinates and the global minimum.
    noise_scale : float, optional
        Multiplier for ``config.noise_variance``. Defaults to the variance of
        the initial (noise-free) outputs, or 1 when that is zero.
    repeat : int
        Repeat index; selects the substreams of ``config.seed``.
    """
    return BoLoop(config, objective, truth, noise_scale, repeat).run()
