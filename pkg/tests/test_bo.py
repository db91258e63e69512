import numpy as np
import pytest

from owbo import bo
from owbo import gp as gplib
from owbo.acquisition import AcquisitionSpec
from owbo.core import Domain, ExperimentConfig
from owbo.density import GaussianMixture
from owbo.bo import BoLoop, Truth, metrics, run

from oracles import running_min


def quadratic(u):
    return float(np.sum((np.asarray(u) - 0.5) ** 2))


def config(kind="ei", n_iter=5, seed=0, **kw):
    kw.setdefault("n_init", 3)
    kw.setdefault("noise_variance", 0.0)
    kw.setdefault("n_samples_kde", 2000)
    kw.setdefault("n_fit_samples", 1000)
    return ExperimentConfig("quad", Domain.unit(2), AcquisitionSpec(kind), n_iter=n_iter, seed=seed, **kw)


QUAD_TRUTH = Truth([np.array([0.5, 0.5])], 0.0)


class TestMetrics:
    def test_running_min_regret(self):
        r, ell, r_o = metrics([3.0, 1.0, 2.0], [1, 2, 3], [3.0, 1.0, 2.0])
        np.testing.assert_array_equal(r, [3, 1, 1])
        assert np.all(np.isnan(ell))

    def test_nearest_minimizer(self):
        truth = Truth([np.array([0.0, 0.0]), np.array([1.0, 0.0])])
        x_rec = [np.array([0.2, 0.0]), np.array([0.9, 0.0]), np.array([0.5, 0.0])]
        _, ell, _ = metrics([0.0] * 3, [1, 1, 1], [0.0], x_rec, truth)
        np.testing.assert_allclose(ell, [0.04, 0.01, 0.01])

    def test_observation_regret(self):
        _, _, r_o = metrics([0, 0, 0], [1, 2, 3], [0.5, -0.2, 0.1])
        np.testing.assert_array_equal(r_o, [0.5, -0.2, -0.2])

    def test_y_true_offset(self):
        r, _, _ = metrics([3.0, 1.0], [1, 2], [0.0, 0.0], truth=Truth([], y_true=0.5))
        np.testing.assert_array_equal(r, [2.5, 0.5])


class TestLoop:
    def test_zero_iterations(self):
        tr = run(config(n_iter=0), quadratic, QUAD_TRUTH)
        assert len(tr) == 1
        assert tr.records[0].observation_regret == tr.data.outputs.min()
        assert len(tr.data) == 3

    def test_dataset_length_and_monotone(self):
        for kind in ("ei", "lcb-lw", "ivr-lwbo"):
            tr = run(config(kind, n_iter=4, noise_variance=1e-3), quadratic, QUAD_TRUTH)
            assert not tr.failed
            assert len(tr.data) == 3 + 4 and len(tr) == 5
            for col in (tr.simple_regret, tr.distance, tr.observation_regret):
                np.testing.assert_array_equal(col, running_min(col))
            assert np.all(tr.simple_regret >= 0)

    def test_queries_inside_unit_cube(self):
        tr = run(config("ivr", n_iter=4), quadratic, QUAD_TRUTH)
        assert np.all((tr.data.inputs >= 0) & (tr.data.inputs <= 1))

    def test_deterministic(self):
        a = run(config("lcb-lw", n_iter=3, noise_variance=1e-2, seed=7), quadratic, QUAD_TRUTH)
        b = run(config("lcb-lw", n_iter=3, noise_variance=1e-2, seed=7), quadratic, QUAD_TRUTH)
        np.testing.assert_array_equal(a.data.inputs, b.data.inputs)
        np.testing.assert_array_equal(a.data.outputs, b.data.outputs)
        np.testing.assert_array_equal(a.simple_regret, b.simple_regret)

    def test_repeats_differ(self):
        a = run(config(n_iter=0), quadratic, repeat=0)
        b = run(config(n_iter=0), quadratic, repeat=1)
        assert np.any(a.data.inputs != b.data.inputs)

    def test_noise_free_regret_under_noise(self):
        tr = run(config("ei", n_iter=3, noise_variance=0.5), quadratic, QUAD_TRUTH, noise_scale=1.0)
        f = [quadratic(x) for x in (r.x_rec for r in tr.records)]
        np.testing.assert_allclose(tr.simple_regret, running_min(f), rtol=1e-12)
        assert tr.noise_variance == 0.5

    def test_no_truth_gives_nan_distance(self):
        tr = run(config(n_iter=1), quadratic)
        assert np.all(np.isnan(tr.distance))

    def test_quadratic_sanity(self):
        hits = 0
        for seed in range(20):
            tr = run(config("ei", n_iter=15, seed=seed), quadratic, QUAD_TRUTH)
            hits += tr.simple_regret[-1] <= 1e-2
        assert hits >= 18


class TestWeightedKinds:
    def test_acquisition_gets_mixture(self, monkeypatch):
        seen = []
        real = bo.Acquisition

        def spy(spec, model, best_y=None, mixture=None):
            seen.append((spec.kind, type(mixture)))
            return real(spec, model, best_y, mixture)

        monkeypatch.setattr(bo, "Acquisition", spy)
        run(config("ivr-lw", n_iter=3), quadratic)
        assert seen and all(kind == "ivr-lw" and t is GaussianMixture for kind, t in seen)

    def test_degenerate_falls_back(self, monkeypatch):
        def flat(*a, **k):
            raise bo.DegenerateDensity("flat")

        monkeypatch.setattr(bo, "build_pipeline", flat)
        tr = run(config("lcb-lw", n_iter=3), quadratic)
        assert tr.fallbacks == 3 and not tr.failed and len(tr) == 4


class TestFailure:
    def test_training_failure_gives_partial_trace(self, monkeypatch):
        real = gplib.fit
        calls = {"n": 0}

        def flaky(*a, **k):
            calls["n"] += 1
            if calls["n"] > 3:
                raise gplib.GpTrainingError("boom")
            return real(*a, **k)

        monkeypatch.setattr(gplib, "fit", flaky)
        tr = run(config(n_iter=6), quadratic, QUAD_TRUTH)
        assert tr.failed and "boom" in tr.error
        assert len(tr) == 3
