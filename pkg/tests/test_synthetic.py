import math

import numpy as np
import pytest

from quantflow.errors import ConfigError
from quantflow.synthetic import (
    DistSpec,
    analytic_log_prob,
    gaussian_mixture,
    heavy_tailed_task,
    sample,
    standard_normal,
    student_t,
    uniform_box,
)


class TestSample:
    def test_standard_normal_moments(self):
        fs = sample(standard_normal(dim=8, seed=1), 10_000)
        data = fs.as_float64()
        assert np.abs(data.mean(axis=0)).max() < 0.05
        assert np.abs(data.var(axis=0) - 1.0).max() < 0.1

    def test_empty(self):
        fs = sample(standard_normal(dim=4, seed=1), 0)
        assert fs.count == 0
        assert fs.dim == 4

    def test_same_seed_identical(self):
        spec = student_t(dof=4.0, scale=2.0, dim=4, seed=77)
        assert sample(spec, 100) == sample(spec, 100)

    def test_mixture_moments(self):
        spec = gaussian_mixture(
            [
                (np.zeros(2), np.ones(2), 0.5),
                (np.full(2, 6.0), np.full(2, 0.25), 0.5),
            ],
            dim=2,
            seed=3,
        )
        data = sample(spec, 20_000).as_float64()
        np.testing.assert_allclose(data.mean(axis=0), 3.0, atol=0.1)

    def test_uniform_box_support(self):
        spec = uniform_box(-2.0, 5.0, dim=4, seed=9)
        data = sample(spec, 5000).as_float64()
        assert data.min() >= -2.0
        assert data.max() <= 5.0
        np.testing.assert_allclose(data.mean(axis=0), 1.5, atol=0.15)

    def test_negative_count(self):
        with pytest.raises(ConfigError):
            sample(standard_normal(dim=2, seed=0), -1)


class TestSpecValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            gaussian_mixture(
                [(np.zeros(2), np.ones(2), 0.5), (np.ones(2), np.ones(2), 0.6)],
                dim=2,
            )

    def test_bad_box(self):
        with pytest.raises(ConfigError):
            uniform_box(1.0, -1.0, dim=2)

    def test_bad_dof(self):
        with pytest.raises(ConfigError):
            student_t(dof=0.0, scale=1.0, dim=2)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            DistSpec(kind="cauchy", dim=2)


class TestAnalyticLogProb:
    def test_standard_normal_at_origin(self):
        spec = standard_normal(dim=2, seed=0)
        assert analytic_log_prob(spec, np.zeros(2)) == pytest.approx(
            -math.log(2 * math.pi), rel=1e-15
        )

    def test_mixture_far_separated_component(self):
        """At one component's mean, far from the other: log w + peak density."""
        spec = gaussian_mixture(
            [
                (np.zeros(2), np.ones(2), 0.5),
                (np.full(2, 40.0), np.ones(2), 0.5),
            ],
            dim=2,
            seed=0,
        )
        got = analytic_log_prob(spec, np.zeros(2))
        expected = math.log(0.5) - math.log(2 * math.pi)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_uniform_outside_box(self):
        spec = uniform_box(0.0, 1.0, dim=2, seed=0)
        assert analytic_log_prob(spec, np.array([2.0, 0.5])) == -np.inf
        assert analytic_log_prob(spec, np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-12)

    def test_student_t_matches_montecarlo_mass(self):
        """Empirical CDF check: mass inside |x| < 1 matches quadrature."""
        spec = student_t(dof=4.0, scale=1.0, dim=2, seed=5)
        grid = np.linspace(-30.0, 30.0, 3001)
        step = grid[1] - grid[0]
        xx, yy = np.meshgrid(grid, grid)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        total = 0.0
        for i in range(0, len(pts), 500_000):
            total += np.exp(analytic_log_prob(spec, pts[i : i + 500_000])).sum()
        assert total * step * step == pytest.approx(1.0, abs=0.01)

    def test_normal_montecarlo_consistency(self):
        """Mean analytic LL over samples approximates -(differential entropy)."""
        spec = standard_normal(dim=8, seed=11)
        data = sample(spec, 20_000).as_float64()
        mean_ll = analytic_log_prob(spec, data).mean()
        entropy = (8 / 2) * (1 + math.log(2 * math.pi))
        assert mean_ll == pytest.approx(-entropy, rel=0.01)


class TestFlowRecoversKnownDensity:
    def test_mixture_entropy_within_ten_percent(self):
        """A trained flow's held-out mean LL tracks the spec's entropy estimate."""
        from quantflow.detector import score
        from quantflow.training import TrainConfig, train

        components = [
            (np.full(4, -2.0), np.ones(4), 0.5),
            (np.full(4, 2.0), np.full(4, 0.5), 0.5),
        ]
        spec = gaussian_mixture(components, dim=4, seed=200)
        train_fs = sample(spec, 6000)
        held = sample(gaussian_mixture(components, dim=4, seed=201), 3000)
        entropy_estimate = analytic_log_prob(spec, held.as_float64()).mean()
        cfg = TrainConfig(
            epochs=20, batch_size=128, blocks=4, fc_layers=2, fc_neurons=64,
            learning_rate=2e-3, dropout=0.0, seed=3, loss_kind="mean", standardize=True,
        )
        model, _ = train(train_fs, cfg)
        mean_ll = score(model, held).scores.mean()
        assert abs(mean_ll - entropy_estimate) / abs(entropy_estimate) < 0.10


class TestHeavyTailedTask:
    def test_shapes_and_determinism(self):
        task = heavy_tailed_task(dim=8, n_train=1000, n_held_out=200, n_outliers=300, seed=3)
        assert task.train.count == 1000
        assert task.held_out.count == 200
        assert task.outliers.count == 300
        again = heavy_tailed_task(dim=8, n_train=1000, n_held_out=200, n_outliers=300, seed=3)
        assert task.train == again.train
        assert task.outliers == again.outliers

    def test_outlier_box_covers_inliers(self):
        task = heavy_tailed_task(dim=8, n_train=2000, n_held_out=100, n_outliers=100, seed=4)
        t = task.train.as_float64()
        o = task.outliers.as_float64()
        assert o.min(axis=0).min() < t.min(axis=0).min()
        assert o.max(axis=0).max() > t.max(axis=0).max()

    def test_minority_produces_heavy_tail(self):
        task = heavy_tailed_task(dim=8, n_train=20_000, n_held_out=100, n_outliers=100, seed=5)
        data = task.train.as_float64()
        # excess kurtosis of dim 0 well above the Gaussian value of 0
        d0 = data[:, 0] - data[:, 0].mean()
        kurt = (d0**4).mean() / (d0**2).mean() ** 2 - 3.0
        assert kurt > 1.0
