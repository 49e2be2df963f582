import math

import numpy as np
import pytest

from conftest import randomize_model
from quantflow.detector import (
    ScoreSet,
    Threshold,
    decide,
    load_scores,
    load_threshold,
    save_scores,
    save_scores_text,
    save_threshold,
    score,
    select_threshold,
)
from quantflow.errors import BadMagicError, ShapeMismatchError, TruncatedPayloadError
from quantflow.features import FeatureSet
from quantflow.flow import TRAINING, FlowModel


def identity_model(dim=2):
    return FlowModel.create(dim, 1, 1, 4, 3.0, seed=0)


class TestScore:
    def test_analytic_gaussian_values(self):
        """Identity model scores are standard-normal log-densities."""
        model = identity_model(dim=2)
        fs = FeatureSet(data=np.array([[0.0, 0.0], [1.0, 0.0]], dtype=np.float32))
        result = score(model, fs)
        np.testing.assert_allclose(
            result.scores,
            [-math.log(2 * math.pi), -math.log(2 * math.pi) - 0.5],
            rtol=1e-7,
        )

    def test_deterministic(self, rng):
        model = randomize_model(FlowModel.create(8, 2, 2, 16, 3.0, seed=1), rng)
        fs = FeatureSet(data=rng.standard_normal((50, 8)).astype(np.float32))
        a = score(model, fs)
        b = score(model, fs)
        assert np.array_equal(a.scores, b.scores)

    def test_batch_equals_per_sample(self, rng):
        model = randomize_model(FlowModel.create(4, 2, 2, 16, 3.0, seed=1), rng)
        fs = FeatureSet(data=rng.standard_normal((20, 4)).astype(np.float32))
        batched = score(model, fs).scores
        data = fs.as_float64()
        singles = np.array([model.log_prob(data[i]) for i in range(20)])
        np.testing.assert_allclose(batched, singles, atol=1e-12)

    def test_dim_mismatch(self, rng):
        model = identity_model(dim=2)
        fs = FeatureSet(data=rng.standard_normal((5, 4)).astype(np.float32))
        with pytest.raises(ShapeMismatchError):
            score(model, fs)

    def test_training_mode_refused(self, rng):
        model = identity_model(dim=2)
        model.mode = TRAINING
        fs = FeatureSet(data=rng.standard_normal((5, 2)).astype(np.float32))
        with pytest.raises(RuntimeError):
            score(model, fs)

    def test_order_preserved(self, rng):
        model = identity_model(dim=2)
        data = rng.standard_normal((10, 2)).astype(np.float32)
        fs = FeatureSet(data=data)
        result = score(model, fs)
        flipped = score(model, FeatureSet(data=data[::-1].copy()))
        np.testing.assert_allclose(result.scores, flipped.scores[::-1], atol=0)

    def test_labels_echoed_through(self, rng):
        model = identity_model(dim=2)
        fs = FeatureSet(
            data=rng.standard_normal((6, 2)).astype(np.float32),
            labels=np.arange(6, dtype=np.uint32),
        )
        result = score(model, fs)
        assert result.labels is not None
        assert np.array_equal(result.labels, fs.labels)
        unlabeled = score(model, FeatureSet(data=fs.data))
        assert unlabeled.labels is None


class TestSelectThreshold:
    def test_worked_example_1_to_100(self):
        """Scores 1..100 at beta 0.95: tau interpolates to 5.95."""
        scores = ScoreSet(scores=np.arange(1.0, 101.0))
        threshold = select_threshold(scores, beta=0.95)
        assert threshold.tau == pytest.approx(5.95, abs=1e-12)

    def test_all_equal(self):
        scores = ScoreSet(scores=np.full(40, 3.25))
        threshold = select_threshold(scores, beta=0.95)
        assert threshold.tau == 3.25
        assert decide(scores, threshold).all()

    def test_detection_rate_within_band_any_n(self, rng):
        """Rate in [beta, beta + 1/N] for arbitrary sizes, not just nice ones."""
        for _ in range(300):
            n = int(rng.integers(2, 500))
            beta = float(rng.uniform(0.5, 0.99))
            scores = ScoreSet(scores=rng.standard_normal(n))
            threshold = select_threshold(scores, beta=beta)
            rate = float(np.mean(scores.scores >= threshold.tau))
            assert beta <= rate <= beta + 1.0 / n + 1e-12, (n, beta, rate)

    def test_monotone_transform_keeps_decisions(self, rng):
        scores = rng.standard_normal(101)
        t1 = select_threshold(ScoreSet(scores=scores), beta=0.9)
        d1 = scores >= t1.tau
        squashed = np.tanh(scores)  # strictly increasing
        t2 = select_threshold(ScoreSet(scores=squashed), beta=0.9)
        d2 = squashed >= t2.tau
        assert np.array_equal(d1, d2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_threshold(ScoreSet(scores=np.zeros(0)), beta=0.95)

    def test_bad_beta(self):
        with pytest.raises(ValueError):
            select_threshold(ScoreSet(scores=np.arange(10.0)), beta=1.0)


class TestDecide:
    def test_boundary_is_inlier(self):
        threshold = Threshold(tau=2.5, beta=0.95)
        scores = ScoreSet(scores=np.array([2.5, 2.5 - 1e-9, 3.0]))
        mask = decide(scores, threshold)
        assert mask.tolist() == [True, False, True]

    def test_monotone_in_score(self, rng):
        threshold = Threshold(tau=0.0, beta=0.9)
        s = np.sort(rng.standard_normal(50))
        mask = decide(ScoreSet(scores=s), threshold)
        assert all(int(a) <= int(b) for a, b in zip(mask, mask[1:]))

    def test_pure_function(self, rng):
        threshold = Threshold(tau=0.3, beta=0.9)
        scores = ScoreSet(scores=rng.standard_normal(20))
        assert np.array_equal(decide(scores, threshold), decide(scores, threshold))


class TestScoreIO:
    def test_binary_round_trip(self, rng, tmp_path):
        values = rng.standard_normal(30).astype(np.float32).astype(np.float64)
        scores = ScoreSet(scores=values, source="src", model_id="mid")
        path = tmp_path / "s.qods"
        save_scores(scores, path)
        back = load_scores(path)
        np.testing.assert_array_equal(back.scores, values)

    def test_text_export(self, tmp_path):
        scores = ScoreSet(scores=np.array([1.5, -2.25]))
        path = tmp_path / "s.txt"
        save_scores_text(scores, path)
        lines = path.read_text().splitlines()
        assert lines[0].split("\t") == ["0", "1.5"]
        assert lines[1].split("\t") == ["1", "-2.25"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.qods"
        path.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(BadMagicError):
            load_scores(path)

    def test_truncated(self, rng, tmp_path):
        path = tmp_path / "t.qods"
        save_scores(ScoreSet(scores=rng.standard_normal(10)), path)
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(TruncatedPayloadError):
            load_scores(path)

    def test_threshold_round_trip(self, tmp_path):
        threshold = Threshold(tau=-12.345678901234567, beta=0.95, calibration_id="cal")
        path = tmp_path / "t.txt"
        save_threshold(threshold, path)
        back = load_threshold(path)
        assert back.tau == threshold.tau
        assert back.beta == threshold.beta
        assert back.calibration_id == "cal"
