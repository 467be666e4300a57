"""Cosine scores, temperature softmax, and the patch loss."""

import math

import numpy as np
import pytest

from fgpan.classifier import TemperatureParam, patch_loss, patch_probs, patch_scores
from fgpan.data import ClassPrototype, PrototypeSet


def orthonormal_pset(c, d):
    return PrototypeSet(
        d, [ClassPrototype(i, f"c{i}", f"d{i}", np.eye(d)[i]) for i in range(c)]
    )


class TestScores:
    def test_self_prototype_scores_one(self):
        pset = orthonormal_pset(3, 4)
        s = patch_scores(pset.prototypes[0].embedding, pset)
        np.testing.assert_allclose(s, [1.0, 0.0, 0.0], atol=1e-15)

    def test_scale_invariance(self):
        pset = orthonormal_pset(3, 4)
        rng = np.random.default_rng(0)
        h = rng.standard_normal(4)
        np.testing.assert_allclose(
            patch_scores(h, pset), patch_scores(5.0 * h, pset), atol=1e-15
        )

    def test_diagonal_direction(self):
        pset = orthonormal_pset(2, 2)
        s = patch_scores(np.array([1.0, 1.0]) / math.sqrt(2), pset)
        np.testing.assert_allclose(s, [0.7071067811865475] * 2, atol=1e-12)

    def test_scores_bounded(self):
        rng = np.random.default_rng(1)
        pset = orthonormal_pset(4, 6)
        for _ in range(100):
            s = patch_scores(rng.standard_normal(6) * 10, pset)
            assert np.all(s >= -1.0 - 1e-12) and np.all(s <= 1.0 + 1e-12)

    def test_zero_feature_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            patch_scores(np.zeros(4), orthonormal_pset(2, 4))

    def test_unnormalized_prototypes_rejected(self):
        pset = PrototypeSet(2, [
            ClassPrototype(0, "a", "a", [2.0, 0.0]),
            ClassPrototype(1, "b", "b", [0.0, 1.0]),
        ])
        with pytest.raises(ValueError, match="normalized"):
            patch_scores(np.array([1.0, 0.0]), pset)


class TestProbs:
    def test_softmax_values(self):
        p = patch_probs(np.array([1.0, 0.0]), TemperatureParam(0.0))
        np.testing.assert_allclose(p, [0.7310585786300049, 0.2689414213699951], atol=1e-5)

    def test_equal_scores_uniform(self):
        p = patch_probs(np.full(5, 0.3), TemperatureParam(math.log(0.07)))
        np.testing.assert_allclose(p, 0.2, atol=1e-15)

    def test_small_temperature_sharpens(self):
        p = patch_probs(np.array([1.0, 0.0]), TemperatureParam(math.log(0.01)))
        assert p[0] >= 1.0 - 1e-8

    def test_sums_to_one_and_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            s = rng.uniform(-1, 1, size=int(rng.integers(2, 6)))
            tau = float(rng.uniform(0.01, 10))
            p = patch_probs(s, TemperatureParam(math.log(tau)))
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p > 0) and np.all(p < 1)

    def test_temperature_never_changes_ranking(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            s = rng.uniform(-1, 1, size=int(rng.integers(2, 8)))
            tau = float(rng.uniform(0.01, 10))
            p = patch_probs(s, TemperatureParam(math.log(tau)))
            assert int(np.argmax(p)) == int(np.argmax(s))


class TestLoss:
    def test_perfect_prediction(self):
        assert patch_loss(np.array([1.0, 0.0]), 0) == 0.0

    def test_softmax_value(self):
        p = np.array([0.7310585786300049, 0.2689414213699951])
        assert abs(patch_loss(p, 0) - 0.3132616875182228) < 1e-4

    def test_uniform_is_log_c(self):
        for c in (2, 3, 7):
            assert abs(patch_loss(np.full(c, 1.0 / c), 0) - math.log(c)) < 1e-12

    def test_loss_at_argmax_bounded_by_log_c(self):
        """Softmax of any scores puts >= 1/C on the argmax class."""
        rng = np.random.default_rng(4)
        for _ in range(300):
            c = int(rng.integers(2, 8))
            s = rng.standard_normal(c)
            p = patch_probs(s, TemperatureParam(math.log(float(rng.uniform(0.05, 5)))))
            assert patch_loss(p, int(np.argmax(p))) <= math.log(c) + 1e-12

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match="outside"):
            patch_loss(np.array([0.5, 0.5]), 2)
