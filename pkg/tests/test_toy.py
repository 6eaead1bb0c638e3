import numpy as np
import pytest

from synthloop.errors import ValidationError
from synthloop.toy import ToyLinearClassifier, cosine_similarity, toy_optimal_weights, train_toy


class TestOptimalWeights:
    def test_identical_expectations_zero(self):
        w = toy_optimal_weights([0.5, 0.5], [0.5, 0.5])
        np.testing.assert_array_equal(w, [0.0, 0.0])

    def test_unique_feature_gets_full_weight(self):
        w = toy_optimal_weights([1.0, 0.5], [0.0, 0.5])
        np.testing.assert_array_equal(w, [1.0, 0.0])

    def test_random_vectors_elementwise_difference(self, rng):
        a, b = rng.normal(size=8), rng.normal(size=8)
        np.testing.assert_allclose(toy_optimal_weights(a, b), a - b)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            toy_optimal_weights([1.0], [1.0, 2.0])


def gaussian_classes(rng, n=10000, dim=8, mean_k=None, mean_other=None, sigma=1.0):
    mean_k = np.zeros(dim) if mean_k is None else np.asarray(mean_k, dtype=float)
    mean_other = np.zeros(dim) if mean_other is None else np.asarray(mean_other, dtype=float)
    phi_k = rng.normal(mean_k, sigma, size=(n // 2, dim))
    phi_o = rng.normal(mean_other, sigma, size=(n - n // 2, dim))
    phi = np.vstack([phi_k, phi_o])
    y = np.concatenate([np.ones(len(phi_k), int), np.zeros(len(phi_o), int)])
    return phi, y


class TestToyTraining:
    def test_symmetric_classes_give_near_zero_weights(self, rng):
        phi, y = gaussian_classes(rng, n=20000, sigma=1.0)
        w = train_toy(phi, y, seed=0)
        assert np.linalg.norm(w) < 0.05
        # Oracle: the closed form on empirical means predicts the same residue.
        oracle = toy_optimal_weights(phi[y == 1].mean(axis=0), phi[y == 0].mean(axis=0))
        np.testing.assert_allclose(w, oracle, atol=1e-6)

    def test_cosine_with_closed_form_on_empirical_means(self, rng):
        mean_k = np.array([1.0, 0.5, 0.0, 0.2, 0.0, 0.0, 0.4, 0.0])
        mean_o = np.array([0.0, 0.5, 0.3, 0.0, 0.0, 0.1, 0.0, 0.0])
        phi, y = gaussian_classes(rng, mean_k=mean_k, mean_other=mean_o)
        w = train_toy(phi, y, seed=0)
        oracle = toy_optimal_weights(phi[y == 1].mean(axis=0), phi[y == 0].mean(axis=0))
        assert cosine_similarity(w, oracle) >= 0.99

    def test_unique_feature_example(self, rng):
        phi, y = gaussian_classes(rng, dim=2, mean_k=[1.0, 0.5], mean_other=[0.0, 0.5], sigma=0.3)
        w = train_toy(phi, y, seed=0)
        assert cosine_similarity(w, [1.0, 0.0]) >= 0.99

    def test_reinforcing_injection_increases_weight(self, rng):
        # Rerun oracle: retrain with injected prominent-feature samples.
        phi, y = gaussian_classes(rng, n=4000)
        base = train_toy(phi, y, seed=0)
        feature = 2
        previous = base[feature]
        for level in (200, 400, 800):
            extra = rng.normal(0.0, 1.0, size=(level, 8))
            extra[:, feature] += 2.0
            phi_aug = np.vstack([phi, extra])
            y_aug = np.concatenate([y, np.ones(level, int)])
            w = train_toy(phi_aug, y_aug, seed=0)
            assert w[feature] > previous
            previous = w[feature]

    def test_disruptive_injection_decreases_weight(self, rng):
        # Common feature: elevated in both classes, then suppressed in class k.
        mean = np.zeros(8)
        mean[5] = 1.5
        phi, y = gaussian_classes(rng, n=4000, mean_k=mean, mean_other=mean)
        base = train_toy(phi, y, seed=0)
        previous = base[5]
        for level in (200, 400, 800):
            extra = rng.normal(0.0, 1.0, size=(level, 8))  # feature 5 absent
            phi_aug = np.vstack([phi, extra])
            y_aug = np.concatenate([y, np.ones(level, int)])
            w = train_toy(phi_aug, y_aug, seed=0)
            assert w[5] < previous
            previous = w[5]

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            ToyLinearClassifier().fit(np.ones((4, 2)), np.ones(4, int))

    def test_get_params_round_trip(self):
        clf = ToyLinearClassifier(l2=2.0, lr=0.1)
        params = clf.get_params()
        assert params["l2"] == 2.0
        clone = ToyLinearClassifier(**params)
        assert clone.get_params() == params
