"""Linear two-class toy model exposing the optimal-weight structure.

The classifier scores class k as f_k(x) = phi(x) . w and is trained to raise
the expected score on class-k samples while lowering it on the other class,
with an L2 penalty that pins the scale.  The closed-form optimum is then
proportional to the difference of the class means of phi, which is what
``toy_optimal_weights`` returns: unique features (prominent in one class
only) get large weights, common features cancel out.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import TrainingDivergedError, ValidationError
from .validation import check_finite, check_same_length


def toy_optimal_weights(phi_mean_k, phi_mean_other) -> np.ndarray:
    """Difference of feature-presence expectations, the canonical optimum."""
    a = check_finite("phi_mean_k", phi_mean_k)
    b = check_finite("phi_mean_other", phi_mean_other)
    if a.shape != b.shape:
        raise ValidationError(f"expectation vectors differ in shape: {a.shape} vs {b.shape}")
    return a - b


class ToyLinearClassifier(BaseEstimator):
    """Gradient-trained linear scorer for the two-class objective.

    Maximizes mean(phi_k . w) - mean(phi_other . w) - l2/2 * |w|^2 by full
    batch gradient ascent with momentum; the fixed point is the class-mean
    difference divided by l2.
    """

    def __init__(self, l2=1.0, lr=0.2, momentum=0.9, epochs=300, init_scale=0.0, seed=0):
        self.l2 = l2
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.init_scale = init_scale
        self.seed = seed

    def fit(self, Phi, y):
        Phi = check_finite("Phi", Phi)
        y = np.asarray(y)
        check_same_length(Phi=Phi, y=y)
        if Phi.ndim != 2:
            raise ValidationError("Phi must be (n_samples, n_features)")
        pos = Phi[y == 1]
        neg = Phi[y == 0]
        if len(pos) == 0 or len(neg) == 0:
            raise ValidationError("both classes must be represented")
        rng = np.random.default_rng(self.seed)
        w = self.init_scale * rng.normal(size=Phi.shape[1])
        v = np.zeros_like(w)
        mean_diff = pos.mean(axis=0) - neg.mean(axis=0)
        for epoch in range(self.epochs):
            grad = mean_diff - self.l2 * w
            v = self.momentum * v + self.lr * grad
            w = w + v
            if not np.all(np.isfinite(w)):
                raise TrainingDivergedError(f"weights diverged at epoch {epoch}", epoch=epoch)
        self.coef_ = w
        return self

    def decision_function(self, Phi):
        return check_finite("Phi", Phi) @ self.coef_

    def predict(self, Phi):
        return (self.decision_function(Phi) > 0).astype(int)


def train_toy(samples: np.ndarray, labels: np.ndarray, seed: int = 0, **kwargs) -> np.ndarray:
    """Train the linear layer and return the weight vector."""
    clf = ToyLinearClassifier(seed=seed, **kwargs)
    clf.fit(samples, labels)
    return clf.coef_


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))
