"""Softmax-regression probe with the scikit-learn estimator interface."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LinearProbe(ClassifierMixin, BaseEstimator):
    """One linear layer trained by full-batch gradient descent on mean cross-entropy.

    With ``standardize`` (the default) each feature is centred and scaled by
    its mean and standard deviation over the fitting data before the layer,
    which keeps a fixed step budget well conditioned for unit-norm embeddings.
    Weights start at zero, so the fit is a deterministic function of the data.
    """

    def __init__(self, iterations: int = 500, lr: float = 0.1, standardize: bool = True):
        self.iterations = iterations
        self.lr = lr
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        self.n_features_in_ = X.shape[1]
        if self.standardize:
            scale = X.std(axis=0)
            self.mean_, self.scale_ = X.mean(axis=0), np.where(scale > 1e-12, scale, 1.0)
        else:
            self.mean_, self.scale_ = np.zeros(X.shape[1]), np.ones(X.shape[1])
        X = (X - self.mean_) / self.scale_
        target = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        n, k = len(X), len(self.classes_)
        W = np.zeros((X.shape[1], k))
        b = np.zeros(k)
        for _ in range(int(self.iterations)):
            g = (_softmax(X @ W + b) - target) / n
            W -= self.lr * (X.T @ g)
            b -= self.lr * g.sum(axis=0)
        self.coef_, self.intercept_ = W, b
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
