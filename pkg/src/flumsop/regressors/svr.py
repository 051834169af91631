import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..errors import DivergedTraining, InsufficientData
from ._base import validate_fit_data, validate_predict_data


def tube_subgradient(residual, epsilon):
    """d/dr of max(0, |r| - eps): zero inside the tube, sign(r) outside."""
    r = np.asarray(residual, dtype=np.float64)
    return np.where(np.abs(r) > epsilon, np.sign(r), 0.0)


def svr_objective(w, b, X, y, epsilon, C):
    r = X @ w + b - y
    return C * np.maximum(0.0, np.abs(r) - epsilon).sum() + 0.5 * float(w @ w)


class LinearSVR(RegressorMixin, BaseEstimator):
    """Linear epsilon-insensitive regression by stochastic subgradient descent.

    Minimises ``C * sum(max(0, |w.x + b - y| - epsilon)) + 0.5 * ||w||^2``.
    Updates follow the objective divided by the row count, with step
    ``learning_rate / (sqrt(1 + epoch) * max(1, mean ||x||^2))``; the norm
    factor keeps wide standardized inputs from overshooting.
    ``objective_curve_`` records the full objective after each epoch.
    """

    _kind = "svr"

    def __init__(self, epsilon=0.1, C=1.0, epochs=200, learning_rate=1.0, batch_size=32, random_state=0):
        self.epsilon = epsilon
        self.C = C
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y, feature_names=None):
        if self.epsilon < 0 or self.C <= 0:
            raise ValueError("epsilon must be >= 0 and C > 0")
        X, y = validate_fit_data(self, X, y, feature_names)
        n, p = X.shape
        if n < 1:
            raise InsufficientData("no rows")
        rng = np.random.default_rng(self.random_state)
        w = np.zeros(p)
        b = 0.0
        curve = []
        norm = max(1.0, float(np.mean(np.einsum("ij,ij->i", X, X))))
        for epoch in range(self.epochs):
            step = self.learning_rate / (np.sqrt(1.0 + epoch) * norm)
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                rows = order[start : start + self.batch_size]
                g = tube_subgradient(X[rows] @ w + b - y[rows], self.epsilon)
                gw = self.C * (X[rows].T @ g) / len(rows) + w / n
                gb = self.C * g.mean()
                w = w - step * gw
                b = b - step * gb
            obj = svr_objective(w, b, X, y, self.epsilon, self.C)
            if not np.isfinite(obj):
                raise DivergedTraining(f"objective became non-finite at epoch {epoch}")
            curve.append(obj)
        self.coef_ = w
        self.intercept_ = float(b)
        self.objective_curve_ = curve
        return self

    def predict(self, X):
        X = validate_predict_data(self, X)
        return X @ self.coef_ + self.intercept_

    def _get_state(self):
        return {
            "n_features_in_": self.n_features_in_,
            "feature_names_in_": list(self.feature_names_in_),
            "coef_": self.coef_,
            "intercept_": self.intercept_,
            "objective_curve_": list(self.objective_curve_),
        }

    def _set_state(self, s):
        self.n_features_in_ = s["n_features_in_"]
        self.feature_names_in_ = np.array(s["feature_names_in_"], dtype=object)
        self.coef_ = np.asarray(s["coef_"], dtype=np.float64)
        self.intercept_ = float(s["intercept_"])
        self.objective_curve_ = list(s["objective_curve_"])
