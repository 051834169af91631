import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..errors import MissingFeatureColumn
from ._base import validate_fit_data, validate_predict_data

NAIVE_COLUMNS = {"last_value": "t.lag.0", "seasonal_52": "t.lag.51"}


class NaiveRegressor(RegressorMixin, BaseEstimator):
    """Persistence baselines that copy one lag column.

    ``last_value`` repeats the latest observation, ``seasonal_52`` the
    value one year (52 weeks) before the forecast origin's week.
    """

    _kind = "naive"

    def __init__(self, kind="last_value"):
        self.kind = kind

    def fit(self, X, y=None, feature_names=None):
        if self.kind not in NAIVE_COLUMNS:
            raise ValueError(f"unknown naive kind {self.kind!r}")
        if y is None:
            y = np.zeros(len(X))
        validate_fit_data(self, X, y, feature_names)
        col = NAIVE_COLUMNS[self.kind]
        names = list(self.feature_names_in_)
        if col not in names:
            raise MissingFeatureColumn(f"{self.kind} needs column {col!r}")
        self.column_ = names.index(col)
        return self

    def predict(self, X):
        X = validate_predict_data(self, X)
        return X[:, self.column_].copy()

    def _get_state(self):
        return {
            "n_features_in_": self.n_features_in_,
            "feature_names_in_": list(self.feature_names_in_),
            "column_": self.column_,
        }

    def _set_state(self, s):
        self.n_features_in_ = s["n_features_in_"]
        self.feature_names_in_ = np.array(s["feature_names_in_"], dtype=object)
        self.column_ = int(s["column_"])
