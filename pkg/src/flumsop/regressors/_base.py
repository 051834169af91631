"""Input validation and (de)serialization shared by the regressors."""

import json

import numpy as np
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import CorruptPayload, FormatVersionMismatch, NonFiniteInput, ShapeMismatch

MODEL_FORMAT = "flumsop-model"
MODEL_VERSION = 1


def validate_fit_data(est, X, y, feature_names=None):
    """Coerce ``X``/``y`` to float arrays and record the feature schema.

    Column names come from a DataFrame's columns or the explicit
    ``feature_names`` argument; without either they are ``x0..x{p-1}``.
    """
    if feature_names is None and hasattr(X, "columns"):
        feature_names = [str(c) for c in X.columns]
    try:
        X = check_array(X, dtype=np.float64)
    except ValueError as exc:
        raise NonFiniteInput(str(exc)) from None
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteInput("y contains NaN or infinity")
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(X.shape[1])]
    feature_names = [str(n) for n in feature_names]
    if len(feature_names) != X.shape[1]:
        raise ShapeMismatch(f"{len(feature_names)} feature names for {X.shape[1]} columns")
    est.n_features_in_ = X.shape[1]
    est.feature_names_in_ = np.array(feature_names, dtype=object)
    return X, y


def validate_predict_data(est, X):
    check_is_fitted(est, "n_features_in_")
    try:
        X = check_array(X, dtype=np.float64)
    except ValueError as exc:
        raise NonFiniteInput(str(exc)) from None
    if X.shape[1] != est.n_features_in_:
        raise ShapeMismatch(f"expected {est.n_features_in_} features, got {X.shape[1]}")
    return X


def _encode(value):
    if isinstance(value, np.ndarray):
        if value.dtype == object:
            return {"__list__": [_encode(v) for v in value.tolist()]}
        return {
            "__ndarray__": value.dtype.str,
            "shape": list(value.shape),
            "data": value.ravel().tolist(),
        }
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__ndarray__" in value:
            arr = np.array(value["data"], dtype=np.dtype(value["__ndarray__"]))
            return arr.reshape(value["shape"])
        if "__list__" in value:
            return np.array([_decode(v) for v in value["__list__"]], dtype=object)
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def model_to_dict(est):
    check_is_fitted(est, "n_features_in_")
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": est._kind,
        "config": _encode(est.get_params(deep=False)),
        "state": _encode(est._get_state()),
    }


def model_from_dict(d):
    from . import MODEL_KINDS

    if d.get("format") != MODEL_FORMAT:
        raise CorruptPayload("not a serialized model")
    if d.get("version") != MODEL_VERSION:
        raise FormatVersionMismatch(f"unsupported model version {d.get('version')!r}")
    try:
        cls = MODEL_KINDS[d["kind"]]
    except KeyError:
        raise CorruptPayload(f"unknown model kind {d.get('kind')!r}") from None
    est = cls(**_decode(d["config"]))
    est._set_state(_decode(d["state"]))
    return est


def save_model(est) -> str:
    """JSON text: a header (format, version, kind, config) plus parameter blocks."""
    return json.dumps(model_to_dict(est))


def load_model(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptPayload(str(exc)) from None
    return model_from_dict(d)
