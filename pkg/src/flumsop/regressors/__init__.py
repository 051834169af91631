from ._base import load_model, model_from_dict, model_to_dict, save_model
from .forest import ForestRegressor
from .lstm import LstmParams, LstmRegressor, init_params, lstm_backward, lstm_forward
from .naive import NaiveRegressor
from .svr import LinearSVR

MODEL_KINDS = {
    "lstm": LstmRegressor,
    "rf": ForestRegressor,
    "svr": LinearSVR,
    "naive": NaiveRegressor,
}


def make_regressor(kind, **params):
    """Build an unfitted regressor; ``naive_seasonal`` is shorthand for the
    52-week seasonal baseline."""
    if kind == "naive_seasonal":
        return NaiveRegressor(kind="seasonal_52")
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(**params)


__all__ = [
    "ForestRegressor",
    "LinearSVR",
    "LstmParams",
    "LstmRegressor",
    "MODEL_KINDS",
    "NaiveRegressor",
    "init_params",
    "load_model",
    "lstm_backward",
    "lstm_forward",
    "make_regressor",
    "model_from_dict",
    "model_to_dict",
    "save_model",
]
