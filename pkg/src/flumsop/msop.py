"""Multiple single-output prediction: one independent model per horizon.

Every horizon model sees the same observed feature row; forecasts are never
fed back as inputs.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .epiweek import EpiWeek
from .errors import CorruptPayload, FluError, FormatVersionMismatch, HorizonFitError, SchemaMismatch
from .features import FeatureMatrix, FeatureSpec, ScalingStats, Standardizer
from .regressors import make_regressor, model_from_dict, model_to_dict

BUNDLE_FORMAT = "flumsop-bundle"
BUNDLE_VERSION = 1
MODEL_KINDS = ("lstm", "rf", "svr", "naive", "naive_seasonal")
SCALED_KINDS = ("lstm", "svr")


def horizon_seed(seed, horizon):
    return int(seed) ^ int(horizon)


@dataclass
class MsopBundle:
    target_country: str
    feature_names: tuple
    horizon_models: dict  # horizon -> (regressor, ScalingStats or None)
    model_kind: str
    train_window: tuple  # (first origin, last origin)
    seed: int = 0
    spec: FeatureSpec = None
    seeds: dict = field(default_factory=dict)

    @property
    def horizons(self):
        return tuple(sorted(self.horizon_models))

    def spec_hash(self):
        if self.spec is not None:
            return self.spec.digest()
        return hashlib.sha256("\n".join(self.feature_names).encode()).hexdigest()[:16]


def train_msop(fm_train, model_kind, configs=None, seed=0, spec=None):
    """Fit a fresh model per horizon on ``(X, Y[:, h])``.

    Gradient-trained kinds (lstm, svr) get z-scored features and targets
    fitted on these rows; the scalers are kept alongside each model. A
    failure in any horizon aborts the whole bundle.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    if spec is not None and tuple(spec.horizons) != fm_train.horizons:
        raise SchemaMismatch("spec horizons differ from feature-matrix horizons")
    configs = dict(configs or {})
    if np.isnan(fm_train.Y).any():
        raise SchemaMismatch("training rows must have every horizon target")
    names = fm_train.feature_names
    x_scaler = Standardizer().fit(fm_train.X) if model_kind in SCALED_KINDS else None
    models, seeds = {}, {}
    for h in fm_train.horizons:
        y = fm_train.target(h)
        stats = None
        X = fm_train.X
        if x_scaler is not None:
            stats = ScalingStats(x_scaler, Standardizer().fit(y[:, None]))
            X = x_scaler.transform(X)
            y = stats.targets.transform(y[:, None])[:, 0]
        if model_kind.startswith("naive"):
            model = make_regressor(model_kind)
        else:
            seeds[h] = horizon_seed(seed, h)
            model = make_regressor(model_kind, **{**configs, "random_state": seeds[h]})
        try:
            model.fit(X, y, feature_names=names)
        except FluError as exc:
            raise HorizonFitError(h, exc) from exc
        models[h] = (model, stats)
    window = (fm_train.origins[0], fm_train.origins[-1])
    return MsopBundle(fm_train.target_country, names, models, model_kind, window, seed, spec, seeds)


def predict_msop(bundle, fm_rows):
    """Forecasts in original units, shape (rows, horizons)."""
    if tuple(fm_rows.feature_names) != tuple(bundle.feature_names):
        raise SchemaMismatch("feature columns differ from those the bundle was trained on")
    out = np.empty((len(fm_rows), len(bundle.horizons)))
    for j, h in enumerate(bundle.horizons):
        model, stats = bundle.horizon_models[h]
        X = fm_rows.X
        if stats is not None:
            X = stats.features.transform(X)
        pred = model.predict(X)
        if stats is not None:
            pred = stats.targets.inverse_transform(pred[:, None])[:, 0]
        out[:, j] = pred
    return out


class MsopForecaster(BaseEstimator):
    """Estimator facade over :func:`train_msop` / :func:`predict_msop`.

    ``fit`` takes a :class:`FeatureMatrix`, or a plain ``X`` with a target
    matrix ``Y`` whose columns follow ``horizons``.
    """

    def __init__(self, model_kind="lstm", model_params=None, horizons=(1, 2, 3, 4), random_state=0):
        self.model_kind = model_kind
        self.model_params = model_params
        self.horizons = horizons
        self.random_state = random_state

    def _as_matrix(self, X, Y=None, feature_names=None):
        if isinstance(X, FeatureMatrix):
            return X
        X = np.asarray(X, dtype=np.float64)
        if feature_names is None:
            feature_names = [f"x{j}" for j in range(X.shape[1])]
        if Y is None:
            Y = np.full((X.shape[0], len(self.horizons)), np.nan)
        origins = [EpiWeek(2000, 1).shift(i) for i in range(X.shape[0])]
        return FeatureMatrix("", origins, feature_names, X, np.asarray(Y, dtype=np.float64).reshape(len(X), -1), self.horizons)

    def fit(self, X, Y=None, feature_names=None):
        fm = self._as_matrix(X, Y, feature_names)
        self.bundle_ = train_msop(fm, self.model_kind, self.model_params, self.random_state)
        self.n_features_in_ = fm.X.shape[1]
        return self

    def predict(self, X, feature_names=None):
        if not isinstance(X, FeatureMatrix):
            X = self._as_matrix(X, None, feature_names or list(self.bundle_.feature_names))
        return predict_msop(self.bundle_, X)


def save_bundle(bundle, directory):
    """Write ``manifest.json`` plus one ``model_h{H}.json`` per horizon."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for h in bundle.horizons:
        model, stats = bundle.horizon_models[h]
        name = f"model_h{h}.json"
        payload = {"model": model_to_dict(model), "scaling": stats.to_dict() if stats else None}
        (d / name).write_text(json.dumps(payload))
        files[str(h)] = name
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "target_country": bundle.target_country,
        "model_kind": bundle.model_kind,
        "spec": bundle.spec.to_dict() if bundle.spec else None,
        "spec_hash": bundle.spec_hash(),
        "feature_names": list(bundle.feature_names),
        "train_window": [str(bundle.train_window[0]), str(bundle.train_window[1])],
        "seed": bundle.seed,
        "seeds": {str(h): s for h, s in sorted(bundle.seeds.items())},
        "horizons": list(bundle.horizons),
        "files": files,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
    return d


def load_bundle(directory):
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptPayload(f"cannot read bundle manifest: {exc}") from None
    if manifest.get("format") != BUNDLE_FORMAT:
        raise CorruptPayload("not a model bundle")
    if manifest.get("version") != BUNDLE_VERSION:
        raise FormatVersionMismatch(f"unsupported bundle version {manifest.get('version')!r}")
    models = {}
    for h in manifest["horizons"]:
        try:
            payload = json.loads((d / manifest["files"][str(h)]).read_text())
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise CorruptPayload(f"cannot read model for horizon {h}: {exc}") from None
        stats = ScalingStats.from_dict(payload["scaling"]) if payload["scaling"] else None
        models[int(h)] = (model_from_dict(payload["model"]), stats)
    spec = FeatureSpec.from_dict(manifest["spec"]) if manifest["spec"] else None
    window = tuple(EpiWeek.parse(w) for w in manifest["train_window"])
    return MsopBundle(
        manifest["target_country"],
        tuple(manifest["feature_names"]),
        models,
        manifest["model_kind"],
        window,
        manifest["seed"],
        spec,
        {int(h): s for h, s in manifest["seeds"].items()},
    )
