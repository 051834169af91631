"""Supervised design matrices from a country panel.

For a target country and forecast origin ``t`` a row holds

* ``t.lag.K``   -- target value at ``t - K``, K = 0..L-1
* ``t.diff.K``  -- ``X[t-K] - X[t-K-1]``, K = 0..L-2
* ``t.w{W}.{stat}`` -- statistic over the window ``X[t-W+1..t]``
* ``s.{country}.lag.K`` -- other countries' lags (spatial block)

and the targets ``y.h{H}`` hold the target value at ``t + H``.
"""

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .epiweek import EpiWeek
from .errors import (
    CorruptPayload,
    DimensionMismatch,
    EmptySplit,
    InsufficientHistory,
    MissingDataInScope,
    UnknownCountry,
)

STATS = ("mean", "median", "std", "max", "min")
DEFAULT_WINDOWS = (1, 2, 3, 4, 9, 13, 26, 52)


@dataclass(frozen=True)
class FeatureSpec:
    lag_depth: int = 52
    windows: tuple = DEFAULT_WINDOWS
    stats: tuple = STATS
    include_first_diff: bool = True
    spatial: bool = True
    horizons: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        unknown = set(self.stats) - set(STATS)
        if unknown:
            raise ValueError(f"unknown statistics {sorted(unknown)}")
        # canonical order keeps column names deterministic
        object.__setattr__(self, "stats", tuple(s for s in STATS if s in set(self.stats)))
        if self.lag_depth < 1:
            raise ValueError("lag_depth must be >= 1")
        if any(w < 1 for w in self.windows):
            raise ValueError("windows must be >= 1")
        if self.windows and max(self.windows) > self.lag_depth:
            raise ValueError("lag_depth must cover the largest window")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be positive")
        if len(set(self.horizons)) != len(self.horizons):
            raise ValueError("horizons must be distinct")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return FeatureSpec(**d)

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def n_columns(self, n_countries):
        n = self.lag_depth
        if self.include_first_diff:
            n += self.lag_depth - 1
        n += len(self.windows) * len(self.stats)
        if self.spatial:
            n += (n_countries - 1) * self.lag_depth
        return n


def feature_names(spec, countries, target):
    names = [f"t.lag.{k}" for k in range(spec.lag_depth)]
    if spec.include_first_diff:
        names += [f"t.diff.{k}" for k in range(spec.lag_depth - 1)]
    names += [f"t.w{w}.{s}" for w in spec.windows for s in spec.stats]
    if spec.spatial:
        for c in countries:
            if c != target:
                names += [f"s.{c}.lag.{k}" for k in range(spec.lag_depth)]
    return names


@dataclass
class FeatureMatrix:
    target_country: str
    origins: list
    feature_names: tuple
    X: np.ndarray
    Y: np.ndarray
    horizons: tuple = field(default=(1, 2, 3, 4))

    def __post_init__(self):
        self.origins = list(self.origins)
        self.feature_names = tuple(self.feature_names)
        self.horizons = tuple(int(h) for h in self.horizons)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        n = len(self.origins)
        if self.X.shape != (n, len(self.feature_names)):
            raise DimensionMismatch(f"X shape {self.X.shape} != ({n}, {len(self.feature_names)})")
        if self.Y.shape != (n, len(self.horizons)):
            raise DimensionMismatch(f"Y shape {self.Y.shape} != ({n}, {len(self.horizons)})")

    def __len__(self):
        return len(self.origins)

    @property
    def target_names(self):
        return tuple(f"y.h{h}" for h in self.horizons)

    def take(self, rows):
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return FeatureMatrix(
            self.target_country,
            [self.origins[i] for i in rows],
            self.feature_names,
            self.X[rows],
            self.Y[rows],
            self.horizons,
        )

    def columns(self, names):
        """Copy keeping only the named feature columns."""
        pos = {n: i for i, n in enumerate(self.feature_names)}
        idx = [pos[n] for n in names]
        return FeatureMatrix(
            self.target_country, self.origins, tuple(names), self.X[:, idx], self.Y, self.horizons
        )

    def target(self, horizon):
        return self.Y[:, self.horizons.index(horizon)]

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return (
            self.target_country == other.target_country
            and self.origins == other.origins
            and self.feature_names == other.feature_names
            and self.horizons == other.horizons
            and np.array_equal(self.X, other.X, equal_nan=True)
            and np.array_equal(self.Y, other.Y, equal_nan=True)
        )


def lag_matrix(series, origins_idx, depth):
    """``M[r, k] = series[origins_idx[r] - k]``."""
    idx = np.asarray(origins_idx)[:, None] - np.arange(depth)[None, :]
    return series[idx]


def rolling_block(lags, windows, stats):
    """Window statistics over the leading columns of a lag matrix.

    Column order is window-major, statistic-minor. ``std`` uses the
    population divisor so that a one-week window has spread 0.
    """
    out = []
    for w in windows:
        win = lags[:, :w]
        lo = win.min(axis=1)
        hi = win.max(axis=1)
        flat = lo == hi
        mean = win.sum(axis=1) / w
        mean[flat] = lo[flat]
        for s in stats:
            if s == "mean":
                out.append(mean)
            elif s == "median":
                out.append(np.median(win, axis=1))
            elif s == "std":
                dev = win - mean[:, None]
                std = np.sqrt((dev * dev).sum(axis=1) / w)
                std[flat] = 0.0
                out.append(std)
            elif s == "max":
                out.append(hi)
            elif s == "min":
                out.append(lo)
    if not out:
        return np.empty((lags.shape[0], 0))
    return np.column_stack(out)


def build_features(panel, target, spec=None, include_unlabeled=False):
    """Build the design matrix for ``target``.

    Rows whose history or horizon targets would fall outside the panel are
    dropped. With ``include_unlabeled`` the origins near the panel end are
    kept and their unavailable targets are NaN (for live forecasting).
    """
    spec = spec or FeatureSpec()
    if target not in panel.countries:
        raise UnknownCountry(target)
    used = list(panel.countries) if spec.spatial else [target]
    L, H = spec.lag_depth, max(spec.horizons)
    n = panel.n_weeks
    need = L if include_unlabeled else L + H
    if n < need:
        raise InsufficientHistory(f"panel has {n} weeks, need at least {need}")
    for c in used:
        k = int(panel.missing[panel.index_of(c)].sum())
        if k:
            raise MissingDataInScope(f"{c} has {k} missing weeks")

    last = n - 1 if include_unlabeled else n - 1 - H
    idx = np.arange(L - 1, last + 1)
    x = panel.series(target)
    lags = lag_matrix(x, idx, L)
    blocks = [lags]
    if spec.include_first_diff:
        blocks.append(lags[:, :-1] - lags[:, 1:])
    blocks.append(rolling_block(lags, spec.windows, spec.stats))
    if spec.spatial:
        for c in panel.countries:
            if c != target:
                blocks.append(lag_matrix(panel.series(c), idx, L))
    X = np.column_stack(blocks)

    Y = np.full((len(idx), len(spec.horizons)), np.nan)
    for j, h in enumerate(spec.horizons):
        ok = idx + h < n
        Y[ok, j] = x[idx[ok] + h]

    origins = [panel.start.shift(int(i)) for i in idx]
    names = feature_names(spec, panel.countries, target)
    return FeatureMatrix(target, origins, tuple(names), X, Y, spec.horizons)


def split_walk_forward(fm, test_from):
    """Chronological split: origins before ``test_from`` train, the rest test."""
    is_test = np.array([o >= test_from for o in fm.origins], dtype=bool)
    if is_test.all() or not is_test.any():
        raise EmptySplit(
            f"split at {test_from} leaves an empty side "
            f"(origins {fm.origins[0] if fm.origins else None}..{fm.origins[-1] if fm.origins else None})"
        )
    return fm.take(~is_test), fm.take(is_test)


class Standardizer(TransformerMixin, BaseEstimator):
    """Column-wise z-scoring; zero-variance columns map to 0."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        const = np.all(X == X[:1], axis=0)
        scale[const] = 0.0
        self.mean_[const] = X[0, const]
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X

    def transform(self, X):
        X = self._check(X)
        safe = np.where(self.scale_ > 0, self.scale_, 1.0)
        Z = (X - self.mean_) / safe
        Z[:, self.scale_ == 0] = 0.0
        return Z

    def inverse_transform(self, Z):
        Z = self._check(Z)
        return Z * self.scale_ + self.mean_


@dataclass
class ScalingStats:
    """Feature and target scalers fitted on training rows."""

    features: Standardizer
    targets: Standardizer

    def to_dict(self):
        return {
            "x_mean": self.features.mean_.tolist(),
            "x_scale": self.features.scale_.tolist(),
            "y_mean": self.targets.mean_.tolist(),
            "y_scale": self.targets.scale_.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        def make(mean, scale):
            s = Standardizer()
            s.mean_ = np.asarray(mean, dtype=np.float64)
            s.scale_ = np.asarray(scale, dtype=np.float64)
            s.n_features_in_ = len(s.mean_)
            return s

        return cls(make(d["x_mean"], d["x_scale"]), make(d["y_mean"], d["y_scale"]))


def standardize(fm, stats=None):
    """Z-score features and targets; returns ``(scaled_fm, stats)``.

    Pass the stats fitted on training rows when scaling test rows.
    """
    if stats is None:
        stats = ScalingStats(Standardizer().fit(fm.X), Standardizer().fit(fm.Y))
    elif (
        stats.features.n_features_in_ != fm.X.shape[1]
        or stats.targets.n_features_in_ != fm.Y.shape[1]
    ):
        raise DimensionMismatch("scaling stats do not match the feature matrix")
    out = FeatureMatrix(
        fm.target_country,
        fm.origins,
        fm.feature_names,
        stats.features.transform(fm.X),
        stats.targets.transform(fm.Y),
        fm.horizons,
    )
    return out, stats


def unstandardize(fm, stats):
    return FeatureMatrix(
        fm.target_country,
        fm.origins,
        fm.feature_names,
        stats.features.inverse_transform(fm.X),
        stats.targets.inverse_transform(fm.Y),
        fm.horizons,
    )


def _fmt(v):
    return "NA" if np.isnan(v) else "%.17g" % v


def write_feature_matrix(fm) -> str:
    """Delimited export: a ``# target=`` comment line, then a header of
    ``origin``, feature names and ``y.h{H}`` columns; 17 significant digits."""
    out = io.StringIO()
    out.write("# target=" + json.dumps(fm.target_country, ensure_ascii=False) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["origin", *fm.feature_names, *fm.target_names])
    for origin, xr, yr in zip(fm.origins, fm.X, fm.Y):
        w.writerow([str(origin), *map(_fmt, xr), *map(_fmt, yr)])
    return out.getvalue()


def read_feature_matrix(text) -> FeatureMatrix:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    first, _, rest = text.partition("\n")
    if not first.startswith("# target="):
        raise CorruptPayload("feature file lacks '# target=' line")
    try:
        target = json.loads(first[len("# target="):])
        rows = list(csv.reader(io.StringIO(rest)))
        header = rows[0]
        if header[0] != "origin":
            raise CorruptPayload("first column must be 'origin'")
        ycols = [i for i, h in enumerate(header) if h.startswith("y.h")]
        horizons = tuple(int(header[i][3:]) for i in ycols)
        names = tuple(header[1 : ycols[0]] if ycols else header[1:])
        nx = len(names)
        origins, X, Y = [], [], []
        for r in rows[1:]:
            if len(r) != len(header):
                raise CorruptPayload("row width does not match header")
            origins.append(EpiWeek.parse(r[0]))
            vals = [np.nan if v == "NA" else float(v) for v in r[1:]]
            X.append(vals[:nx])
            Y.append(vals[nx:])
    except (IndexError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptPayload(str(exc)) from None
    X = np.array(X, dtype=np.float64).reshape(len(origins), nx)
    Y = np.array(Y, dtype=np.float64).reshape(len(origins), len(horizons))
    return FeatureMatrix(target, origins, names, X, Y, horizons)
