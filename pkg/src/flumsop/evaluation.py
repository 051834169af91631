"""Forecast accuracy metrics and the with/without-spatial comparison run."""

import csv
import io
import json
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import AllPointsSkipped, FluError, MissingDataInScope, ShapeMismatch
from .features import FeatureSpec, build_features, split_walk_forward
from .msop import predict_msop, train_msop
from .panel import select_complete_countries

MapeResult = namedtuple("MapeResult", "value n_evaluated skipped")

DEFAULT_HEMISPHERES = {
    "Australia": "southern",
    "Brazil": "southern",
    "China": "northern",
    "Japan": "northern",
    "UK": "northern",
    "United Kingdom": "northern",
    "United Kingdom of Great Britain and Northern Ireland": "northern",
    "USA": "northern",
    "United States of America": "northern",
}

REPORT_COLUMNS = ("country", "hemisphere", "model", "horizon", "spatial", "mape", "rmse", "n", "skipped")


@dataclass(frozen=True)
class MetricConfig:
    """``denominator``: ``current`` divides by A_t, ``previous`` by A_{t-1}.
    ``zero_policy``: ``skip`` drops points with a zero denominator,
    ``epsilon`` substitutes ``epsilon`` for it."""

    denominator: str = "current"
    zero_policy: str = "skip"
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.denominator not in ("current", "previous"):
            raise ValueError("denominator must be 'current' or 'previous'")
        if self.zero_policy not in ("skip", "epsilon"):
            raise ValueError("zero_policy must be 'skip' or 'epsilon'")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError("epsilon must be finite and positive")


def _pair(forecast, actual):
    f = np.asarray(forecast, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if f.shape != a.shape or f.size == 0:
        raise ShapeMismatch("forecast and actual must have the same non-zero length")
    return f, a


def mape(forecast, actual, cfg=None):
    """Mean of |F_t - A_t| / |D_t| over evaluable points.

    With the ``previous`` denominator the first point has no D_t and
    counts as skipped. Returns ``MapeResult(value, n_evaluated, skipped)``.
    """
    cfg = cfg or MetricConfig()
    f, a = _pair(forecast, actual)
    if cfg.denominator == "current":
        num, den = np.abs(f - a), a
        skipped = 0
    else:
        num, den = np.abs(f[1:] - a[1:]), a[:-1]
        skipped = 1
    zero = den == 0
    if cfg.zero_policy == "skip":
        num, den = num[~zero], den[~zero]
        skipped += int(zero.sum())
    else:
        den = np.where(zero, cfg.epsilon, den)
    if num.size == 0:
        raise AllPointsSkipped(f"all {f.size} points skipped")
    return MapeResult(float(np.mean(num / np.abs(den))), int(num.size), skipped)


def rmse(forecast, actual):
    f, a = _pair(forecast, actual)
    return float(np.sqrt(np.mean((f - a) ** 2)))


@dataclass(frozen=True)
class ReportRow:
    country: str
    hemisphere: str
    model: str
    horizon: int
    spatial: bool
    mape: float
    rmse: float
    n: int
    skipped: int


@dataclass
class ForecastReport:
    rows: list = field(default_factory=list)
    # tidy per-week records for plotting; not part of the serialized report
    forecasts: list = field(default_factory=list, compare=False)

    def cell(self, country, model, horizon, spatial):
        for r in self.rows:
            if (r.country, r.model, r.horizon, r.spatial) == (country, model, horizon, spatial):
                return r
        raise KeyError((country, model, horizon, spatial))


def _work_item(args):
    panel, target, kind, spatial, spec, test_from, params, seed = args
    fm = build_features(panel, target, spec.replace(spatial=spatial))
    train, test = split_walk_forward(fm, test_from)
    bundle = train_msop(train, kind, params, seed=seed, spec=spec.replace(spatial=spatial))
    return test, predict_msop(bundle, test)


def _collect(key, fn, *args):
    try:
        return fn(*args)
    except FluError as exc:
        target, kind, spatial, seed = key
        where = f"cell {target}/{kind}/{'with' if spatial else 'without'}/seed={seed}"
        exc.args = (f"{where}: {exc}",)
        raise


def run_comparison(
    panel,
    targets,
    model_kinds,
    spec=None,
    test_from=None,
    cfg=None,
    seeds=(0,),
    hemispheres=None,
    model_params=None,
    jobs=1,
):
    """Train and score every (target, model, spatial on/off) cell.

    Each cell is trained once per seed; the reported MAPE and RMSE per
    horizon are medians over seeds. ``model_params`` maps a model kind to
    its hyperparameters. Output order is fixed by the argument order, not
    by scheduling.
    """
    spec = spec or FeatureSpec()
    cfg = cfg or MetricConfig()
    hemispheres = {**DEFAULT_HEMISPHERES, **(hemispheres or {})}
    model_params = model_params or {}
    kept = set(select_complete_countries(panel.subset(targets)).kept)
    for t in targets:
        if t not in kept:
            raise MissingDataInScope(f"target {t} has missing weeks")

    keys, items = [], []
    for target in targets:
        for kind in model_kinds:
            kind_seeds = seeds[:1] if kind.startswith("naive") else seeds
            for spatial in (True, False):
                for seed in kind_seeds:
                    keys.append((target, kind, spatial, seed))
                    items.append((panel, target, kind, spatial, spec, test_from, model_params.get(kind), seed))

    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_work_item, it) for it in items]
            results = [_collect(key, fut.result) for key, fut in zip(keys, futures)]
    else:
        results = [_collect(key, _work_item, it) for key, it in zip(keys, items)]

    by_cell = {}
    for (target, kind, spatial, seed), res in zip(keys, results):
        by_cell.setdefault((target, kind, spatial), []).append(res)

    report = ForecastReport()
    for target in targets:
        for kind in model_kinds:
            for h_i, h in enumerate(spec.horizons):
                for spatial in (True, False):
                    runs = by_cell[(target, kind, spatial)]
                    test = runs[0][0]
                    actual = test.Y[:, h_i]
                    scores = [mape(pred[:, h_i], actual, cfg) for _, pred in runs]
                    errs = [rmse(pred[:, h_i], actual) for _, pred in runs]
                    report.rows.append(
                        ReportRow(
                            target,
                            hemispheres.get(target, "unknown"),
                            kind,
                            h,
                            spatial,
                            float(np.median([s.value for s in scores])),
                            float(np.median(errs)),
                            scores[0].n_evaluated,
                            scores[0].skipped,
                        )
                    )
                    med = np.median(np.stack([pred[:, h_i] for _, pred in runs]), axis=0)
                    for origin, f, a in zip(test.origins, med, actual):
                        report.forecasts.append(
                            {
                                "country": target,
                                "model": kind,
                                "horizon": h,
                                "spatial": spatial,
                                "origin": str(origin),
                                "week": str(origin.shift(h)),
                                "forecast": float(f),
                                "actual": float(a),
                            }
                        )
    return report


def _fmt_bool(b):
    return "true" if b else "false"


def emit_report(report, fmt="delimited"):
    """Serialize a report as ``delimited`` (CSV), ``json`` or ``table-text``."""
    if fmt == "delimited":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            w.writerow(
                [r.country, r.hemisphere, r.model, r.horizon, _fmt_bool(r.spatial), repr(r.mape), repr(r.rmse), r.n, r.skipped]
            )
        return out.getvalue().encode("utf-8")
    if fmt == "json":
        rows = [dict(zip(REPORT_COLUMNS, astuple_row(r))) for r in report.rows]
        return (json.dumps({"columns": list(REPORT_COLUMNS), "rows": rows}, indent=1) + "\n").encode("utf-8")
    if fmt == "table-text":
        return _table_text(report).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}")


def astuple_row(r):
    return tuple(getattr(r, f.name) for f in fields(r))


def parse_report(data, fmt="delimited"):
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    if fmt == "json":
        rows = [ReportRow(**row) for row in json.loads(data)["rows"]]
        return ForecastReport(rows)
    if fmt != "delimited":
        raise ValueError("only delimited and json reports can be parsed")
    reader = csv.reader(io.StringIO(data))
    header = tuple(next(reader))
    if header != REPORT_COLUMNS:
        raise ValueError(f"unexpected report header {header}")
    rows = []
    for rec in reader:
        c, hemi, model, h, sp, m, e, n, sk = rec
        rows.append(ReportRow(c, hemi, model, int(h), sp == "true", float(m), float(e), int(n), int(sk)))
    return ForecastReport(rows)


def _table_text(report):
    """Pivot: one line per (hemisphere, country, horizon), MAPE per model x with/without."""
    models = list(dict.fromkeys(r.model for r in report.rows))
    keys = list(dict.fromkeys((r.hemisphere, r.country, r.horizon) for r in report.rows))
    lookup = {(r.country, r.model, r.horizon, r.spatial): r.mape for r in report.rows}
    head = ["Hemisphere", "Country", "step"]
    for m in models:
        head += [f"{m} with", f"{m} without"]
    lines = [head]
    for hemi, country, h in keys:
        line = [hemi, country, str(h)]
        for m in models:
            for sp in (True, False):
                v = lookup.get((country, m, h, sp))
                line.append("-" if v is None else f"{v:.3f}")
        lines.append(line)
    widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
    text = []
    for k, row in enumerate(lines):
        text.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if k == 0:
            text.append("  ".join("-" * w for w in widths))
    return "\n".join(text) + "\n"


def emit_forecasts(report):
    """Tidy CSV of per-week forecast vs actual, one row per country/model/horizon/spatial/week."""
    cols = ("country", "model", "horizon", "spatial", "origin", "week", "forecast", "actual")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for rec in report.forecasts:
        w.writerow([_fmt_bool(rec[c]) if c == "spatial" else (repr(rec[c]) if isinstance(rec[c], float) else rec[c]) for c in cols])
    return out.getvalue().encode("utf-8")


def report_to_dicts(report):
    return [asdict(r) for r in report.rows]
