"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.

A JSON config file (``--config`` or the ``FLUMSOP_CONFIG`` environment
variable) may hold any option by its long-flag name with dashes replaced by
underscores, either at top level or under a per-command section such as
``{"evaluate": {...}}``. Config values override flags.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .epiweek import EpiWeek
from .errors import DataError, FluError, InvalidWeek, TrainingError
from .evaluation import MetricConfig, emit_forecasts, emit_report, run_comparison
from .features import STATS, FeatureSpec, build_features, read_feature_matrix, write_feature_matrix
from .msop import MODEL_KINDS, load_bundle, predict_msop, save_bundle, train_msop
from .panel import ColumnMapping, ingest_panel, load_panel, save_panel, select_complete_countries, slice_panel
from .synth import generate, load_scenario

log = logging.getLogger("flumsop")

CONFIG_ENV = "FLUMSOP_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3
REPORT_FORMATS = {"table": "table-text", "csv": "delimited", "json": "json"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def week_arg(text):
    try:
        return EpiWeek.parse(text)
    except InvalidWeek as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def str_list(text):
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_params(pairs):
    """``["lstm.hidden_size=8", ...]`` -> ``{"lstm": {"hidden_size": 8}}``."""
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        kind, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--param expects MODEL.NAME=VALUE, got {pair!r}")
        out.setdefault(kind, {})[name] = _parse_value(value)
    return out


def _add_spec_flags(p):
    p.add_argument("--lag-depth", type=int, default=52)
    p.add_argument("--windows", type=int_list, default=[1, 2, 3, 4, 9, 13, 26, 52])
    p.add_argument("--stats", type=str_list, default=list(STATS))
    p.add_argument("--no-diff", action="store_true", help="omit the first-difference block")
    p.add_argument("--no-spatial", action="store_true", help="omit other countries' lags")
    p.add_argument("--horizons", type=int_list, default=[1, 2, 3, 4])


def _spec_from(ns):
    return FeatureSpec(
        lag_depth=ns.lag_depth,
        windows=tuple(int_list(ns.windows)),
        stats=tuple(str_list(ns.stats)),
        include_first_diff=not ns.no_diff,
        spatial=not ns.no_spatial,
        horizons=tuple(int_list(ns.horizons)),
    )


def build_parser():
    parser = _Parser(prog="flumsop", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="CSV export -> panel file")
    p.add_argument("csv")
    p.add_argument("-o", "--out", required=True)
    for role, default in vars(ColumnMapping()).items():
        if role != "delimiter":
            p.add_argument(f"--{role}-col", default=default, dest=f"{role}_col")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--from-week", type=week_arg)
    p.add_argument("--to-week", type=week_arg)

    p = sub.add_parser("select", help="list countries without missing weeks")
    p.add_argument("panel")
    p.add_argument("-o", "--out", help="write the complete-countries sub-panel here")
    p.add_argument("--format", choices=["table", "json"], default="table")

    p = sub.add_parser("synth", help="scenario file -> synthetic panel file")
    p.add_argument("scenario")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--hemispheres-out", help="also write the country -> hemisphere map (JSON)")

    p = sub.add_parser("featurize", help="panel -> feature-matrix file")
    p.add_argument("panel")
    p.add_argument("--target", required=True)
    _add_spec_flags(p)
    p.add_argument("--unlabeled", action="store_true", help="keep recent origins whose targets are unknown")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("train", help="feature matrix -> per-horizon model bundle")
    p.add_argument("features")
    p.add_argument("--model", choices=MODEL_KINDS, default="lstm")
    p.add_argument("--param", action="append", default=[], metavar="MODEL.NAME=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-until", type=week_arg, help="use only origins before this week")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("predict", help="bundle + feature matrix -> forecasts")
    p.add_argument("bundle")
    p.add_argument("features")
    p.add_argument("-o", "--out")
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("evaluate", help="with/without-spatial comparison report")
    p.add_argument("panel")
    p.add_argument("--targets", type=str_list, required=True)
    p.add_argument("--models", type=str_list, default=["rf", "svr", "lstm"])
    _add_spec_flags(p)
    p.add_argument("--test-from", type=week_arg, required=True)
    p.add_argument("--seeds", type=int_list, default=[0])
    p.add_argument("--denominator", choices=["current", "previous"], default="current")
    p.add_argument("--zero-policy", choices=["skip", "epsilon"], default="skip")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--hemispheres", help="JSON map country -> northern/southern")
    p.add_argument("--param", action="append", default=[], metavar="MODEL.NAME=VALUE")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("-o", "--out")
    p.add_argument("--format", choices=sorted(REPORT_FORMATS), default="table")
    p.add_argument("--plot-data", help="tidy CSV of per-week forecasts vs actuals")
    p.add_argument("--print-config", action="store_true", help="echo the effective configuration and exit")
    return parser


def _load_config(path, command):
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {path} is not valid JSON: {exc}") from None
    section = cfg.get(command, {}) if isinstance(cfg.get(command), dict) else {}
    top = {k: v for k, v in cfg.items() if not isinstance(v, dict) or k == "param"}
    return {**top, **section}


def _apply_config(ns, parser):
    path = ns.config or os.environ.get(CONFIG_ENV)
    if not path:
        return ns
    overrides = _load_config(path, ns.command)
    for key, value in overrides.items():
        key = key.replace("-", "_")
        if key in ("command", "config"):
            continue
        if not hasattr(ns, key):
            continue  # options for other commands
        if key in ("test_from", "from_week", "to_week", "train_until") and value is not None:
            try:
                value = EpiWeek.parse(value)
            except InvalidWeek as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        if key == "param" and isinstance(value, dict):
            value = [f"{k}.{n}={json.dumps(v)}" for k, d in value.items() for n, v in d.items()]
        setattr(ns, key, value)
    return ns


def _write(path, data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _read_panel(path):
    return load_panel(Path(path).read_bytes())


def cmd_ingest(ns):
    mapping = ColumnMapping(ns.country_col, ns.year_col, ns.week_col, ns.count_col, ns.delimiter)
    with open(ns.csv, newline="", encoding="utf-8-sig") as fh:
        panel = ingest_panel(fh, mapping)
    if ns.from_week or ns.to_week:
        panel = slice_panel(panel, ns.from_week or panel.start, ns.to_week or panel.end)
    _write(ns.out, save_panel(panel))
    log.info("wrote %r", panel)


def cmd_select(ns):
    panel = _read_panel(ns.panel)
    sel = select_complete_countries(panel)
    if ns.format == "json":
        _write(None, json.dumps({"kept": sel.kept, "dropped": [list(d) for d in sel.dropped]}, ensure_ascii=False) + "\n")
    else:
        lines = [f"kept ({len(sel.kept)}):"] + [f"  {c}" for c in sel.kept]
        lines += [f"dropped ({len(sel.dropped)}):"] + [f"  {c}\t{k} missing" for c, k in sel.dropped]
        _write(None, "\n".join(lines) + "\n")
    if ns.out:
        _write(ns.out, save_panel(panel.subset(sel.kept)))


def cmd_synth(ns):
    scenario = load_scenario(Path(ns.scenario).read_text())
    _write(ns.out, save_panel(generate(scenario)))
    if ns.hemispheres_out:
        _write(ns.hemispheres_out, json.dumps(scenario.hemisphere_map(), indent=1) + "\n")


def cmd_featurize(ns):
    panel = _read_panel(ns.panel)
    fm = build_features(panel, ns.target, _spec_from(ns), include_unlabeled=ns.unlabeled)
    _write(ns.out, write_feature_matrix(fm))


def cmd_train(ns):
    fm = read_feature_matrix(Path(ns.features).read_bytes())
    fm = fm.take([i for i, y in enumerate(fm.Y) if all(v == v for v in y)])
    if ns.train_until:
        fm = fm.take([i for i, o in enumerate(fm.origins) if o < ns.train_until])
    if len(fm) == 0:
        raise DataError("no labelled training rows")
    params = parse_params(ns.param).get(ns.model, {})
    bundle = train_msop(fm, ns.model, params, seed=ns.seed)
    save_bundle(bundle, ns.out)


def cmd_predict(ns):
    bundle = load_bundle(ns.bundle)
    fm = read_feature_matrix(Path(ns.features).read_bytes())
    pred = predict_msop(bundle, fm)
    if ns.format == "json":
        rows = [
            {"origin": str(o), **{f"h{h}": float(v) for h, v in zip(bundle.horizons, row)}}
            for o, row in zip(fm.origins, pred)
        ]
        _write(ns.out, json.dumps({"target": bundle.target_country, "forecasts": rows}, indent=1) + "\n")
    else:
        lines = ["origin," + ",".join(f"h{h}" for h in bundle.horizons)]
        lines += [str(o) + "," + ",".join(repr(float(v)) for v in row) for o, row in zip(fm.origins, pred)]
        _write(ns.out, "\n".join(lines) + "\n")


def _evaluate_config(ns):
    keys = (
        "panel", "targets", "models", "lag_depth", "windows", "stats", "no_diff", "no_spatial",
        "horizons", "test_from", "seeds", "denominator", "zero_policy", "epsilon", "hemispheres",
        "param", "jobs", "out", "format", "plot_data",
    )
    out = {}
    for k in keys:
        v = getattr(ns, k)
        if isinstance(v, EpiWeek):
            v = str(v)
        elif k in ("windows", "horizons", "seeds"):
            v = int_list(v)
        elif k in ("targets", "models", "stats"):
            v = str_list(v)
        out[k] = v
    return out


def cmd_evaluate(ns):
    if ns.print_config:
        _write(None, json.dumps({"evaluate": _evaluate_config(ns)}, indent=2, ensure_ascii=False) + "\n")
        return
    models = str_list(ns.models)
    for m in models:
        if m not in MODEL_KINDS:
            raise UsageError(f"--models: unknown model kind {m!r}")
    panel = _read_panel(ns.panel)
    hemispheres = json.loads(Path(ns.hemispheres).read_text()) if ns.hemispheres else None
    report = run_comparison(
        panel,
        str_list(ns.targets),
        models,
        _spec_from(ns).replace(spatial=True),
        ns.test_from,
        MetricConfig(ns.denominator, ns.zero_policy, ns.epsilon),
        seeds=int_list(ns.seeds),
        hemispheres=hemispheres,
        model_params=parse_params(ns.param),
        jobs=ns.jobs,
    )
    _write(ns.out, emit_report(report, REPORT_FORMATS[ns.format]))
    if ns.plot_data:
        _write(ns.plot_data, emit_forecasts(report))


COMMANDS = {
    "ingest": cmd_ingest,
    "select": cmd_select,
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a command is required; see --help")
        ns = _apply_config(ns, parser)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        COMMANDS[ns.command](ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (DataError, FluError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid option values caught by the library constructors
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
