"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``helpers.verdict``); the lines
are repeated in the terminal summary.
"""

import time

import numpy as np
import pytest
from helpers import gradient_check, random_gradcheck_configs, verdict
from numpy.lib.stride_tricks import sliding_window_view

from flumsop.cli import main
from flumsop.epiweek import EpiWeek
from flumsop.errors import AllPointsSkipped
from flumsop.evaluation import (
    ForecastReport,
    MetricConfig,
    emit_report,
    mape,
    parse_report,
    rmse,
    run_comparison,
)
from flumsop.features import (
    DEFAULT_WINDOWS,
    STATS,
    FeatureSpec,
    build_features,
    read_feature_matrix,
    split_walk_forward,
    write_feature_matrix,
)
from flumsop.msop import load_bundle, predict_msop, save_bundle, train_msop
from flumsop.panel import CountryPanel, load_panel, save_panel
from flumsop.regressors import model_to_dict
from flumsop.synth import SynthScenario, dump_scenario, generate

SINKS = ["N4", "N5", "N6", "N7"]
UNCOUPLED = "S0"

# Eight northern countries: four seasonal sources drive four sinks through
# lead-lag couplings at lags 1-4 with strengths 0.3-0.6. S0 is southern
# (opposite phase) and receives no coupling.
SCENARIO = SynthScenario(
    n_countries=9,
    n_weeks=312,
    names=[f"N{i}" for i in range(8)] + ["S0"],
    hemispheres=["northern"] * 8 + ["southern"],
    base_level=50.0,
    amplitude=[500.0] * 4 + [50.0] * 4 + [500.0],
    couplings=[
        ("N0", "N4", 4, 0.6),
        ("N1", "N5", 4, 0.5),
        ("N2", "N6", 4, 0.4),
        ("N3", "N7", 4, 0.3),
        ("N0", "N5", 1, 0.3),
        ("N1", "N6", 2, 0.4),
        ("N2", "N7", 3, 0.5),
    ],
    timing_jitter=3.0,
    severity_jitter=0.3,
    jitter_scope="country",
    noise=0.05,
    seed=0,
)
LSTM_PARAMS = {"layers": 1, "hidden_size": 8, "epochs": 60, "learning_rate": 0.01, "batch_size": 16, "lookback": 8}
RF_PARAMS = {"n_trees": 50}
LSTM_SEEDS = list(range(10))
RF_SEEDS = [0, 1, 2]
BUDGET_SECONDS = 15 * 60


@pytest.fixture(scope="module")
def comparison():
    panel = generate(SCENARIO)
    test_from = panel.start.shift(5 * 52)  # last of six seasons held out
    targets = SINKS + [UNCOUPLED]
    t0 = time.perf_counter()
    nn = run_comparison(panel, targets, ["lstm", "naive"], FeatureSpec(), test_from,
                        seeds=LSTM_SEEDS, model_params={"lstm": LSTM_PARAMS})
    rf = run_comparison(panel, targets, ["rf"], FeatureSpec(), test_from,
                        seeds=RF_SEEDS, model_params={"rf": RF_PARAMS})
    elapsed = time.perf_counter() - t0
    report = ForecastReport(nn.rows + rf.rows)
    n_test = len(split_walk_forward(build_features(panel, SINKS[0]), test_from)[1])
    return report, elapsed, n_test


def test_criterion_1_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    for layers, hidden, T, seed in random_gradcheck_configs(20, seed=2024):
        worst = max(worst, gradient_check(layers, hidden, T, seed=seed))
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 1e-4 and elapsed < 60, f"max rel err {worst:.2e} over 20 configs, {elapsed:.1f}s")


def oracle_window_stat(series, w, stat):
    """Brute force per window: explicit slice, full sort, two-pass moments."""
    wins = sliding_window_view(series, w)  # row k covers series[k .. k+w-1]
    if stat == "median":
        s = np.sort(wins, axis=1)
        return s[:, w // 2] if w % 2 else (s[:, w // 2 - 1] + s[:, w // 2]) / 2
    if stat == "max":
        return np.array([max(r) for r in wins.tolist()])
    if stat == "min":
        return np.array([min(r) for r in wins.tolist()])
    mean = np.array([sum(r) / w for r in wins.tolist()])
    if stat == "mean":
        return mean
    return np.sqrt(np.array([sum((v - m) ** 2 for v in r) / w for r, m in zip(wins.tolist(), mean)]))


def test_criterion_2_feature_oracle():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst, exact_ok = 0.0, True
    for i in range(100):
        n = int(rng.integers(120, 301))
        # integer counts with plateaus so constant windows occur
        x = np.repeat(rng.integers(0, 400, size=n), rng.integers(1, 4, size=n))[:n].astype(float)
        if len(x) < n:
            x = np.concatenate([x, np.zeros(n - len(x))])
        panel = CountryPanel(["A"], EpiWeek(2010, 1), x[None, :])
        fm = build_features(panel, "A", FeatureSpec(spatial=False))
        pos = {name: j for j, name in enumerate(fm.feature_names)}
        for w in DEFAULT_WINDOWS:
            for stat in STATS:
                # origin t = 51 + r; window ends at t, so starts at t - w + 1
                want = oracle_window_stat(x, w, stat)[51 - w + 1 : 51 - w + 1 + len(fm)]
                got = fm.X[:, pos[f"t.w{w}.{stat}"]]
                if stat in ("median", "max", "min"):
                    exact_ok &= bool(np.array_equal(got, want))
                else:
                    rel = np.abs(got - want) / np.maximum(np.abs(want), 1.0)
                    worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = exact_ok and worst <= 1e-12 and elapsed < 30
    verdict(2, ok, f"order stats exact={exact_ok}, max rel err {worst:.1e}, {elapsed:.1f}s")


def test_criterion_3_spatial_feature_count():
    panel = CountryPanel([f"C{i:02d}" for i in range(23)], EpiWeek(2010, 1), np.ones((23, 60)))
    fm = build_features(panel, "C00", FeatureSpec(horizons=(1,)))
    n_spatial = sum(name.startswith("s.") for name in fm.feature_names)
    verdict(3, n_spatial == 1144 == 22 * 52, f"{n_spatial} spatial columns for N=23")


def test_criterion_4_horizon_independence():
    panel = generate(SynthScenario(n_countries=3, n_weeks=200, seed=3))
    fm = build_features(panel, panel.countries[1])
    configs = {
        "lstm": {"layers": 1, "hidden_size": 4, "epochs": 2, "lookback": 6},
        "rf": {"n_trees": 5},
        "svr": {"epochs": 10},
    }
    ok, checked = True, []
    for kind, params in configs.items():
        base = train_msop(fm, kind, params, seed=11)
        moved = fm.take(np.arange(len(fm)))
        j = moved.horizons.index(2)
        moved.Y[:, j] = moved.Y[:, j][::-1] + 100.0
        other = train_msop(moved, kind, params, seed=11)
        pa, pb = predict_msop(base, fm), predict_msop(other, fm)
        for h in (1, 3, 4):
            same_params = model_to_dict(base.horizon_models[h][0]) == model_to_dict(other.horizon_models[h][0])
            same_pred = np.array_equal(pa[:, fm.horizons.index(h)], pb[:, fm.horizons.index(h)])
            ok &= same_params and same_pred
        changed = model_to_dict(base.horizon_models[2][0]) != model_to_dict(other.horizon_models[2][0])
        ok &= changed
        checked.append(kind)
    verdict(4, ok, f"h1/h3/h4 bit-identical for {','.join(checked)} after perturbing h2")


def test_criterion_5_metric_units():
    checks = [
        mape([110, 90], [100, 100]).value == pytest.approx(0.10, abs=1e-15),
        mape([3, 4], [3, 4]).value == 0.0,
        rmse([3, -4], [0, 0]) == pytest.approx(np.sqrt(12.5), abs=1e-15),
        rmse([1, 2], [1, 2]) == 0.0,
    ]
    prev = mape([110, 90, 60], [100, 100, 50], MetricConfig(denominator="previous"))
    checks += [prev.skipped == 1, prev.n_evaluated == 2, prev.value == pytest.approx(0.10)]
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.integers(0, 3, size=20).astype(float)
        f = rng.normal(1.0, 1.0, size=20)
        for cfg in (MetricConfig(), MetricConfig(denominator="previous"), MetricConfig(zero_policy="epsilon")):
            try:
                r = mape(f, a, cfg)
                checks.append(r.n_evaluated + r.skipped == 20)
            except AllPointsSkipped:
                checks.append(bool(np.all(a == 0)))
    verdict(5, all(checks), f"{sum(checks)}/{len(checks)} metric checks")


def test_criterion_6_spatial_benefit(comparison):
    report, elapsed, _ = comparison
    lines, ok = [], elapsed < BUDGET_SECONDS
    for c in SINKS:
        for h in (2, 3, 4):
            on = report.cell(c, "lstm", h, True).mape
            off = report.cell(c, "lstm", h, False).mape
            ok &= on < off
            lines.append(f"{c} h{h} {on:.3f}<{off:.3f}" if on < off else f"{c} h{h} {on:.3f}!<{off:.3f}")
    print("\n".join(lines))
    verdict(6, ok, f"LSTM, {len(LSTM_SEEDS)} seeds, {len(lines)} sink cells, run {elapsed:.0f}s; " + "; ".join(lines))


def test_criterion_7_uncoupled_country(comparison):
    report, _, n_test = comparison
    on = report.cell(UNCOUPLED, "lstm", 1, True)
    off = report.cell(UNCOUPLED, "lstm", 1, False)
    bookkeeping = all(r.n + r.skipped == n_test for r in (on, off))
    harm = on.mape >= off.mape
    sinks_ok = all(
        report.cell(c, "lstm", h, True).mape < report.cell(c, "lstm", h, False).mape for c in SINKS for h in (2, 3, 4)
    )
    direction = "harm observed" if harm else "harm not observed (informational)"
    verdict(7, bookkeeping and sinks_ok, f"{UNCOUPLED} h1 on {on.mape:.3f} vs off {off.mape:.3f}: {direction}")


def test_criterion_8_horizon_degradation(comparison):
    report, _, _ = comparison
    ok, parts = True, []
    for model in ("lstm", "rf", "naive"):
        med = [float(np.median([r.mape for r in report.rows if r.model == model and r.horizon == h])) for h in (1, 2, 3, 4)]
        mono = all(b >= a * 0.95 for a, b in zip(med, med[1:]))
        ok &= mono
        parts.append(f"{model} " + "/".join(f"{m:.3f}" for m in med))
    verdict(8, ok, "; ".join(parts))


def test_criterion_9_baseline_dominance(comparison):
    report, _, _ = comparison
    ok, parts = True, []
    for c in SINKS:
        naive = report.cell(c, "naive", 4, True).mape
        for model in ("lstm", "rf"):
            for spatial in (True, False):
                m = report.cell(c, model, 4, spatial).mape
                ok &= m < naive
        parts.append(
            f"{c} naive {naive:.3f} lstm {report.cell(c, 'lstm', 4, True).mape:.3f}"
            f"/{report.cell(c, 'lstm', 4, False).mape:.3f} rf {report.cell(c, 'rf', 4, True).mape:.3f}"
            f"/{report.cell(c, 'rf', 4, False).mape:.3f}"
        )
    verdict(9, ok, "h4 MAPE with/without; " + "; ".join(parts))


def test_criterion_10_determinism_and_roundtrips(tmp_path):
    small = SynthScenario(n_countries=3, n_weeks=140, couplings=[(0, 1, 2, 0.5)], seed=8)
    (tmp_path / "sc.json").write_text(dump_scenario(small))
    assert main(["synth", str(tmp_path / "sc.json"), "-o", str(tmp_path / "p.flu")]) == 0
    args = ["evaluate", str(tmp_path / "p.flu"), "--targets", "C01", "--models", "rf,svr,lstm,naive",
            "--test-from", "2012W10", "--seeds", "0,1", "--lag-depth", "13", "--windows", "1,4,13",
            "--param", "rf.n_trees=5", "--param", "svr.epochs=5", "--param", "lstm.epochs=2",
            "--param", "lstm.layers=1", "--param", "lstm.hidden_size=4", "--format", "csv"]
    outs = []
    for k in range(2):
        assert main(args + ["-o", str(tmp_path / f"r{k}.csv")]) == 0
        outs.append((tmp_path / f"r{k}.csv").read_bytes())
    checks = {"report bytes": outs[0] == outs[1]}

    panel = load_panel((tmp_path / "p.flu").read_bytes())
    checks["panel"] = load_panel(save_panel(panel)) == panel
    fm = build_features(panel, "C01", FeatureSpec(lag_depth=13, windows=(1, 4, 13)), include_unlabeled=True)
    checks["feature matrix"] = read_feature_matrix(write_feature_matrix(fm)) == fm
    labelled = fm.take(~np.isnan(fm.Y).any(axis=1))
    bundle = train_msop(labelled, "lstm", {"layers": 1, "hidden_size": 4, "epochs": 2}, seed=3)
    save_bundle(bundle, tmp_path / "b")
    back = load_bundle(tmp_path / "b")
    checks["bundle"] = np.array_equal(predict_msop(back, fm), predict_msop(bundle, fm)) and all(
        model_to_dict(back.horizon_models[h][0]) == model_to_dict(bundle.horizon_models[h][0]) for h in bundle.horizons
    )
    report = parse_report(outs[0])
    checks["report"] = emit_report(report, "delimited") == outs[0] and parse_report(
        emit_report(report, "json"), "json"
    ) == report
    failed = [k for k, v in checks.items() if not v]
    verdict(10, not failed, "all identical" if not failed else f"failed: {', '.join(failed)}")
