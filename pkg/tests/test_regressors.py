import math

import numpy as np
import pytest
from helpers import gradient_check

from flumsop.errors import (
    CorruptPayload,
    InsufficientData,
    MissingFeatureColumn,
    NonFiniteInput,
    ShapeMismatch,
)
from flumsop.regressors import (
    ForestRegressor,
    LinearSVR,
    LstmRegressor,
    NaiveRegressor,
    init_params,
    load_model,
    lstm_backward,
    lstm_forward,
    make_regressor,
    save_model,
)
from flumsop.regressors.forest import best_split, grow_tree, predict_tree
from flumsop.regressors.lstm import LstmParams, clip_global_norm, sequence_layout
from flumsop.regressors.svr import svr_objective, tube_subgradient


def sig(z):
    return 1.0 / (1.0 + math.exp(-z))


# --- LSTM forward -----------------------------------------------------------

def test_zero_network_predicts_head_bias():
    params = init_params(3, 4, 2, static_size=2, rng=0).zeros_like()
    params.head_b[:] = 1.75
    pred, _ = lstm_forward(params, np.zeros((5, 3)), np.zeros(2))
    assert pred == 1.75


def test_single_cell_by_hand():
    # hidden 1, input 1, gate order i, f, o, g
    W = np.array([[0.5, -0.3, 0.8, 1.2]])
    U = np.array([[0.1, 0.2, -0.4, 0.7]])
    b = np.array([0.05, 1.0, -0.1, 0.2])
    params = LstmParams([{"W": W, "U": U, "b": b}], np.array([1.5]), np.array([-0.25]))
    xs = [0.9, -1.3]
    h = c = 0.0
    for x in xs:
        z = [W[0, k] * x + U[0, k] * h + b[k] for k in range(4)]
        i, f, o, g = sig(z[0]), sig(z[1]), sig(z[2]), math.tanh(z[3])
        c = f * c + i * g
        h = o * math.tanh(c)
    want = 1.5 * h - 0.25
    got, _ = lstm_forward(params, np.array(xs)[:, None])
    assert got == pytest.approx(want, rel=1e-14, abs=1e-15)


def test_cell_state_decays_by_forget_factor():
    H = 3
    rng = np.random.default_rng(1)
    W = np.zeros((2, 4 * H))
    W[:, 3 * H :] = rng.normal(size=(2, H))  # only the candidate reads the input
    b = np.zeros(4 * H)
    b[:H] = 0.4
    b[H : 2 * H] = [0.3, 1.0, 2.0]
    params = LstmParams([{"W": W, "U": np.zeros((H, 4 * H)), "b": b}], np.ones(H), np.zeros(1))
    prefix = rng.normal(size=(3, 2))
    seq = np.vstack([prefix, np.zeros((6, 2))])
    _, cache = lstm_forward(params, seq)
    c = cache.layers[0].c[0]  # (T+1, H)
    f = 1.0 / (1.0 + np.exp(-b[H : 2 * H]))
    c0 = c[3]
    for k in range(7):
        assert np.allclose(c[3 + k], f**k * c0, rtol=1e-13, atol=0)


def test_forward_batch_matches_single():
    params = init_params(2, 4, 2, 1, rng=3)
    rng = np.random.default_rng(3)
    seq, static = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 1))
    batch, _ = lstm_forward(params, seq, static)
    for r in range(4):
        single, _ = lstm_forward(params, seq[r], static[r])
        assert single == pytest.approx(batch[r], rel=1e-13)


def test_forward_shape_errors():
    params = init_params(2, 4, 1, 1, rng=0)
    with pytest.raises(ShapeMismatch):
        lstm_forward(params, np.zeros((3, 5)), np.zeros(1))
    with pytest.raises(ShapeMismatch):
        lstm_forward(params, np.zeros((3, 2)), np.zeros(3))
    with pytest.raises(NonFiniteInput):
        lstm_forward(params, np.full((3, 2), np.nan), np.zeros(1))


def test_init_forget_bias_and_range():
    params = init_params(5, 4, 2, 3, rng=0)
    for k, layer in enumerate(params.layers):
        assert np.all(params.gate(k, "b", "f") == 1.0)
        assert np.all(params.gate(k, "b", "i") == 0.0)
        fan = 5 if k == 0 else 4
        assert np.abs(layer["W"]).max() <= 1 / math.sqrt(fan)
    assert params.head_w.shape == (7,)


# --- LSTM backward ------------------------------------------------------------

@pytest.mark.parametrize("layers,hidden,T", [(1, 4, 5), (2, 8, 12), (3, 2, 3), (2, 4, 1)])
def test_bptt_matches_finite_differences(layers, hidden, T):
    assert gradient_check(layers, hidden, T, seed=layers * 100 + T) < 1e-4


def test_zero_loss_grad_gives_zero_grads():
    params = init_params(3, 4, 2, 2, rng=0)
    rng = np.random.default_rng(0)
    _, cache = lstm_forward(params, rng.normal(size=(3, 7, 3)), rng.normal(size=(3, 2)))
    grads = lstm_backward(params, cache, np.zeros(3))
    assert all(np.all(g == 0) for g in grads.arrays())


def test_head_bias_grad_is_loss_grad():
    params = init_params(2, 3, 1, 0, rng=2)
    _, cache = lstm_forward(params, np.ones((4, 2)))
    grads = lstm_backward(params, cache, 0.37)
    assert grads.head_b[0] == 0.37
    _, cache = lstm_forward(params, np.ones((3, 4, 2)))
    grads = lstm_backward(params, cache, np.array([0.1, -0.2, 0.5]))
    assert grads.head_b[0] == pytest.approx(0.4)


def test_clip_global_norm():
    params = init_params(2, 3, 1, 0, rng=2)
    g = params.copy()
    norm = clip_global_norm(g, 0.5)
    assert norm > 0.5
    after = math.sqrt(sum(float((a * a).sum()) for a in g.arrays()))
    assert after == pytest.approx(0.5)


# --- sequence layout -------------------------------------------------------------

def test_windowed_layout():
    names = ["t.lag.0", "t.lag.1", "t.lag.2", "t.diff.0", "t.diff.1", "t.w2.mean", "s.B.lag.0", "s.B.lag.1", "s.B.lag.2"]
    seq, static = sequence_layout(names, "windowed")
    assert seq.shape == (3, 3)
    # oldest step first: lag 2, no diff at lag 2, spatial lag 2
    assert seq[0].tolist() == [2, -1, 8]
    assert seq[2].tolist() == [0, 3, 6]
    assert static.tolist() == [5]
    flat_seq, flat_static = sequence_layout(names, "flat")
    assert flat_seq.shape == (1, 9) and flat_static.size == 0


# --- LSTM training ------------------------------------------------------------------

def test_fits_constant_target():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(48, 8))
    c = 2.5
    model = LstmRegressor().fit(X, np.full(48, c))
    assert np.all(np.abs(model.predict(X) - c) <= 0.05 * (1 + abs(c)))


def test_linear_target_loss_decreases():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 8))
    y = X @ rng.normal(size=8) * 0.3
    model = LstmRegressor(layers=1, hidden_size=8, epochs=30, learning_rate=0.01, random_state=4).fit(X, y)
    curve = np.array(model.loss_curve_)
    assert np.all(np.diff(curve[3:]) <= 0)
    assert curve[-1] < 0.2 * curve[0]


def test_lstm_determinism_and_roundtrip():
    rng = np.random.default_rng(2)
    names = [f"t.lag.{k}" for k in range(6)] + [f"t.diff.{k}" for k in range(5)] + ["t.w4.mean"]
    X = rng.normal(size=(40, len(names)))
    y = rng.normal(size=40)
    kw = dict(layers=2, hidden_size=4, epochs=5, batch_size=8, random_state=11)
    a = LstmRegressor(**kw).fit(X, y, feature_names=names)
    b = LstmRegressor(**kw).fit(X, y, feature_names=names)
    for pa, pb in zip(a.params_.arrays(), b.params_.arrays()):
        assert np.array_equal(pa, pb)
    assert a.seq_index_.shape == (6, 2)
    c = load_model(save_model(a))
    assert np.array_equal(c.predict(X), a.predict(X))
    assert c.get_params() == a.get_params()


def test_lstm_too_few_rows():
    with pytest.raises(InsufficientData):
        LstmRegressor(batch_size=16).fit(np.zeros((5, 2)), np.zeros(5))


# --- forest ------------------------------------------------------------------------

def test_forest_constant_target():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4))
    model = ForestRegressor(n_trees=10).fit(X, np.full(30, 4.2))
    assert np.all(model.predict(rng.normal(size=(7, 4))) == 4.2)


def test_step_function_threshold_in_gap():
    rng = np.random.default_rng(5)
    neg = -rng.uniform(0.5, 2.0, size=20)
    pos = rng.uniform(0.3, 2.0, size=20)
    x = np.concatenate([neg, pos])
    y = (x > 0).astype(float)
    tree = grow_tree(x[:, None], y, rng, max_depth=1)
    assert tree["feature"][0] == 0
    # brute force: every threshold strictly between the classes separates perfectly
    assert neg.max() < tree["threshold"][0] < pos.min()
    assert np.array_equal(predict_tree(tree, x[:, None]), y)


def test_best_split_tie_breaks_to_lowest_feature():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    X = np.column_stack([x, x, x])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    j, thr, sse = best_split(X, y, np.arange(3), 1)
    assert (j, thr, sse) == (0, 1.5, 0.0)


def test_deep_forest_beats_mean_on_training():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 5))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 + rng.normal(0, 0.1, 80)
    model = ForestRegressor(n_trees=5, bootstrap=False, min_leaf=1).fit(X, y)
    mse = np.mean((model.predict(X) - y) ** 2)
    assert mse <= np.mean((y - y.mean()) ** 2)


@pytest.mark.parametrize("seed", range(10))
def test_training_error_monotone_in_depth(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    y = X[:, 0] * 2 - X[:, 2] + rng.normal(0, 0.3, 60)
    errs = []
    for depth in (1, 2, 3, 5, 8, None):
        tree = grow_tree(X, y, np.random.default_rng(0), max_depth=depth)
        errs.append(np.mean((predict_tree(tree, X) - y) ** 2))
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] == 0.0


def test_forest_determinism_and_roundtrip():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(50, 6)), rng.normal(size=50)
    a = ForestRegressor(n_trees=8, random_state=3).fit(X, y)
    b = ForestRegressor(n_trees=8, random_state=3).fit(X, y)
    assert np.array_equal(a.predict(X), b.predict(X))
    c = load_model(save_model(a))
    assert np.array_equal(c.predict(X), a.predict(X))
    other = ForestRegressor(n_trees=8, random_state=4).fit(X, y)
    assert not np.array_equal(other.predict(X), a.predict(X))


# --- SVR ----------------------------------------------------------------------------

def test_tube_subgradient():
    r = np.array([-0.5, -0.1, 0.0, 0.05, 0.1, 0.3])
    assert tube_subgradient(r, 0.1).tolist() == [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0]


def test_svr_targets_inside_tube_keep_zero_weights():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = rng.uniform(-0.09, 0.09, size=40)
    model = LinearSVR(epsilon=0.1).fit(X, y)
    assert np.all(model.coef_ == 0.0) and model.intercept_ == 0.0


def test_svr_recovers_slope():
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, size=100)
    model = LinearSVR(epsilon=0.0).fit(x[:, None], 3 * x)
    assert abs(model.coef_[0] - 3.0) <= 0.1


def test_svr_objective_trend_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(150, 10))
    y = X @ rng.normal(size=10) + rng.normal(0, 0.2, 150)
    model = LinearSVR(epsilon=0.1, epochs=200).fit(X, y)
    blocks = np.array(model.objective_curve_).reshape(-1, 20).mean(axis=1)
    # near the optimum a subgradient trace jitters; allow 1e-4 relative
    assert np.all(np.diff(blocks) <= 1e-4 * blocks[1:])
    assert blocks[-1] < 0.2 * blocks[0]
    assert model.objective_curve_[-1] == pytest.approx(
        svr_objective(model.coef_, model.intercept_, X, y, 0.1, 1.0)
    )


def test_svr_roundtrip():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(30, 4)), rng.normal(size=30)
    a = LinearSVR(epochs=10).fit(X, y)
    b = load_model(save_model(a))
    assert np.array_equal(a.predict(X), b.predict(X))


# --- naive --------------------------------------------------------------------------

NAMES = [f"t.lag.{k}" for k in range(52)] + ["t.w4.mean"]


def test_naive_copies_lag_columns():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, len(NAMES)))
    last = NaiveRegressor("last_value").fit(X, feature_names=NAMES)
    seas = NaiveRegressor("seasonal_52").fit(X, feature_names=NAMES)
    assert np.array_equal(last.predict(X), X[:, 0])
    assert np.array_equal(seas.predict(X), X[:, 51])


def test_seasonal_naive_exact_on_periodic_series():
    from flumsop.epiweek import EpiWeek
    from flumsop.features import FeatureSpec, build_features
    from flumsop.panel import CountryPanel

    period = np.random.default_rng(1).integers(0, 100, size=52).astype(float)
    panel = CountryPanel(["A"], EpiWeek(2011, 1), np.tile(period, 4)[None, :])
    fm = build_features(panel, "A", FeatureSpec(spatial=False, horizons=(1,)))
    model = NaiveRegressor("seasonal_52").fit(fm.X, feature_names=fm.feature_names)
    assert np.array_equal(model.predict(fm.X), fm.Y[:, 0])


def test_naive_needs_lag_column():
    with pytest.raises(MissingFeatureColumn):
        NaiveRegressor("seasonal_52").fit(np.zeros((3, 2)), feature_names=["t.lag.0", "t.lag.1"])
    assert make_regressor("naive_seasonal").kind == "seasonal_52"
    with pytest.raises(ValueError):
        make_regressor("gbm")


def test_predict_schema_and_payload_errors():
    model = NaiveRegressor().fit(np.zeros((3, 2)), feature_names=["t.lag.0", "x"])
    with pytest.raises(ShapeMismatch):
        model.predict(np.zeros((2, 3)))
    with pytest.raises(CorruptPayload):
        load_model("{not json")
    with pytest.raises(CorruptPayload):
        load_model('{"format": "other"}')
