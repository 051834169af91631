"""Stacked LSTM with a dense head, trained by BPTT and momentum SGD.

Gates are stacked column-wise in the order input, forget, output,
candidate, so each layer carries ``W`` (d_in x 4H), ``U`` (H x 4H) and
``b`` (4H)::

    i, f, o = sigmoid(.), g = tanh(.)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

The prediction is ``[h_T, static] @ head_w + head_b`` where ``h_T`` is the
top layer's last hidden state.
"""

import re
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ..errors import DivergedTraining, InsufficientData, NonFiniteInput, ShapeMismatch
from ._base import validate_fit_data, validate_predict_data

GATES = ("i", "f", "o", "g")


def sigmoid(z):
    # tanh form is overflow-free for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmParams:
    layers: list  # [{"W": ..., "U": ..., "b": ...}, ...]
    head_w: np.ndarray
    head_b: np.ndarray  # shape (1,)

    @property
    def hidden_size(self):
        return self.layers[0]["U"].shape[0]

    @property
    def input_size(self):
        return self.layers[0]["W"].shape[0]

    @property
    def static_size(self):
        return self.head_w.shape[0] - self.hidden_size

    def named_arrays(self):
        out = []
        for k, layer in enumerate(self.layers):
            for name in ("W", "U", "b"):
                out.append((f"layer{k}.{name}", layer[name]))
        out.append(("head.w", self.head_w))
        out.append(("head.b", self.head_b))
        return out

    def arrays(self):
        return [a for _, a in self.named_arrays()]

    def gate(self, layer, name, gate):
        """View of one gate's block, e.g. ``gate(0, "W", "f")``."""
        H = self.hidden_size
        j = GATES.index(gate)
        a = self.layers[layer][name]
        return a[..., j * H : (j + 1) * H]

    def copy(self):
        return LstmParams(
            [{k: v.copy() for k, v in layer.items()} for layer in self.layers],
            self.head_w.copy(),
            self.head_b.copy(),
        )

    def zeros_like(self):
        return LstmParams(
            [{k: np.zeros_like(v) for k, v in layer.items()} for layer in self.layers],
            np.zeros_like(self.head_w),
            np.zeros_like(self.head_b),
        )

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def to_dict(self):
        return {"layers": self.layers, "head_w": self.head_w, "head_b": self.head_b}

    @classmethod
    def from_dict(cls, d):
        layers = [{k: np.asarray(v, dtype=np.float64) for k, v in layer.items()} for layer in d["layers"]]
        return cls(layers, np.asarray(d["head_w"], dtype=np.float64), np.asarray(d["head_b"], dtype=np.float64))


def init_params(input_size, hidden_size, layers, static_size=0, rng=None):
    """Uniform(-r, r) weights with r = 1/sqrt(fan_in); forget bias 1, other biases 0."""
    rng = np.random.default_rng(rng)
    H = hidden_size
    out = []
    d_in = input_size
    for _ in range(layers):
        rw, ru = 1.0 / np.sqrt(d_in), 1.0 / np.sqrt(H)
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        out.append(
            {
                "W": rng.uniform(-rw, rw, size=(d_in, 4 * H)),
                "U": rng.uniform(-ru, ru, size=(H, 4 * H)),
                "b": b,
            }
        )
        d_in = H
    rh = 1.0 / np.sqrt(H + static_size)
    head_w = rng.uniform(-rh, rh, size=H + static_size)
    return LstmParams(out, head_w, np.zeros(1))


@dataclass
class _LayerCache:
    inputs: np.ndarray  # (B, T, d_in)
    gates: np.ndarray  # (B, T, 4H) post-activation i, f, o, g
    c: np.ndarray  # (B, T+1, H), c[:, 0] is the initial state
    h: np.ndarray  # (B, T+1, H)
    tanh_c: np.ndarray  # (B, T, H)


@dataclass
class LstmCache:
    layers: list = field(default_factory=list)
    head_input: np.ndarray = None


def lstm_forward(params, sequence, static=None):
    """Run the network on ``sequence`` of shape (T, d) or (B, T, d).

    Returns ``(prediction, cache)``; prediction is a scalar for a single
    sequence and shape (B,) for a batch.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[2] != params.input_size:
        raise ShapeMismatch(f"sequence shape {np.shape(sequence)} does not match input size {params.input_size}")
    B, T, _ = seq.shape
    n_static = params.static_size
    if static is None:
        static = np.zeros((B, 0))
    static = np.asarray(static, dtype=np.float64).reshape(B, -1)
    if static.shape[1] != n_static:
        raise ShapeMismatch(f"expected {n_static} static inputs, got {static.shape[1]}")
    if not (np.all(np.isfinite(seq)) and np.all(np.isfinite(static))):
        raise NonFiniteInput("LSTM inputs must be finite")

    H = params.hidden_size
    cache = LstmCache()
    inp = seq
    for layer in params.layers:
        proj = inp @ layer["W"] + layer["b"]
        U = layer["U"]
        gates = np.empty((B, T, 4 * H))
        c = np.zeros((B, T + 1, H))
        h = np.zeros((B, T + 1, H))
        tanh_c = np.empty((B, T, H))
        for t in range(T):
            z = proj[:, t] + h[:, t] @ U
            a = gates[:, t]
            a[:, : 3 * H] = sigmoid(z[:, : 3 * H])
            a[:, 3 * H :] = np.tanh(z[:, 3 * H :])
            c[:, t + 1] = a[:, H : 2 * H] * c[:, t] + a[:, :H] * a[:, 3 * H :]
            tanh_c[:, t] = np.tanh(c[:, t + 1])
            h[:, t + 1] = a[:, 2 * H : 3 * H] * tanh_c[:, t]
        cache.layers.append(_LayerCache(inp, gates, c, h, tanh_c))
        inp = h[:, 1:]
    head_in = np.concatenate([inp[:, -1], static], axis=1)
    cache.head_input = head_in
    pred = head_in @ params.head_w + params.head_b[0]
    return (pred[0] if single else pred), cache


def lstm_backward(params, cache, loss_grad):
    """Exact BPTT. ``loss_grad`` is dLoss/dprediction (scalar or (B,)).

    Returns an :class:`LstmParams` holding the gradients.
    """
    g_out = np.atleast_1d(np.asarray(loss_grad, dtype=np.float64))
    B = cache.head_input.shape[0]
    if g_out.shape != (B,):
        raise ShapeMismatch(f"loss_grad shape {g_out.shape} does not match batch {B}")
    H = params.hidden_size
    grads = params.zeros_like()
    grads.head_w[:] = cache.head_input.T @ g_out
    grads.head_b[0] = g_out.sum()

    T = cache.layers[-1].gates.shape[1]
    d_hseq = np.zeros((B, T, H))
    d_hseq[:, -1] = np.outer(g_out, params.head_w[:H])

    for k in range(len(params.layers) - 1, -1, -1):
        lc = cache.layers[k]
        layer = params.layers[k]
        U_T = layer["U"].T
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            a = lc.gates[:, t]
            i, f, o, g = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
            tc = lc.tanh_c[:, t]
            dh = d_hseq[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            d = dz[:, t]
            d[:, :H] = dc * g * i * (1.0 - i)
            d[:, H : 2 * H] = dc * lc.c[:, t] * f * (1.0 - f)
            d[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
            d[:, 3 * H :] = dc * i * (1.0 - g * g)
            dc_next = dc * f
            dh_next = d @ U_T
        gl = grads.layers[k]
        d_in = lc.inputs.shape[2]
        flat_dz = dz.reshape(-1, 4 * H)
        gl["W"][:] = lc.inputs.reshape(-1, d_in).T @ flat_dz
        gl["U"][:] = lc.h[:, :-1].reshape(-1, H).T @ flat_dz
        gl["b"][:] = flat_dz.sum(axis=0)
        if k > 0:
            d_hseq = dz @ layer["W"].T
    return grads


_LAG_RE = re.compile(r"^t\.lag\.(\d+)$")
_DIFF_RE = re.compile(r"^t\.diff\.(\d+)$")
_SPATIAL_RE = re.compile(r"^s\.(.+)\.lag\.(\d+)$")


def sequence_layout(names, mode="windowed", lookback=None):
    """Map named feature columns onto (time step, input slot) positions.

    Returns ``(seq_index, static_index)``: ``seq_index`` is a (T, d) int
    array of column indices (-1 = zero input), oldest step first;
    ``static_index`` lists the columns fed straight to the dense head.
    In ``windowed`` mode step ``s`` carries lag ``T-1-s`` of the target,
    its first difference and every spatial country's same lag. ``flat``
    mode, or a schema without ``t.lag.*`` columns, yields a single step.
    ``lookback`` keeps only the most recent steps; lag columns older than
    that are not read at all (the rolling statistics still summarise them).
    """
    names = list(names)
    lag, diff, spatial = {}, {}, {}
    countries = []
    for j, n in enumerate(names):
        m = _LAG_RE.match(n)
        if m:
            lag[int(m.group(1))] = j
            continue
        m = _DIFF_RE.match(n)
        if m:
            diff[int(m.group(1))] = j
            continue
        m = _SPATIAL_RE.match(n)
        if m:
            c = m.group(1)
            if c not in spatial:
                spatial[c] = {}
                countries.append(c)
            spatial[c][int(m.group(2))] = j
    if mode == "flat" or not lag:
        return np.arange(len(names))[None, :], np.array([], dtype=int)
    if mode != "windowed":
        raise ValueError(f"unknown sequence_mode {mode!r}")
    T = max(lag) + 1
    if lookback is not None:
        if lookback < 1:
            raise ValueError("lookback must be >= 1")
        T = min(T, int(lookback))
    slots = [lag] + ([diff] if diff else []) + [spatial[c] for c in countries]
    seq = np.full((T, len(slots)), -1, dtype=int)
    for s in range(T):
        k = T - 1 - s
        for q, slot in enumerate(slots):
            seq[s, q] = slot.get(k, -1)
    sequential = set(lag.values()) | set(diff.values())
    for c in countries:
        sequential |= set(spatial[c].values())
    static = np.array([j for j in range(len(names)) if j not in sequential], dtype=int)
    return seq, static


def gather_sequences(X, seq_index, static_index):
    X = np.asarray(X, dtype=np.float64)
    padded = np.concatenate([X, np.zeros((X.shape[0], 1))], axis=1)
    seq = padded[:, seq_index]  # -1 hits the zero column
    static = X[:, static_index]
    return seq, static


def clip_global_norm(grads, max_norm):
    arrays = grads.arrays()
    norm = np.sqrt(sum(float(np.sum(a * a)) for a in arrays))
    if norm > max_norm:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm


class LstmRegressor(RegressorMixin, BaseEstimator):
    """LSTM + dense head regressor on named lag features.

    Training is minibatch SGD with momentum on mean squared error, with
    per-update global-norm clipping and a step decay of the learning rate
    (multiplied by ``lr_decay`` every ``decay_every`` epochs).

    ``sequence_mode="windowed"`` unrolls the lag columns as a weekly
    sequence and feeds the remaining columns (rolling statistics) to the
    head; ``lookback`` truncates the unrolled sequence to the most recent
    weeks. ``"flat"`` treats the whole row as a single time step.
    """

    _kind = "lstm"

    def __init__(
        self,
        layers=3,
        hidden_size=32,
        epochs=200,
        learning_rate=0.005,
        batch_size=16,
        gradient_clip=5.0,
        momentum=0.9,
        lr_decay=0.5,
        decay_every=50,
        sequence_mode="windowed",
        lookback=None,
        random_state=0,
    ):
        self.layers = layers
        self.hidden_size = hidden_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.gradient_clip = gradient_clip
        self.momentum = momentum
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.sequence_mode = sequence_mode
        self.lookback = lookback
        self.random_state = random_state

    def _check_config(self):
        if self.layers < 1 or self.hidden_size < 1:
            raise ValueError("layers and hidden_size must be >= 1")
        if self.learning_rate <= 0 or self.gradient_clip <= 0:
            raise ValueError("learning_rate and gradient_clip must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def fit(self, X, y, feature_names=None):
        self._check_config()
        X, y = validate_fit_data(self, X, y, feature_names)
        n = X.shape[0]
        if n < self.batch_size:
            raise InsufficientData(f"{n} rows is fewer than batch_size={self.batch_size}")
        self.seq_index_, self.static_index_ = sequence_layout(
            self.feature_names_in_, self.sequence_mode, self.lookback
        )
        seq, static = gather_sequences(X, self.seq_index_, self.static_index_)

        rng = np.random.default_rng(self.random_state)
        params = init_params(seq.shape[2], self.hidden_size, self.layers, static.shape[1], rng)
        velocity = [np.zeros_like(a) for a in params.arrays()]
        curve = []
        for epoch in range(self.epochs):
            lr = self.learning_rate * self.lr_decay ** (epoch // max(self.decay_every, 1))
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                rows = order[start : start + self.batch_size]
                pred, cache = lstm_forward(params, seq[rows], static[rows])
                resid = pred - y[rows]
                total += float(resid @ resid)
                grads = lstm_backward(params, cache, 2.0 * resid / len(rows))
                clip_global_norm(grads, self.gradient_clip)
                for p, v, g in zip(params.arrays(), velocity, grads.arrays()):
                    v *= self.momentum
                    v -= lr * g
                    p += v
            loss = total / n
            if not np.isfinite(loss) or not params.all_finite():
                raise DivergedTraining(f"non-finite loss at epoch {epoch}")
            curve.append(loss)
        self.params_ = params
        self.loss_curve_ = curve
        return self

    def predict(self, X):
        X = validate_predict_data(self, X)
        seq, static = gather_sequences(X, self.seq_index_, self.static_index_)
        pred, _ = lstm_forward(self.params_, seq, static)
        return pred

    def _get_state(self):
        return {
            "n_features_in_": self.n_features_in_,
            "feature_names_in_": list(self.feature_names_in_),
            "seq_index_": self.seq_index_,
            "static_index_": self.static_index_,
            "params_": self.params_.to_dict(),
            "loss_curve_": list(self.loss_curve_),
        }

    def _set_state(self, s):
        self.n_features_in_ = s["n_features_in_"]
        self.feature_names_in_ = np.array(s["feature_names_in_"], dtype=object)
        self.seq_index_ = np.asarray(s["seq_index_"], dtype=int)
        self.static_index_ = np.asarray(s["static_index_"], dtype=int)
        self.params_ = LstmParams.from_dict(s["params_"])
        self.loss_curve_ = list(s["loss_curve_"])
