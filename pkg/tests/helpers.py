"""Shared oracles for the test suite."""

import numpy as np

from flumsop.regressors.lstm import init_params, lstm_backward, lstm_forward


def weighted_loss(params, seq, static, weights):
    pred, _ = lstm_forward(params, seq, static)
    return float(np.dot(weights, pred))


def gradient_check(layers, hidden, T, d=3, n_static=2, batch=2, seed=0, step=1e-5):
    """Max relative error between BPTT and central finite differences.

    The loss is a fixed random weighting of the batch predictions, so
    ``loss_grad`` is exactly that weight vector. Relative error is
    ``|a - n| / max(|a| + |n|, 1e-7)``; the floor only matters for
    entries whose true gradient is numerically zero.
    """
    rng = np.random.default_rng(seed)
    params = init_params(d, hidden, layers, n_static, rng)
    # nudge biases off their init so every gate is exercised
    for layer in params.layers:
        layer["b"] += rng.normal(0, 0.3, size=layer["b"].shape)
    params.head_b[:] = rng.normal()
    seq = rng.normal(size=(batch, T, d))
    static = rng.normal(size=(batch, n_static))
    weights = rng.normal(size=batch)

    _, cache = lstm_forward(params, seq, static)
    grads = lstm_backward(params, cache, weights)
    worst = 0.0
    for (name, p), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = weighted_loss(params, seq, static, weights)
            flat[k] = orig - step
            down = weighted_loss(params, seq, static, weights)
            flat[k] = orig
            num = (up - down) / (2 * step)
            err = abs(gflat[k] - num) / max(abs(gflat[k]) + abs(num), 1e-7)
            worst = max(worst, err)
    return worst


def random_gradcheck_configs(n, seed=0):
    rng = np.random.default_rng(seed)
    return [
        (int(rng.choice([1, 2, 3])), int(rng.choice([2, 4, 8])), int(rng.integers(1, 13)), int(rng.integers(0, 10**6)))
        for _ in range(n)
    ]


# acceptance verdicts, keyed by criterion number; printed by conftest
VERDICTS = {}


def verdict(number, ok, detail):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    VERDICTS[number] = line
    print(line)
    assert ok, line
