"""Independent reference implementations used as test oracles.

Everything here is written element by element with plain Python floats so it
shares no code path with the vectorised library.
"""

from __future__ import annotations

import math

import numpy as np


def sigmoid(a: float) -> float:
    return 1.0 / (1.0 + math.exp(-a))


def _affine(x, h, Wx, Wh, b, col):
    s = b[col]
    for i, xi in enumerate(x):
        s += xi * Wx[i][col]
    for i, hi in enumerate(h):
        s += hi * Wh[i][col]
    return s


def ref_rnn_step(x, h, Wx, Wh, b):
    H = len(h)
    return [max(0.0, _affine(x, h, Wx, Wh, b, j)) for j in range(H)]


def ref_gru_step(x, h, Wx, Wh, b):
    H = len(h)
    z = [sigmoid(_affine(x, h, Wx, Wh, b, j)) for j in range(H)]
    r = [sigmoid(_affine(x, h, Wx, Wh, b, H + j)) for j in range(H)]
    rh = [r[i] * h[i] for i in range(H)]
    cand = [math.tanh(_affine(x, rh, Wx, Wh, b, 2 * H + j)) for j in range(H)]
    return [(1.0 - z[j]) * h[j] + z[j] * cand[j] for j in range(H)]


def ref_lstm_step(x, h, c, Wx, Wh, b):
    H = len(h)
    i = [sigmoid(_affine(x, h, Wx, Wh, b, j)) for j in range(H)]
    f = [sigmoid(_affine(x, h, Wx, Wh, b, H + j)) for j in range(H)]
    o = [sigmoid(_affine(x, h, Wx, Wh, b, 2 * H + j)) for j in range(H)]
    g = [math.tanh(_affine(x, h, Wx, Wh, b, 3 * H + j)) for j in range(H)]
    c_new = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
    return [o[j] * math.tanh(c_new[j]) for j in range(H)], c_new


def ref_scores(layers: dict, table, ids, kind: str):
    """Eval-mode sigmoid scores for every row of ``ids``."""
    L = {k: np.asarray(v).tolist() for k, v in layers.items()}
    Wx, Wh, b = L["recurrent/kernel"], L["recurrent/recurrent_kernel"], L["recurrent/bias"]
    H = len(Wh)
    out = []
    for row in np.asarray(ids).tolist():
        h, c = [0.0] * H, [0.0] * H
        for tok in row:
            x = list(map(float, table[tok]))
            if kind == "rnn":
                h = ref_rnn_step(x, h, Wx, Wh, b)
            elif kind == "gru":
                h = ref_gru_step(x, h, Wx, Wh, b)
            else:
                h, c = ref_lstm_step(x, h, c, Wx, Wh, b)
        dense = [max(0.0, L["dense/bias"][j] + sum(h[i] * L["dense/kernel"][i][j] for i in range(H)))
                 for j in range(len(L["dense/bias"]))]
        logits = [L["output/bias"][k] + sum(dense[j] * L["output/kernel"][j][k] for j in range(len(dense)))
                  for k in range(len(L["output/bias"]))]
        out.append([sigmoid(v) for v in logits])
    return np.array(out)


def ref_bce(scores, targets) -> float:
    total, n = 0.0, 0
    for srow, trow in zip(np.asarray(scores).tolist(), np.asarray(targets).tolist()):
        for s, y in zip(srow, trow):
            total -= y * math.log(s) + (1 - y) * math.log(1 - s)
            n += 1
    return total / n


def central_differences(f, layers: dict, eps: float = 1e-4) -> dict:
    """Numerical gradient of scalar ``f(layers)`` with respect to every entry."""
    grads = {}
    for name, w in layers.items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            plus = f(layers)
            w[idx] = old - eps
            minus = f(layers)
            w[idx] = old
            g[idx] = (plus - minus) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-6) -> float:
    worst = 0.0
    for name in numeric:
        a, n = np.asarray(analytic[name]), numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def flat_weighted_mean(vectors, sizes) -> np.ndarray:
    """Elementwise exact-sum weighted mean of flat vectors."""
    total = math.fsum(sizes)
    n = len(vectors[0])
    return np.array([math.fsum(s * v[i] for v, s in zip(vectors, sizes)) / total for i in range(n)])


def confusion_by_counting(labels, preds, k: int = 3):
    cm = [[0] * k for _ in range(k)]
    for y, p in zip(labels, preds):
        cm[y][p] += 1
    return cm
