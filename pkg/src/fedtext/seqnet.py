"""Small recurrent text classifier written directly against numpy.

The network is a frozen embedding lookup, one recurrent layer (RNN, GRU or
LSTM) whose final hidden state feeds a ReLU dense layer and a 3-way sigmoid
head.  Gradients are computed by hand with backpropagation through time, and
parameters are updated with Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np
from scipy.special import expit

CELL_KINDS = ("rnn", "gru", "lstm")
GATES = {"rnn": 1, "gru": 3, "lstm": 4}


class ShapeError(ValueError):
    """Raised when tensors do not match the architecture they are used with."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in gradients or parameters."""


@dataclass(frozen=True)
class ArchitectureSpec:
    cell_kind: str = "gru"
    embed_dim: int = 100
    recurrent_units: int = 400
    dense_units: int = 300
    num_classes: int = 3
    dropout_rate: float = 0.25
    max_seq_len: int = 100

    def __post_init__(self):
        kind = self.cell_kind.lower()
        if kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.cell_kind!r}; expected one of {CELL_KINDS}")
        object.__setattr__(self, "cell_kind", kind)
        for name in ("embed_dim", "recurrent_units", "dense_units", "num_classes", "max_seq_len"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate!r}")

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        g = GATES[self.cell_kind]
        E, H, D, C = self.embed_dim, self.recurrent_units, self.dense_units, self.num_classes
        return [
            ("recurrent/kernel", (E, g * H)),
            ("recurrent/recurrent_kernel", (H, g * H)),
            ("recurrent/bias", (g * H,)),
            ("dense/kernel", (H, D)),
            ("dense/bias", (D,)),
            ("output/kernel", (D, C)),
            ("output/bias", (C,)),
        ]

    def parameter_count(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layer_shapes())


@dataclass
class ModelParameters:
    """Ordered mapping of layer name to float64 tensor, tied to one architecture.

    The embedding matrix is deliberately not part of this set: it is frozen and
    never trained, aggregated or transferred.
    """

    arch: ArchitectureSpec
    layers: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.arch.layer_shapes()
        if [n for n, _ in expected] != list(self.layers):
            raise ShapeError(f"layer names {list(self.layers)} do not match {self.arch.cell_kind} layout")
        for name, shape in expected:
            if self.layers[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {self.layers[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.layers.items())

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def names(self) -> list[str]:
        return list(self.layers)

    def count(self) -> int:
        return sum(t.size for t in self.layers.values())

    def copy(self) -> ModelParameters:
        return ModelParameters(self.arch, {n: t.copy() for n, t in self.layers.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.layers.values()])

    @classmethod
    def from_flat(cls, arch: ArchitectureSpec, vector: np.ndarray) -> ModelParameters:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != arch.parameter_count():
            raise ShapeError(f"expected {arch.parameter_count()} values, got {vector.size}")
        layers, offset = {}, 0
        for name, shape in arch.layer_shapes():
            n = math.prod(shape)
            layers[name] = vector[offset:offset + n].reshape(shape).copy()
            offset += n
        return cls(arch, layers)

    @classmethod
    def zeros(cls, arch: ArchitectureSpec) -> ModelParameters:
        return cls(arch, {n: np.zeros(s) for n, s in arch.layer_shapes()})

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.layers.values())

    def same_layout(self, other: ModelParameters) -> bool:
        return [(n, t.shape) for n, t in self] == [(n, t.shape) for n, t in other]


def init_parameters(arch: ArchitectureSpec, seed: int) -> ModelParameters:
    """Glorot-uniform weights (per gate block), zero biases."""
    rng = np.random.default_rng(seed)
    g = GATES[arch.cell_kind]
    layers = {}
    for name, shape in arch.layer_shapes():
        if len(shape) == 1:
            layers[name] = np.zeros(shape)
            continue
        fan_in = shape[0]
        fan_out = shape[1] // g if name.startswith("recurrent/") else shape[1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers[name] = rng.uniform(-limit, limit, size=shape)
    return ModelParameters(arch, layers)


# ---------------------------------------------------------------------------
# cells

def _check(arr: np.ndarray, size: int, what: str):
    if arr.shape[-1] != size:
        raise ShapeError(f"{what}: expected trailing dimension {size}, got shape {arr.shape}")


def _recurrent(params: ModelParameters):
    return (params["recurrent/kernel"], params["recurrent/recurrent_kernel"], params["recurrent/bias"])


def _rnn_step(xp, h_prev, Wh):
    a = xp + h_prev @ Wh
    return np.maximum(a, 0.0), a


def _gru_step(xp, h_prev, Wh, H):
    zr = expit(xp[..., :2 * H] + h_prev @ Wh[:, :2 * H])
    z, r = zr[..., :H], zr[..., H:]
    rh = r * h_prev
    hh = np.tanh(xp[..., 2 * H:] + rh @ Wh[:, 2 * H:])
    h = h_prev + z * (hh - h_prev)
    return h, (z, r, rh, hh)


def _lstm_step(xp, h_prev, c_prev, Wh, H):
    a = xp + h_prev @ Wh
    ifo = expit(a[..., :3 * H])
    g = np.tanh(a[..., 3 * H:])
    i, f, o = ifo[..., :H], ifo[..., H:2 * H], ifo[..., 2 * H:]
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return o * tc, c, (i, f, o, g, tc)


def _cell_inputs(x, h_prev, params, kind):
    if params.arch.cell_kind != kind:
        raise ShapeError(f"parameters are for a {params.arch.cell_kind} cell, not {kind}")
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check(x, params.arch.embed_dim, "x")
    _check(h_prev, params.arch.recurrent_units, "h_prev")
    Wx, Wh, b = _recurrent(params)
    return x @ Wx + b, h_prev, Wh


def rnn_cell_step(x, h_prev, params: ModelParameters) -> np.ndarray:
    """h = relu(x Wx + h_prev Wh + b)."""
    xp, h_prev, Wh = _cell_inputs(x, h_prev, params, "rnn")
    return _rnn_step(xp, h_prev, Wh)[0]


def gru_cell_step(x, h_prev, params: ModelParameters) -> np.ndarray:
    """GRU step with gate blocks ordered (update, reset, candidate)."""
    xp, h_prev, Wh = _cell_inputs(x, h_prev, params, "gru")
    return _gru_step(xp, h_prev, Wh, params.arch.recurrent_units)[0]


def lstm_cell_step(x, h_prev, c_prev, params: ModelParameters) -> tuple[np.ndarray, np.ndarray]:
    """LSTM step with gate blocks ordered (input, forget, output, candidate)."""
    xp, h_prev, Wh = _cell_inputs(x, h_prev, params, "lstm")
    c_prev = np.asarray(c_prev, dtype=np.float64)
    _check(c_prev, params.arch.recurrent_units, "c_prev")
    h, c, _ = _lstm_step(xp, h_prev, c_prev, Wh, params.arch.recurrent_units)
    return h, c


# ---------------------------------------------------------------------------
# network

@dataclass
class ForwardCache:
    token_ids: np.ndarray
    inputs: np.ndarray                  # (T, B, E)
    hidden: list                        # h_0 .. h_T
    steps: list                         # per-step gate values
    cells: list | None                  # LSTM c_0 .. c_T
    final_hidden: np.ndarray
    dense_input: np.ndarray             # final hidden state after dropout
    mask1: np.ndarray | None
    dense_pre: np.ndarray
    dense_out: np.ndarray               # after relu and dropout
    mask2: np.ndarray | None
    logits: np.ndarray


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward(params: ModelParameters, embedding, token_ids, dropout_seed: int | None = None):
    """Run the classifier on a (batch, seq_len) id matrix.

    ``dropout_seed=None`` is evaluation mode. Any integer switches on inverted
    dropout with masks drawn from that seed.  Returns ``(scores, cache)``.
    """
    arch = params.arch
    table = getattr(embedding, "vectors", embedding)
    ids = np.atleast_2d(np.asarray(token_ids))
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"token id out of range for vocabulary of size {table.shape[0]}")
    if table.shape[1] != arch.embed_dim:
        raise ShapeError(f"embedding dimension {table.shape[1]} != arch.embed_dim {arch.embed_dim}")

    B, T = ids.shape
    H = arch.recurrent_units
    Wx, Wh, b = _recurrent(params)
    X = table[ids.T]                                    # (T, B, E)
    XP = X @ Wx + b                                     # (T, B, gH)

    h = np.zeros((B, H))
    hidden, steps = [h], []
    cells = None
    if arch.cell_kind == "rnn":
        for t in range(T):
            h, a = _rnn_step(XP[t], h, Wh)
            hidden.append(h)
            steps.append(a)
    elif arch.cell_kind == "gru":
        for t in range(T):
            h, gates = _gru_step(XP[t], h, Wh, H)
            hidden.append(h)
            steps.append(gates)
    else:
        c = np.zeros((B, H))
        cells = [c]
        for t in range(T):
            h, c, gates = _lstm_step(XP[t], h, c, Wh, H)
            hidden.append(h)
            cells.append(c)
            steps.append(gates)

    mask1 = mask2 = None
    d_in = h
    if dropout_seed is not None and arch.dropout_rate > 0:
        rng = np.random.default_rng(dropout_seed)
        mask1 = _dropout_mask(rng, h.shape, arch.dropout_rate)
        d_in = h * mask1
    dense_pre = d_in @ params["dense/kernel"] + params["dense/bias"]
    dense_out = np.maximum(dense_pre, 0.0)
    if dropout_seed is not None and arch.dropout_rate > 0:
        mask2 = _dropout_mask(rng, dense_out.shape, arch.dropout_rate)
        dense_out = dense_out * mask2
    logits = dense_out @ params["output/kernel"] + params["output/bias"]
    scores = expit(logits)
    cache = ForwardCache(ids, X, hidden, steps, cells, h, d_in, mask1, dense_pre, dense_out, mask2, logits)
    return scores, cache


def one_hot(labels, num_classes: int = 3) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def bce_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean binary cross-entropy of sigmoid(logits) against targets."""
    per = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(per.mean())


def loss(params, embedding, token_ids, targets, dropout_seed=None) -> float:
    _, cache = forward(params, embedding, token_ids, dropout_seed)
    return bce_from_logits(cache.logits, _targets(targets, params.arch.num_classes))


def _targets(targets, num_classes):
    targets = np.asarray(targets)
    if targets.ndim == 1:
        return one_hot(targets, num_classes)
    return targets.astype(np.float64)


def loss_and_gradients(params: ModelParameters, embedding, token_ids, targets, dropout_seed=None):
    """Mean per-class BCE and its gradient for every trainable tensor.

    ``targets`` may be one-hot rows or integer labels.  The embedding gets no
    gradient.
    """
    ids = np.atleast_2d(np.asarray(token_ids))
    if ids.shape[0] == 0:
        raise ValueError("empty batch")
    Y = _targets(targets, params.arch.num_classes)
    scores, cache = forward(params, embedding, ids, dropout_seed)
    value = bce_from_logits(cache.logits, Y)

    arch = params.arch
    H = arch.recurrent_units
    grads = {}
    dlogits = (scores - Y) / Y.size
    grads["output/kernel"] = cache.dense_out.T @ dlogits
    grads["output/bias"] = dlogits.sum(axis=0)
    d_out = dlogits @ params["output/kernel"].T
    if cache.mask2 is not None:
        d_out = d_out * cache.mask2
    d_pre = d_out * (cache.dense_pre > 0)
    grads["dense/kernel"] = cache.dense_input.T @ d_pre
    grads["dense/bias"] = d_pre.sum(axis=0)
    dh = d_pre @ params["dense/kernel"].T
    if cache.mask1 is not None:
        dh = dh * cache.mask1

    Wh = params["recurrent/recurrent_kernel"]
    T = len(cache.steps)
    dWh = np.zeros_like(Wh)
    dXP = np.empty((T,) + (ids.shape[0], Wh.shape[1]))
    if arch.cell_kind == "rnn":
        for t in reversed(range(T)):
            h_prev = cache.hidden[t]
            da = dh * (cache.steps[t] > 0)
            dXP[t] = da
            dWh += h_prev.T @ da
            dh = da @ Wh.T
    elif arch.cell_kind == "gru":
        Wzr, Whh = Wh[:, :2 * H], Wh[:, 2 * H:]
        for t in reversed(range(T)):
            h_prev = cache.hidden[t]
            z, r, rh, hh = cache.steps[t]
            dz = dh * (hh - h_prev)
            da_h = dh * z * (1.0 - hh * hh)
            dh_prev = dh * (1.0 - z)
            dWh[:, 2 * H:] += rh.T @ da_h
            drh = da_h @ Whh.T
            dh_prev += drh * r
            da_zr = np.concatenate([dz * z * (1.0 - z), drh * h_prev * r * (1.0 - r)], axis=1)
            dWh[:, :2 * H] += h_prev.T @ da_zr
            dh_prev += da_zr @ Wzr.T
            dXP[t, :, :2 * H] = da_zr
            dXP[t, :, 2 * H:] = da_h
            dh = dh_prev
    else:
        dc = np.zeros_like(dh)
        for t in reversed(range(T)):
            h_prev, c_prev = cache.hidden[t], cache.cells[t]
            i, f, o, g, tc = cache.steps[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                do * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ], axis=1)
            dc = dc * f
            dXP[t] = da
            dWh += h_prev.T @ da
            dh = da @ Wh.T

    E = arch.embed_dim
    flat_x = cache.inputs.reshape(-1, E)
    flat_d = dXP.reshape(-1, Wh.shape[1])
    grads["recurrent/kernel"] = flat_x.T @ flat_d
    grads["recurrent/recurrent_kernel"] = dWh
    grads["recurrent/bias"] = flat_d.sum(axis=0)
    ordered = {name: grads[name] for name in params.names}
    return value, ModelParameters(arch, ordered)


def predict(params: ModelParameters, embedding, token_ids) -> np.ndarray:
    """Class indices by argmax of the sigmoid scores; ties go to the lowest index."""
    scores, _ = forward(params, embedding, token_ids)
    return np.argmax(scores, axis=1)


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParameters, **kw) -> AdamState:
        return cls({n: np.zeros_like(t) for n, t in params},
                   {n: np.zeros_like(t) for n, t in params}, **kw)


def adam_step(params: ModelParameters, grads: Mapping | ModelParameters, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched."""
    g_items = dict(grads.layers if isinstance(grads, ModelParameters) else grads)
    if list(g_items) != params.names:
        raise ShapeError("gradient layout does not match parameters")
    for name, g in g_items.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in layer {name}")

    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_layers, m_new, v_new = {}, {}, {}
    for name, w in params:
        g = g_items[name]
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        new_layers[name] = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        m_new[name], v_new[name] = m, v
    new_state = AdamState(m_new, v_new, t, b1, b2, eps)
    return ModelParameters(params.arch, new_layers), new_state


@dataclass
class EpochResult:
    params: ModelParameters
    optimizer: AdamState
    steps: int
    mean_loss: float
    batch_losses: list[float] = field(default_factory=list)


def train_local_epoch(params: ModelParameters, embedding, token_ids, labels, *,
                      lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
                      optimizer: AdamState | None = None) -> EpochResult:
    """One pass over ``(token_ids, labels)`` in seeded random order.

    The final partial batch is kept.  ``seed`` fixes both the sample order and
    the dropout masks.  Passing the returned optimizer back in on the next call
    continues the Adam moments; ``None`` starts fresh.
    """
    ids = np.asarray(token_ids)
    labels = np.asarray(labels)
    n = ids.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty shard")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    drop_seeds = rng.integers(0, 2**63 - 1, size=math.ceil(n / batch_size))
    state = optimizer if optimizer is not None else AdamState.fresh(params)
    losses = []
    for k, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        value, grads = loss_and_gradients(params, embedding, ids[idx], labels[idx], int(drop_seeds[k]))
        params, state = adam_step(params, grads, state, lr)
        losses.append(value)
    if not params.all_finite():
        raise NonFiniteError("parameters became non-finite during training")
    weights = [min(batch_size, n - s) for s in range(0, n, batch_size)]
    return EpochResult(params, state, len(losses), float(np.average(losses, weights=weights)), losses)


def dataset_loss(params: ModelParameters, embedding, token_ids, labels, batch_size: int = 256) -> float:
    """Evaluation-mode mean loss over a whole dataset."""
    ids = np.asarray(token_ids)
    labels = np.asarray(labels)
    if ids.shape[0] == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for start in range(0, ids.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        total += loss(params, embedding, ids[sl], labels[sl]) * ids[sl].shape[0]
    return total / ids.shape[0]


def dataset_logits(params, embedding, token_ids, batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode output logits for every row, computed in batches."""
    ids = np.asarray(token_ids)
    out = [forward(params, embedding, ids[s:s + batch_size])[1].logits
           for s in range(0, ids.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.arch.num_classes))


def predict_dataset(params, embedding, token_ids, batch_size: int = 256) -> np.ndarray:
    return np.argmax(expit(dataset_logits(params, embedding, token_ids, batch_size)), axis=1)
