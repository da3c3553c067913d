"""Stacked LSTM in numpy: forward pass, exact BPTT gradients and Adam training.

Gate weights act on the concatenation ``[h_{t-1}, x_t]``. Each layer stores
its four gate matrices stacked row-wise in the order forget, input, output,
candidate; ``w_f`` etc. are views into that block.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TrainingFault

log = logging.getLogger(__name__)


def sigmoid(x):
    """Logistic function written through tanh, so it never overflows."""
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(x, dtype=float))


@dataclass
class LstmLayer:
    w: np.ndarray  # (4H, H + D)
    b: np.ndarray  # (4H,)

    @property
    def hidden(self) -> int:
        return self.b.size // 4

    @property
    def input_size(self) -> int:
        return self.w.shape[1] - self.hidden

    def _gate(self, arr, k):
        h = self.hidden
        return arr[k * h:(k + 1) * h]

    w_f = property(lambda s: s._gate(s.w, 0))
    w_i = property(lambda s: s._gate(s.w, 1))
    w_o = property(lambda s: s._gate(s.w, 2))
    w_g = property(lambda s: s._gate(s.w, 3))
    b_f = property(lambda s: s._gate(s.b, 0))
    b_i = property(lambda s: s._gate(s.b, 1))
    b_o = property(lambda s: s._gate(s.b, 2))
    b_g = property(lambda s: s._gate(s.b, 3))


@dataclass
class LstmParams:
    layers: list
    w_y: np.ndarray  # (O, H_top)
    b_y: np.ndarray  # (O,)

    def __post_init__(self):
        d = None
        for n, layer in enumerate(self.layers):
            h = layer.hidden
            if layer.w.shape != (4 * h, layer.w.shape[1]) or layer.b.shape != (4 * h,):
                raise ConfigError(f"layer {n}: inconsistent gate shapes")
            if d is not None and layer.input_size != d:
                raise ConfigError(f"layer {n}: expects input {layer.input_size}, gets {d}")
            d = h
        if self.w_y.shape != (self.b_y.size, d):
            raise ConfigError("output projection does not match top hidden size")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.b_y.size

    @property
    def hidden_sizes(self) -> list:
        return [layer.hidden for layer in self.layers]

    def arrays(self) -> list:
        """Every trainable array, in a fixed order (shared with gradients)."""
        out = []
        for layer in self.layers:
            out += [layer.w, layer.b]
        return out + [self.w_y, self.b_y]

    def copy(self) -> "LstmParams":
        return LstmParams([LstmLayer(l.w.copy(), l.b.copy()) for l in self.layers],
                          self.w_y.copy(), self.b_y.copy())

    @classmethod
    def zeros(cls, input_size, hidden, output_size, n_layers=1) -> "LstmParams":
        layers, d = [], input_size
        for _ in range(n_layers):
            layers.append(LstmLayer(np.zeros((4 * hidden, hidden + d)), np.zeros(4 * hidden)))
            d = hidden
        return cls(layers, np.zeros((output_size, hidden)), np.zeros(output_size))

    @classmethod
    def init(cls, input_size, hidden, output_size, n_layers=2, seed=0,
             forget_bias=1.0, chrono: float | None = None) -> "LstmParams":
        """Uniform ``+-1/sqrt(H)`` weights.

        With ``chrono = T`` the forget bias of each unit is ``log u`` with
        ``u ~ U(1, T - 1)`` and the input bias its negative, so memory time
        constants start spread up to ``T`` samples (chrono initialization).
        """
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(hidden)
        p = cls.zeros(input_size, hidden, output_size, n_layers)
        for layer in p.layers:
            layer.w[:] = rng.uniform(-scale, scale, layer.w.shape)
            layer.b[:] = 0.0
            if chrono is None:
                layer.b[:hidden] = forget_bias
            else:
                if chrono <= 2:
                    raise ConfigError("chrono horizon must exceed 2 samples")
                bf = np.log(rng.uniform(1.0, chrono - 1.0, hidden))
                layer.b[:hidden] = bf
                layer.b[hidden:2 * hidden] = -bf
        p.w_y[:] = rng.uniform(-scale, scale, p.w_y.shape)
        return p


@dataclass
class LstmState:
    h: list
    c: list

    @classmethod
    def zeros(cls, params: LstmParams, batch: int | None = None) -> "LstmState":
        shape = (lambda n: (n,)) if batch is None else (lambda n: (batch, n))
        return cls([np.zeros(shape(n)) for n in params.hidden_sizes],
                   [np.zeros(shape(n)) for n in params.hidden_sizes])

    def copy(self) -> "LstmState":
        return LstmState([h.copy() for h in self.h], [c.copy() for c in self.c])


def _cell(x, h, c, layer: LstmLayer):
    z = np.concatenate([h, x], axis=-1)
    a = z @ layer.w.T + layer.b
    n = layer.hidden
    f = sigmoid(a[..., :n])
    i = sigmoid(a[..., n:2 * n])
    o = sigmoid(a[..., 2 * n:3 * n])
    g = np.tanh(a[..., 3 * n:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return z, f, i, o, g, c_new, h_new


def lstm_cell_forward(x_t, state: LstmState, params: LstmParams, layer: int = 0):
    """One cell update of a single layer; returns ``(LstmState, h_t)``.

    ``state`` holds every layer's ``(h, c)``; only ``layer`` is advanced.
    """
    lay = params.layers[layer]
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape[-1] != lay.input_size:
        raise ConfigError(f"input has {x_t.shape[-1]} features, layer expects {lay.input_size}")
    *_, c_new, h_new = _cell(x_t, state.h[layer], state.c[layer], lay)
    new = state.copy()
    new.h[layer], new.c[layer] = h_new, c_new
    return new, h_new


def lstm_step(x_t, state: LstmState, params: LstmParams):
    """Advance every layer by one sample and project the top hidden state.

    Works on a single vector ``(D,)`` or a batch ``(B, D)``. ``state`` is
    updated in place and also returned.
    """
    inp = x_t
    for n, layer in enumerate(params.layers):
        *_, c_new, h_new = _cell(inp, state.h[n], state.c[n], layer)
        state.h[n], state.c[n] = h_new, c_new
        inp = h_new
    return state, inp @ params.w_y.T + params.b_y


def _rollout(x, params: LstmParams, keep: bool):
    """Forward pass over ``(B, T, D)``; optionally keeps activations for BPTT.

    Input projections ``x_t W_x`` are computed for the whole sequence in one
    product; only the recurrent part runs inside the time loop.
    """
    bsz, steps, _ = x.shape
    caches = []
    inp = np.ascontiguousarray(x.transpose(1, 0, 2))  # time-major inside the loops
    for layer in params.layers:
        n = layer.hidden
        w_h = layer.w[:, :n]
        ax = inp @ layer.w[:, n:].T + layer.b  # (T, B, 4n)
        scale = np.ones(4 * n)
        scale[:3 * n] = 0.5
        h = np.zeros((bsz, n))
        c = np.zeros((bsz, n))
        hs = np.empty((steps, bsz, n))
        if keep:
            acts = np.empty((steps, bsz, 4 * n))
            cs = np.empty((steps, bsz, n))
        for t in range(steps):
            act = np.tanh((ax[t] + h @ w_h.T) * scale)
            act[:, :3 * n] = 0.5 + 0.5 * act[:, :3 * n]  # f, i, o through sigmoid; g through tanh
            c = act[:, :n] * c + act[:, n:2 * n] * act[:, 3 * n:]
            h = act[:, 2 * n:3 * n] * np.tanh(c)
            hs[t] = h
            if keep:
                acts[t] = act
                cs[t] = c
        caches.append((inp, hs, acts, cs) if keep else (inp, hs))
        inp = hs
    return (inp @ params.w_y.T + params.b_y).transpose(1, 0, 2), caches


def lstm_forward(sequence, params: LstmParams, return_cache=False):
    """Roll the network over ``(T, D)`` or ``(B, T, D)`` from a zero state.

    Output ``t`` is the prediction for the target at ``t + 1`` in the
    caller's data layout; this function just maps inputs to outputs.
    """
    x = np.asarray(sequence, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0:
        raise ConfigError("sequence must be non-empty with shape (T, D) or (B, T, D)")
    if x.shape[2] != params.input_size:
        raise ConfigError(f"sequence has {x.shape[2]} features, network expects {params.input_size}")
    y, caches = _rollout(x, params, return_cache)
    out = y[0] if single else y
    if return_cache:
        return out, caches
    return out


def mse(pred, target, mask=None) -> float:
    err = (np.asarray(pred) - np.asarray(target)) ** 2
    if mask is None:
        return float(err.mean())
    m = np.broadcast_to(np.asarray(mask, bool)[..., None], err.shape)
    return float(err[m].mean())


def bptt_gradients(x, y, params: LstmParams, mask=None):
    """Mean-squared-error loss and its exact gradient by backprop through time.

    ``x``: ``(B, T, D)``; ``y``: ``(B, T, O)``; ``mask``: optional ``(B, T)``
    marking which steps count toward the loss. Returns ``(loss, grads)`` with
    ``grads`` aligned to :meth:`LstmParams.arrays`.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pred, caches = lstm_forward(x, params, return_cache=True)
    weight = np.ones(pred.shape[:2]) if mask is None else np.asarray(mask, dtype=float)
    n_terms = weight.sum() * pred.shape[2]
    if n_terms == 0:
        raise ConfigError("mask leaves no loss-bearing steps")
    resid = pred - y
    loss = float((weight[..., None] * resid ** 2).sum() / n_terms)
    dy = 2.0 * weight[..., None] * resid / n_terms  # (B, T, O)

    dy = np.ascontiguousarray(dy.transpose(1, 0, 2))  # (T, B, O)
    top_h = caches[-1][1]
    g_wy = dy.reshape(-1, dy.shape[2]).T @ top_h.reshape(-1, top_h.shape[2])
    g_by = dy.sum(axis=(0, 1))
    dh_seq = dy @ params.w_y  # (T, B, H_top)

    layer_grads = []
    for li in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[li]
        n = layer.hidden
        inp, hs, acts, cs = caches[li]
        w_h = layer.w[:, :n]
        steps, bsz = dh_seq.shape[:2]
        da_seq = np.empty((steps, bsz, 4 * n))
        dh_next = np.zeros((bsz, n))
        dc_next = np.zeros((bsz, n))
        zeros = np.zeros((bsz, n))
        for t in range(steps - 1, -1, -1):
            act = acts[t]
            f, i, o, g = act[:, :n], act[:, n:2 * n], act[:, 2 * n:3 * n], act[:, 3 * n:]
            c_prev = cs[t - 1] if t else zeros
            tc = np.tanh(cs[t])
            dh = dh_seq[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da = da_seq[t]
            da[:, :n] = dc * c_prev
            da[:, n:2 * n] = dc * g
            da[:, 2 * n:3 * n] = dh * tc
            da[:, 3 * n:] = dc * i
            # local derivatives: sigmoid' = s(1-s), tanh' = 1-g^2
            act_d = act * (1.0 - act)
            act_d[:, 3 * n:] = 1.0 - g * g
            da *= act_d
            dh_next = da @ w_h
            dc_next = dc * f
        h_prev = np.concatenate([np.zeros((1, bsz, n)), hs[:-1]], axis=0)
        da_flat = da_seq.reshape(-1, 4 * n)
        g_w = np.concatenate([da_flat.T @ h_prev.reshape(-1, n),
                              da_flat.T @ inp.reshape(-1, inp.shape[2])], axis=1)
        g_b = da_seq.sum(axis=(0, 1))
        layer_grads.append((g_w, g_b))
        dh_seq = da_seq @ layer.w[:, n:]
    grads = []
    for g_w, g_b in reversed(layer_grads):
        grads += [g_w, g_b]
    return loss, grads + [g_wy, g_by]


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, arrays, grads):
        if not self.m:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainConfig:
    max_epochs: int = 600
    lr: float = 2e-3
    seq_len: int = 500
    batch_size: int | None = 8  # sequences per step; None: full batch
    fractions: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    patience: int = 100
    hidden: int = 16
    n_layers: int = 2
    burn_in: int = 100
    chrono: float | None = 200.0  # forget-gate horizon in samples; None: constant forget bias 1
    lr_decay: float = 0.995  # step size multiplied by this after every epoch

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) < 0:
            raise ConfigError(f"split fractions must be >= 0 and sum to 1, got {self.fractions}")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")
        if not (self.lr > 0 and 0 < self.lr_decay <= 1):
            raise ConfigError("lr must be > 0 and lr_decay in (0, 1]")


@dataclass
class SequenceSet:
    """Batch of aligned input/target sequences plus an optional loss mask."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = None

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx) -> "SequenceSet":
        return SequenceSet(self.x[idx], self.y[idx], None if self.mask is None else self.mask[idx])


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.inf


def evaluate(params: LstmParams, data: SequenceSet) -> float:
    return mse(lstm_forward(data.x, params), data.y, data.mask)


def train_lstm(train: SequenceSet, val: SequenceSet, config: TrainConfig,
               params: LstmParams | None = None, callback=None):
    """Adam on BPTT gradients with early stopping on validation MSE.

    Returns ``(best_params, history)``; ``best_params`` are the weights from
    the epoch with the lowest validation error.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = LstmParams.init(train.x.shape[2], config.hidden, train.y.shape[2],
                                 config.n_layers, seed=config.seed, chrono=config.chrono)
    params = params.copy()
    opt = Adam(lr=config.lr)
    hist = TrainHistory()
    best = params.copy()
    stale = 0
    n = len(train)
    bs = n if not config.batch_size else min(config.batch_size, n)
    for epoch in range(config.max_epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        losses = []
        for start in range(0, n, bs):
            batch = train.take(order[start:start + bs])
            with np.errstate(invalid="ignore", over="ignore"):  # reported just below
                loss, grads = bptt_gradients(batch.x, batch.y, params, batch.mask)
            if not np.isfinite(loss):
                raise TrainingFault("non-finite training loss", epoch)
            opt.step(params.arrays(), grads)
            losses.append(loss * len(batch))
        train_loss = sum(losses) / n
        val_loss = evaluate(params, val) if len(val) else train_loss
        if not np.isfinite(val_loss):
            raise TrainingFault("non-finite validation loss", epoch)
        hist.epochs.append(epoch)
        hist.train_mse.append(train_loss)
        hist.val_mse.append(val_loss)
        if val_loss < hist.best_val:
            hist.best_val, hist.best_epoch = val_loss, epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
        opt.lr *= config.lr_decay
        if callback is not None:
            callback(epoch, train_loss, val_loss)
        if stale >= config.patience:
            log.info("early stop at epoch %d (best %d, val %.3e)", epoch, hist.best_epoch, hist.best_val)
            break
    return best, hist
