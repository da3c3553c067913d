"""Binary logistic regression trained by full-batch gradient descent."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, TrainingFault
from .lstm import sigmoid

log = logging.getLogger(__name__)


@dataclass
class LogRegParams:
    w: np.ndarray
    b: float = 0.0
    threshold: float = 0.5

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).ravel()
        self.b = float(self.b)
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise ConfigError("logistic regression parameters must be finite")

    @property
    def n_features(self) -> int:
        return self.w.size


def _check(x, params):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.n_features:
        raise ConfigError(f"got {x.shape[-1]} features, model expects {params.n_features}")
    return x


def logreg_forward(x, params: LogRegParams):
    """Probability of the positive class for one sample ``(D,)`` or many ``(N, D)``."""
    x = _check(x, params)
    p = sigmoid(x @ params.w + params.b)
    return float(p) if np.ndim(p) == 0 else p


def logreg_predict(x, params: LogRegParams):
    return np.asarray(logreg_forward(x, params)) > params.threshold


def logreg_loss_grad(x, y, w, b, l2: float = 1e-4, weights=None):
    """Mean cross-entropy plus ``l2/2 * (|w|^2 + b^2)`` and its gradient.

    ``weights`` (one per sample, default all ones) turn the mean into a
    weighted mean. The bias is decayed too, which keeps it finite on
    single-class data.
    """
    z = x @ w + b
    c = np.full(y.size, 1.0 / y.size) if weights is None else np.asarray(weights, float) / np.sum(weights)
    # log(1 + e^{-z}) for y=1, log(1 + e^{z}) for y=0, without overflow
    loss = float(c @ np.logaddexp(0.0, np.where(y > 0.5, -z, z)))
    loss += 0.5 * l2 * (float(w @ w) + b * b)
    r = (sigmoid(z) - y) * c
    return loss, x.T @ r + l2 * w, float(r.sum()) + l2 * b


def balanced_weights(y):
    """Per-sample weights giving both classes equal total weight (mean weight 1)."""
    y = np.asarray(y) > 0.5
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.ones(y.size)
    return np.where(y, y.size / (2.0 * n_pos), y.size / (2.0 * n_neg))


@dataclass(frozen=True)
class LogRegConfig:
    lr: float = 0.5
    iters: int = 3000
    l2: float = 1e-4
    seed: int = 0
    threshold: float = 0.5
    init_scale: float = 0.01
    tol: float = 1e-10
    balanced: bool = False  # equal class weights; off by default because it trades load-step specificity for recall


def _bias_only(y, l2, threshold):
    # 1-D Newton on the bias: mean(sigmoid(b) - y) + l2*b = 0
    ybar = float(np.mean(y))
    b = 0.0
    for _ in range(100):
        p = float(sigmoid(b))
        g = p - ybar + l2 * b
        h = p * (1 - p) + l2
        step = g / h
        b -= step
        if abs(step) < 1e-12:
            break
    return b


def train_logreg(x, y, config: LogRegConfig = LogRegConfig()):
    """Fit ``LogRegParams`` to features ``x (N, D)`` and 0/1 labels ``y (N,)``.

    Returns ``(params, losses)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.size or y.size == 0:
        raise ConfigError("x must be (N, D) with N matching the labels")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0 or 1")
    if np.all(y == y[0]):
        warnings.warn("single-class training labels; fitting the bias only", RuntimeWarning,
                      stacklevel=2)
        b = _bias_only(y, config.l2, config.threshold)
        return LogRegParams(np.zeros(x.shape[1]), b, config.threshold), []
    weights = balanced_weights(y) if config.balanced else None
    rng = np.random.default_rng(config.seed)
    w = rng.normal(0.0, config.init_scale, x.shape[1])
    b = 0.0
    losses = []
    prev = np.inf
    for it in range(config.iters):
        loss, gw, gb = logreg_loss_grad(x, y, w, b, config.l2, weights)
        if not np.isfinite(loss):
            raise TrainingFault("non-finite logistic loss", it)
        losses.append(loss)
        w = w - config.lr * gw
        b = b - config.lr * gb
        if abs(prev - loss) < config.tol:
            break
        prev = loss
    log.debug("logreg: %d iterations, loss %.4g", len(losses), losses[-1])
    return LogRegParams(w, b, config.threshold), losses
