"""Per-converter FDI detection and mitigation.

Every converter watches ``2 + degree`` channels laid out as
``[current sensor, voltage sensor, inbound link 0, inbound link 1, ...]``.
State is held as ``(k, n_channels)`` arrays so all detectors step together,
but no converter ever reads another converter's row.

Per channel and sample:

* ``S_r``: logistic-regression probability above threshold for ``M``
  consecutive samples;
* ``S_l``: ``|measured - estimate| > eps`` for ``M`` consecutive samples;
* ``S_t = S_r & S_l``; a rising edge of ``S_t`` latches substitution, which
  is released after ``H`` samples in which neither raw test fires.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import CH_CURRENT, CH_VOLTAGE, N_SENSOR_CHANNELS
from .comms import NOTIFICATION, CommBus
from .errors import ConfigError
from .ml.data import FeatureStats
from .ml.logreg import LogRegParams, logreg_forward
from .ml.lstm import LstmParams, LstmState, lstm_step
from .ml import serialize

log = logging.getLogger(__name__)

N_FEATURES = 6
MEDIAN_SPAN = 9  # samples in the spike-robust inductor residual
IND_SPAN = 4  # derivative baseline of the inductor residual; must stay below MEDIAN_SPAN / 2
KIND_CURRENT, KIND_VOLTAGE, KIND_COMM = "current", "voltage", "comm"
KINDS = (KIND_CURRENT, KIND_VOLTAGE, KIND_COMM)


@dataclass(frozen=True)
class DefenseConfig:
    window: int = 50  # W
    debounce: int = 10  # M
    hold: int = 500  # H
    eps_mult: float = 3.0
    lstm_warmup: int = 150
    comm_ewma: float = 1.0 / 250.0
    trend_ewma: float = 1.0 / 2500.0
    notify: bool = True

    def __post_init__(self):
        if self.window < 2 or self.debounce < 1 or self.hold < 1:
            raise ConfigError("window >= 2, debounce >= 1 and hold >= 1 required")
        if not self.eps_mult > 0:
            raise ConfigError("eps_mult must be > 0")
        if not (0 < self.comm_ewma <= 1 and 0 < self.trend_ewma <= 1):
            raise ConfigError("comm_ewma and trend_ewma must be in (0, 1]")


@dataclass
class FlagVector:
    """Flags of one converter: ``[s_c, s_v, s_com...]``."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).ravel()
        if self.bits.size < N_SENSOR_CHANNELS + 1:
            raise ConfigError("a flag vector needs both sensor bits and at least one link bit")

    @property
    def s_c(self) -> bool:
        return bool(self.bits[CH_CURRENT])

    @property
    def s_v(self) -> bool:
        return bool(self.bits[CH_VOLTAGE])

    @property
    def s_com(self) -> np.ndarray:
        return self.bits[N_SENSOR_CHANNELS:]

    def __len__(self):
        return self.bits.size


def fuse(s_r, s_l):
    """Elementwise AND of regression and residual flags."""
    a = s_r.bits if isinstance(s_r, FlagVector) else np.asarray(s_r, dtype=bool)
    b = s_l.bits if isinstance(s_l, FlagVector) else np.asarray(s_l, dtype=bool)
    if a.shape != b.shape:
        raise ConfigError(f"flag shapes differ: {a.shape} vs {b.shape}")
    out = a & b
    return FlagVector(out) if isinstance(s_r, FlagVector) else out


def debounce(count, raw):
    """Consecutive-exceedance counter: resets to 0 on any clean sample."""
    return np.where(raw, count + 1, 0)


def lstm_flags(measured, predicted, eps, count, m: int):
    """Residual test ``|measured - predicted| > eps`` debounced over ``m`` samples.

    Returns ``(count, flags, raw)``.
    """
    raw = np.abs(np.asarray(measured, dtype=float) - np.asarray(predicted, dtype=float)) > eps
    count = debounce(count, raw)
    return count, count >= m, raw


# --- features ---------------------------------------------------------------

@dataclass
class FeatureContext:
    """Per-sample inputs every converter has locally, besides its raw channels."""

    v_bus: np.ndarray  # (k,) locally sensed bus voltage
    duty_prev: np.ndarray  # (k,) duty applied over the last interval
    i_f: np.ndarray  # (k,) own filtered current


@dataclass
class FeatureState:
    """Sliding windows behind :func:`extract_features`."""

    values: np.ndarray  # (k, n_ch, W) raw channel values, oldest first
    kcl: np.ndarray  # (k, W) per-sample capacitor-law residual
    ind: np.ndarray  # (k, W) per-sample inductor-law residual
    drive: np.ndarray  # (k, W) per-sample inductor voltage d v_in - v (trapezoid)
    v_bus_prev: np.ndarray
    comm_ewma: np.ndarray  # (k, degree)
    trend: np.ndarray  # (k, n_ch) slow average of each channel's local reference signal
    filled: int = 0

    @classmethod
    def empty(cls, k: int, degree: int, window: int) -> "FeatureState":
        n_ch = N_SENSOR_CHANNELS + degree
        return cls(np.zeros((k, n_ch, window)), np.zeros((k, window)), np.zeros((k, window)), np.zeros((k, window)),
                   np.zeros(k), np.zeros((k, degree)), np.zeros((k, n_ch)))

    @property
    def window(self) -> int:
        return self.values.shape[2]

    @property
    def warm(self) -> bool:
        return self.filled >= self.window

    def copy(self) -> "FeatureState":
        return FeatureState(self.values.copy(), self.kcl.copy(), self.ind.copy(), self.drive.copy(),
                            self.v_bus_prev.copy(), self.comm_ewma.copy(), self.trend.copy(), self.filled)


@dataclass(frozen=True)
class PlantConstants:
    """What each converter's detector knows about its own hardware."""

    r_line: np.ndarray
    l_buck: np.ndarray
    c_buck: np.ndarray
    v_in: np.ndarray
    t_s: float


def _push(buf, x):
    buf[..., :-1] = buf[..., 1:]
    buf[..., -1] = x


def extract_features(state: FeatureState, raw: np.ndarray, ctx: FeatureContext,
                     pc: PlantConstants, ewma_alpha: float = 1.0 / 250.0,
                     trend_alpha: float = 1.0 / 2500.0):
    """Advance the windows with this sample's raw channel values.

    ``raw`` is ``(k, n_ch)``. Returns ``(state, features (k, n_ch, 6), warm)``
    where ``warm`` is False until ``W`` samples have been seen; callers treat
    a cold window as normal.

    Sensor channels use the local hardware relations: the capacitor law
    ``C dv/dt = i_l - (v - v_bus)/r`` (residual ``kcl``) and the inductor law
    ``L di/dt = d v_in - v`` (residual ``ind``, derivative taken over
    ``IND_SPAN`` samples), both trapezoid-discretized. A current bias ``b``
    shows as ``kcl = b`` with ``ind`` quiet apart from a short derivative
    spike; a voltage bias shows as ``kcl = -b/r`` and
    ``ind = -b``. The short median ``ind_m`` ignores the spike, so the pair
    separates the two sensors linearly from the first attacked samples on.
    The window terms ``kcl_W`` and ``ind_W`` are medians over ``W`` for the
    same reason. The current channel scores ``kcl - ind/r``, which is ``b``
    under a current bias and zero under a voltage bias.

    The last feature is the distance from a slow moving average: of the
    channel itself for sensors, of the receiver's own filtered current for
    links. A load step moves every converter's current, so link gaps that
    come with local activity are ordinary sharing transients, while a
    corrupted link drifts away from a quiet receiver.

    current: ``|kcl|, |kcl_m - ind_m/r|, |kcl_W - ind_W/r|, |di|, |i - mean_W i|, |i - trend i|``
    voltage: ``|ind_m|, r |kcl|, |ind_W|, |dv|, |v - mean_W v|, |v - trend v|``
    link:    ``|c - i_f|, |dc|, |c - mean_W c|, |ewma(c - i_f)|, |c - other links|, |i_f - trend i_f|``
    """
    st = state.copy()
    raw = np.asarray(raw, dtype=float)
    prev = st.values[:, :, -1].copy()
    first = st.filled == 0
    if first:
        prev = raw.copy()
        st.v_bus_prev = ctx.v_bus.copy()
    i, v = raw[:, CH_CURRENT], raw[:, CH_VOLTAGE]
    i0, v0 = prev[:, CH_CURRENT], prev[:, CH_VOLTAGE]
    r = pc.r_line
    kcl = (0.5 * (i + i0) - 0.5 * ((v - ctx.v_bus) + (v0 - st.v_bus_prev)) / r
           - pc.c_buck * (v - v0) / pc.t_s)
    drive = ctx.duty_prev * pc.v_in - 0.5 * (v + v0)
    if first:
        kcl[:] = 0.0
        drive[:] = 0.0
    _push(st.values, raw)
    _push(st.kcl, kcl)
    _push(st.drive, drive)
    st.v_bus_prev = np.array(ctx.v_bus, dtype=float)
    st.filled = min(st.filled + 1, st.window)
    n = st.filled
    # the derivative over a few samples keeps sensor noise from dominating L di/dt
    q = min(IND_SPAN, n - 1, st.window - 1)
    if q > 0:
        ind = st.drive[:, -q:].mean(axis=1) - pc.l_buck * (i - st.values[:, CH_CURRENT, -q - 1]) / (q * pc.t_s)
    else:
        ind = np.zeros_like(i)
    _push(st.ind, ind)
    win = st.values[:, :, -n:]
    mean_w = win.mean(axis=2)
    kcl_w = np.median(st.kcl[:, -n:], axis=1)
    ind_w = np.median(st.ind[:, -n:], axis=1)
    diff = np.abs(raw - prev)
    dev = np.abs(raw - mean_w)

    k, n_ch = raw.shape
    feats = np.empty((k, n_ch, N_FEATURES))
    span = min(n, MEDIAN_SPAN)
    ind_m = np.median(st.ind[:, -span:], axis=1)
    kcl_m = np.median(st.kcl[:, -span:], axis=1)
    c = raw[:, N_SENSOR_CHANNELS:]
    local = np.concatenate([raw[:, :N_SENSOR_CHANNELS], np.repeat(ctx.i_f[:, None], c.shape[1], axis=1)], axis=1)
    st.trend = local.copy() if first else st.trend + trend_alpha * (local - st.trend)
    drift = np.abs(local - st.trend)
    feats[:, CH_CURRENT] = np.stack(
        [np.abs(kcl), np.abs(kcl_m - ind_m / r), np.abs(kcl_w - ind_w / r), diff[:, CH_CURRENT], dev[:, CH_CURRENT],
         drift[:, CH_CURRENT]], axis=1)
    feats[:, CH_VOLTAGE] = np.stack(
        [np.abs(ind_m), r * np.abs(kcl), np.abs(ind_w), diff[:, CH_VOLTAGE], dev[:, CH_VOLTAGE],
         drift[:, CH_VOLTAGE]], axis=1)
    gap = c - ctx.i_f[:, None]
    st.comm_ewma = gap.copy() if first else st.comm_ewma + ewma_alpha * (gap - st.comm_ewma)
    deg = c.shape[1]
    if deg > 1:
        others = (c.sum(axis=1, keepdims=True) - c) / (deg - 1)
    else:
        others = ctx.i_f[:, None]
    feats[:, N_SENSOR_CHANNELS:] = np.stack(
        [np.abs(gap), diff[:, N_SENSOR_CHANNELS:], dev[:, N_SENSOR_CHANNELS:],
         np.abs(st.comm_ewma), np.abs(c - others), drift[:, N_SENSOR_CHANNELS:]], axis=2)
    return st, feats, st.warm


def channel_kinds(n_ch: int) -> list:
    return [KIND_CURRENT, KIND_VOLTAGE] + [KIND_COMM] * (n_ch - N_SENSOR_CHANNELS)


@dataclass
class RegressionModel:
    """Logistic regression with the feature scaling it was trained on."""

    params: LogRegParams
    stats: FeatureStats

    def prob(self, feats):
        return logreg_forward(self.stats.apply(feats), self.params)


def regression_probabilities(feats, models: dict):
    """``(k, n_ch)`` probabilities, each channel scored by its kind's model."""
    k, n_ch, _ = feats.shape
    prob = np.empty((k, n_ch))
    prob[:, CH_CURRENT] = models[KIND_CURRENT].prob(feats[:, CH_CURRENT])
    prob[:, CH_VOLTAGE] = models[KIND_VOLTAGE].prob(feats[:, CH_VOLTAGE])
    comm = feats[:, N_SENSOR_CHANNELS:].reshape(-1, N_FEATURES)
    prob[:, N_SENSOR_CHANNELS:] = models[KIND_COMM].prob(comm).reshape(k, n_ch - N_SENSOR_CHANNELS)
    return prob


def regression_flags(feats, models: dict, count, m: int, warm: bool = True):
    """Debounced logistic-regression flags; returns ``(count, S_r, raw, prob)``."""
    prob = regression_probabilities(feats, models)
    thr = np.array([models[kd].params.threshold for kd in channel_kinds(prob.shape[1])])
    raw = (prob > thr) & warm
    count = debounce(count, raw)
    return count, count >= m, raw, prob


# --- estimator --------------------------------------------------------------

def twin_inputs(duty, v_in, v_bus, r_line):
    """LSTM input rows ``[d v_in, v_bus, (d v_in - v_bus)/r, r]`` per converter."""
    dv = np.asarray(duty) * v_in
    return np.stack([dv, v_bus, (dv - v_bus) / r_line, np.broadcast_to(r_line, dv.shape)], axis=-1)


@dataclass
class TwinModel:
    """Shared LSTM that predicts each converter's next ``[i_l, v_c]``."""

    params: LstmParams
    x_stats: FeatureStats
    y_stats: FeatureStats
    resid_std: np.ndarray  # validation residual std for [current, voltage, comm]


@dataclass
class ChannelEstimate:
    i_p: np.ndarray
    v_p: np.ndarray
    comm_p: np.ndarray  # (k, degree)


class Twin:
    """Streaming wrapper: feed the applied duty each sample, read estimates."""

    def __init__(self, model: TwinModel, k: int, v_in, r_line):
        self.model = model
        self.state = LstmState.zeros(model.params, batch=k)
        self.v_in = np.asarray(v_in, dtype=float)
        self.r_line = np.asarray(r_line, dtype=float)
        self.pred = np.full((k, 2), np.nan)
        self.steps = 0

    def update(self, duty, v_bus):
        x = self.model.x_stats.apply(twin_inputs(duty, self.v_in, v_bus, self.r_line))
        self.state, y = lstm_step(x, self.state, self.model.params)
        self.pred = self.model.y_stats.invert(y)
        self.steps += 1
        return self.pred

    def estimate(self, degree: int) -> ChannelEstimate:
        i_p = self.pred[:, 0].copy()
        return ChannelEstimate(i_p, self.pred[:, 1].copy(), np.repeat(i_p[:, None], degree, axis=1))


# --- latch and substitution -------------------------------------------------

@dataclass
class LatchState:
    latched: np.ndarray
    clean: np.ndarray  # consecutive samples with neither raw test firing
    s_t_prev: np.ndarray

    @classmethod
    def empty(cls, shape) -> "LatchState":
        return cls(np.zeros(shape, bool), np.zeros(shape, int), np.zeros(shape, bool))

    def copy(self) -> "LatchState":
        return LatchState(self.latched.copy(), self.clean.copy(), self.s_t_prev.copy())


def update_latch(state: LatchState, s_t, raw_r, raw_l, hold: int):
    """Set on a rising edge of ``s_t``; release after ``hold`` clean samples.

    Returns ``(state, rising, falling)`` where the edges refer to the latch.
    """
    s_t = np.asarray(s_t, bool)
    quiet = ~(np.asarray(raw_r, bool) | np.asarray(raw_l, bool))
    clean = np.where(quiet, state.clean + 1, 0)
    set_ = s_t & ~state.s_t_prev
    latched = (state.latched & ~(clean >= hold)) | set_ | (state.latched & s_t)
    rising = latched & ~state.latched
    falling = state.latched & ~latched
    return LatchState(latched, clean, s_t.copy()), rising, falling


def mitigate(measured, estimate, latched, last_good=None, estimate_ready=True):
    """Values handed to control: the estimate where latched, else the input.

    Unlatched entries are returned bit-identical. If the estimator is cold,
    latched entries fall back to ``last_good``.
    """
    measured = np.asarray(measured, dtype=float)
    latched = np.asarray(latched, bool)
    if not latched.any():
        return measured.copy()
    est = np.asarray(estimate, dtype=float)
    if not estimate_ready or not np.all(np.isfinite(est[latched])):
        if last_good is None:
            raise ConfigError("estimate not ready and no last known-good value")
        warnings.warn("estimator cold; holding last known-good value", RuntimeWarning, stacklevel=2)
        est = np.where(np.isfinite(est), est, last_good) if estimate_ready else np.asarray(last_good)
    return np.where(latched, est, measured)


def notify_neighbors(bus: CommBus, rising, falling, sample_index: int) -> list:
    """Broadcast notifications for latch edges on a converter's own sensors.

    Value 1 announces that the sender's data is compromised, value 0 clears
    it. Link flags stay local: the compromised party there is the link, not
    a sender whose other links could be affected.
    """
    msgs = []
    sens_r = np.asarray(rising)[:, :N_SENSOR_CHANNELS]
    sens_f = np.asarray(falling)[:, :N_SENSOR_CHANNELS]
    names = ("current", "voltage")
    for k in range(sens_r.shape[0]):
        for ch in range(N_SENSOR_CHANNELS):
            if sens_r[k, ch]:
                msgs += bus.broadcast(k, 1.0, sample_index, NOTIFICATION, names[ch])
            if sens_f[k, ch]:
                msgs += bus.broadcast(k, 0.0, sample_index, NOTIFICATION, names[ch])
    return msgs


# --- the per-sample bank ----------------------------------------------------

@dataclass
class DetectorModels:
    twin: TwinModel
    regression: dict  # kind -> RegressionModel

    def eps(self, mult: float) -> np.ndarray:
        return mult * np.asarray(self.twin.resid_std, dtype=float)

    def save(self, directory):
        save_twin(directory, self.twin)
        save_regressions(directory, self.regression)

    @classmethod
    def load(cls, directory) -> "DetectorModels":
        d = Path(directory)
        try:
            params, ex = serialize.load_lstm(d / "lstm.bin")
            twin = TwinModel(params, FeatureStats(ex["x_mean"], ex["x_std"]),
                             FeatureStats(ex["y_mean"], ex["y_std"]), ex["resid_std"])
            reg = {}
            for kind in KINDS:
                p, ex = serialize.load_logreg(d / f"logreg_{kind}.bin")
                reg[kind] = RegressionModel(p, FeatureStats(ex["feat_mean"], ex["feat_std"]))
        except FileNotFoundError as exc:
            raise ConfigError(f"model file not found: {exc.filename}") from None
        except KeyError as exc:
            raise serialize.ModelFormatError(f"model file lacks array {exc}") from None
        return cls(twin, reg)


def save_twin(directory, twin: TwinModel):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    serialize.save_lstm(d / "lstm.bin", twin.params, {
        "x_mean": twin.x_stats.mean, "x_std": twin.x_stats.std,
        "y_mean": twin.y_stats.mean, "y_std": twin.y_stats.std, "resid_std": twin.resid_std})


def save_regressions(directory, regression: dict):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for kind, m in regression.items():
        serialize.save_logreg(d / f"logreg_{kind}.bin", m.params,
                              {"feat_mean": m.stats.mean, "feat_std": m.stats.std})


@dataclass
class DetectorState:
    features: FeatureState
    reg_count: np.ndarray
    lstm_count: np.ndarray
    latch: LatchState
    last_good: np.ndarray
    notified: np.ndarray  # (k, degree) sender currently announced compromised
    grace: np.ndarray  # (k, degree) samples of suppressed link testing left
    note_channels: np.ndarray = field(default=None)  # (k, degree, 2) which sender sensors are flagged

    @classmethod
    def empty(cls, k: int, degree: int, window: int) -> "DetectorState":
        shape = (k, N_SENSOR_CHANNELS + degree)
        return cls(FeatureState.empty(k, degree, window), np.zeros(shape, int), np.zeros(shape, int),
                   LatchState.empty(shape), np.zeros(shape), np.zeros((k, degree), bool),
                   np.zeros((k, degree), int), np.zeros((k, degree, N_SENSOR_CHANNELS), bool))


@dataclass
class DefenseStep:
    s_r: np.ndarray
    s_l: np.ndarray
    s_t: np.ndarray
    latched: np.ndarray
    rising: np.ndarray
    falling: np.ndarray
    prob: np.ndarray
    residual: np.ndarray
    i_use: np.ndarray
    v_use: np.ndarray
    comm_use: np.ndarray
    comm_include: np.ndarray  # (k, degree) links entering the current average


def apply_notifications(state: DetectorState, messages, graph, grace: int):
    """Record notifications delivered this sample."""
    for m in messages:
        if m.kind != NOTIFICATION:
            continue
        slot = graph.slot(m.receiver, m.sender)
        ch = 0 if m.channel == "current" else 1
        state.note_channels[m.receiver, slot, ch] = m.value > 0.5
        was = state.notified[m.receiver, slot]
        now = bool(state.note_channels[m.receiver, slot].any())
        state.notified[m.receiver, slot] = now
        if was and not now:
            state.grace[m.receiver, slot] = grace


def defense_step(state: DetectorState, cfg: DefenseConfig, models: DetectorModels, pc: PlantConstants,
                 raw: np.ndarray, ctx: FeatureContext, estimate: ChannelEstimate | None):
    """One detection/mitigation sample for every converter (state updated in place).

    ``raw`` is the ``(k, n_ch)`` matrix of possibly-corrupted channel values.
    ``estimate`` is None while the twin is warming up.
    """
    k, n_ch = raw.shape
    deg = n_ch - N_SENSOR_CHANNELS
    state.features, feats, warm = extract_features(state.features, raw, ctx, pc, cfg.comm_ewma,
                                                        cfg.trend_ewma)
    state.reg_count, s_r, raw_r, prob = regression_flags(feats, models.regression, state.reg_count,
                                                         cfg.debounce, warm)
    if estimate is not None:
        est = np.concatenate([estimate.i_p[:, None], estimate.v_p[:, None], estimate.comm_p], axis=1)
        eps = np.array([models.eps(cfg.eps_mult)[min(c, 2)] for c in range(n_ch)])
        residual = raw - est
        state.lstm_count, s_l, raw_l = lstm_flags(raw, est, eps, state.lstm_count, cfg.debounce)
    else:
        est = np.full_like(raw, np.nan)
        residual = np.zeros_like(raw)
        raw_l = np.zeros_like(raw, dtype=bool)
        state.lstm_count = np.zeros_like(state.lstm_count)
        s_l = raw_l.copy()

    # links from a sender that announced a compromised sensor are not tested
    quiet = state.notified | (state.grace > 0)
    if quiet.any():
        mask = np.zeros_like(raw_r)
        mask[:, N_SENSOR_CHANNELS:] = quiet
        for arr in (state.reg_count, state.lstm_count):
            arr[mask] = 0
        s_r = s_r & ~mask
        s_l = s_l & ~mask
        raw_r = raw_r & ~mask
        raw_l = raw_l & ~mask
    state.grace = np.maximum(state.grace - 1, 0)

    s_t = fuse(s_r, s_l)
    state.latch, rising, falling = update_latch(state.latch, s_t, raw_r, raw_l, cfg.hold)
    latched = state.latch.latched
    if quiet.any():
        # a link latched before the notification arrived is withdrawn
        latched[:, N_SENSOR_CHANNELS:] &= ~quiet
    used = mitigate(raw, est, latched, state.last_good, estimate is not None)
    state.last_good = np.where(latched, state.last_good, raw)
    include = ~(latched[:, N_SENSOR_CHANNELS:] | state.notified)
    return DefenseStep(s_r, s_l, s_t, latched.copy(), rising, falling, prob, residual,
                       used[:, CH_CURRENT], used[:, CH_VOLTAGE], used[:, N_SENSOR_CHANNELS:], include)
