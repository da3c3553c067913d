"""Fit the estimator LSTM and the three channel-kind regressions from a dataset."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..defense import (KIND_COMM, KIND_CURRENT, KIND_VOLTAGE, DetectorModels, RegressionModel, TwinModel)
from ..ml.data import fit_stats
from ..ml.logreg import LogRegConfig, logreg_predict, train_logreg
from ..ml.lstm import SequenceSet, TrainConfig, lstm_forward, mse, train_lstm
from .datagen import TrainingData

log = logging.getLogger(__name__)


@dataclass
class TwinReport:
    history: object
    train_mse: float
    val_mse: float
    test_mse: float
    resid_std: np.ndarray


@dataclass
class RegressionReport:
    kind: str
    train_acc: float
    val_acc: float
    test_acc: float
    test_error_pct: float
    losses: list = field(default_factory=list)


def _mask(n_seq, steps, burn_in):
    m = np.ones((n_seq, steps), bool)
    m[:, :burn_in] = False
    return m


def twin_sets(parts, config: TrainConfig):
    """Normalized train/val/test :class:`SequenceSet` and the scaling stats."""
    seqs = [p.sequences() for p in parts]
    x_stats = fit_stats(seqs[0][0])
    y_stats = fit_stats(seqs[0][1])
    sets = []
    for x, y, _ in seqs:
        sets.append(SequenceSet(x_stats.apply(x), y_stats.apply(y), _mask(x.shape[0], x.shape[1], config.burn_in)))
    return sets, x_stats, y_stats, seqs


def train_twin(data: TrainingData, config: TrainConfig = TrainConfig(), callback=None):
    parts = data.split(config.fractions, config.seed)
    (tr, va, te), x_stats, y_stats, raw = twin_sets(parts, config)
    params, hist = train_lstm(tr, va, config, callback=callback)
    scores = [mse(lstm_forward(s.x, params), s.y, s.mask) for s in (tr, va, te)]

    # residual spread on the validation split, in physical units
    pred = y_stats.invert(lstm_forward(va.x, params))
    y, comm = raw[1][1], raw[1][2]
    m = va.mask
    r_i = (y[..., 0] - pred[..., 0])[m]
    r_v = (y[..., 1] - pred[..., 1])[m]
    r_c = (comm - pred[..., :1])[m]
    resid_std = np.array([r_i.std(), r_v.std(), r_c.std()])
    log.info("estimator mse train %.3g val %.3g test %.3g; residual std %s", *scores, resid_std)
    twin = TwinModel(params, x_stats, y_stats, resid_std)
    return twin, TwinReport(hist, *scores, resid_std)


def _kind_rows(data: TrainingData, kind: str):
    f, lab = data.features, data.labels
    if kind == KIND_CURRENT:
        return f[:, :, 0].reshape(-1, f.shape[-1]), lab[:, :, 0].ravel()
    if kind == KIND_VOLTAGE:
        return f[:, :, 1].reshape(-1, f.shape[-1]), lab[:, :, 1].ravel()
    return f[:, :, 2:].reshape(-1, f.shape[-1]), lab[:, :, 2:].ravel()


def train_regressions(data: TrainingData, fractions=(0.70, 0.15, 0.15), seed: int = 0,
                      config: LogRegConfig = LogRegConfig()):
    parts = data.split(fractions, seed)
    models, reports = {}, []
    for kind in (KIND_CURRENT, KIND_VOLTAGE, KIND_COMM):
        xs = [_kind_rows(p, kind) for p in parts]
        stats = fit_stats(xs[0][0])
        params, losses = train_logreg(stats.apply(xs[0][0]), xs[0][1].astype(float), config)
        accs = []
        for x, y in xs:
            accs.append(float(np.mean(logreg_predict(stats.apply(x), params) == y)) if y.size else float("nan"))
        models[kind] = RegressionModel(params, stats)
        reports.append(RegressionReport(kind, *accs, 100.0 * (1.0 - accs[2]), losses))
        log.info("regression %s: acc train %.4f val %.4f test %.4f", kind, *accs)
    return models, reports


def train_detector(data: TrainingData, config: TrainConfig = TrainConfig(),
                   logreg: LogRegConfig = LogRegConfig(), callback=None):
    twin, twin_report = train_twin(data, config, callback)
    reg, reg_reports = train_regressions(data, config.fractions, config.seed, logreg)
    return DetectorModels(twin, reg), twin_report, reg_reports
