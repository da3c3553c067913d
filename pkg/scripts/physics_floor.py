"""One-step prediction error of an ideal averaged-buck integrator on the estimator's data.

Feeds the exact plant equations the same inputs the LSTM sees and reports the
normalized MSE on each split. This is a reference for what a local
next-sample predictor can reach when the bus moves with unseen neighbours.

    python scripts/physics_floor.py [dataset.csv]
"""
import sys

import numpy as np

from mgfdi.harness.datagen import load_training_data
from mgfdi.harness.training import twin_sets
from mgfdi.ml.lstm import TrainConfig
from mgfdi.plant import ConverterParams


def main(path="out/dataset.csv", substeps=20):
    data = load_training_data(path)
    cfg = TrainConfig()
    sets, _, y_stats, raw = twin_sets(data.split(cfg.fractions, cfg.seed), cfg)
    p = ConverterParams()
    h = 1.0 / p.f_s / substeps
    for name, (x, _, _), s in zip(("train", "val", "test"), raw, sets):
        u_sw, v_bus, r = x[..., 0], x[..., 1], x[..., 3]
        i = (u_sw[:, 0] - v_bus[:, 0]) / r[:, 0]
        v = u_sw[:, 0].copy()
        pred = np.zeros(s.y.shape)
        for t in range(x.shape[1]):
            for _ in range(substeps):
                di = (u_sw[:, t] - v) / p.l_buck
                v = v + h * (i - (v - v_bus[:, t]) / r[:, t]) / p.c_buck
                i = np.maximum(i + h * di, 0.0)
            pred[:, t] = np.stack([i, v], axis=-1)
        err = (y_stats.apply(pred) - s.y) ** 2
        cur, volt = err[s.mask].mean(axis=0)
        print(f"{name}: current {cur:.3e}  voltage {volt:.3e}  mean {(cur + volt) / 2:.3e}")


if __name__ == "__main__":
    main(*sys.argv[1:])
