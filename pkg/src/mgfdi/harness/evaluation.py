"""Detection error of trained models on held-out randomized runs."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..defense import DetectorModels
from .datagen import DatagenConfig, run_configs, split_run_indices
from .metrics import confusion, sample_error_pct
from .sim import simulate


@dataclass
class HeldoutReport:
    runs: list  # run indices evaluated
    sample_error_pct: float
    confusion: dict
    per_run_pct: list


def heldout_detection_error(models: DetectorModels, gc: DatagenConfig = DatagenConfig(),
                            fractions=(0.70, 0.15, 0.15), seed: int = 0, which: int = 2) -> HeldoutReport:
    """Replay the runs of one split (test by default) with the live detector.

    Each run is simulated with detection and mitigation on, and the latched
    flags over its kept window are scored against the attack labels. Errors
    are pooled over every channel-sample of every run.
    """
    idx = split_run_indices(gc, fractions, seed)[which]
    cfgs = run_configs(gc)
    keep = slice(gc.pre_roll, gc.pre_roll + gc.run_samples)
    flags, labels, per_run = [], [], []
    for r in idx:
        tr = simulate(replace(cfgs[r], detection=True, mitigation=True), models).trace
        f, lab = tr.latched[keep], tr.labels[keep]
        flags.append(f)
        labels.append(lab)
        per_run.append(sample_error_pct(f, lab))
    f = np.concatenate(flags)
    lab = np.concatenate(labels)
    return HeldoutReport(list(idx), sample_error_pct(f, lab), confusion(f, lab), per_run)
