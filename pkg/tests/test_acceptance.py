"""Acceptance criteria 1-9 at their stated tolerances.

Each test records one PASS/FAIL line (printed together in the terminal
summary) before asserting. Trained detector models are cached under
``.acceptance_cache/<key>`` (or ``$MGFDI_ACCEPTANCE_CACHE``), keyed by the
dataset hash and the training configs; delete the directory to retrain.
"""
import hashlib
import json
import os
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA
from gradcheck import logreg_fd_error, lstm_fd_error
from mgfdi.control import closed_loop_operating_point
from mgfdi.defense import DetectorModels
from mgfdi.harness.config import r_line_array
from mgfdi.harness.datagen import DatagenConfig, generate_training_data, save_training_data
from mgfdi.harness.evaluation import heldout_detection_error
from mgfdi.harness.metrics import compute_metrics, fluctuation_pct
from mgfdi.harness.scenarios import builtin_scenario, normal_operation
from mgfdi.harness.sim import simulate
from mgfdi.harness.trace_io import read_trace_csv, write_trace_csv
from mgfdi.ml import LogRegConfig, TrainConfig, sigmoid
from mgfdi.plant import NetworkParams, dc_steady_state_oracle
from mgfdi.plotting import plot_trace

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parent.parent
CACHE = Path(os.environ.get("MGFDI_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))
STEADY = 0.1  # s, trailing window for steady-state means


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    assert ok, line


# --- shared fixtures ----------------------------------------------------------

@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    gc = DatagenConfig()
    data = generate_training_data(gc)
    path = tmp_path_factory.mktemp("dataset") / "dataset.csv"
    sha = save_training_data(data, path)
    return gc, data, sha


@pytest.fixture(scope="session")
def trained(dataset):
    """``(models, model_dir, info)`` with info holding the estimator test MSE."""
    _, data, sha = dataset
    cfg, lcfg = TrainConfig(), LogRegConfig()
    key = hashlib.sha256(json.dumps([sha, asdict(cfg), asdict(lcfg)], sort_keys=True, default=str)
                         .encode()).hexdigest()[:16]
    model_dir = CACHE / key
    info_path = model_dir / "info.json"
    if info_path.exists():
        return DetectorModels.load(model_dir), model_dir, json.loads(info_path.read_text())
    from mgfdi.harness.training import train_detector

    models, twin_rep, reg_reps = train_detector(data, cfg, lcfg)
    models.save(model_dir)
    info = {"test_mse": twin_rep.test_mse, "val_mse": twin_rep.val_mse, "train_mse": twin_rep.train_mse,
            "best_epoch": twin_rep.history.best_epoch,
            "regression_test_acc": {r.kind: r.test_acc for r in reg_reps}}
    info_path.write_text(json.dumps(info, indent=2, sort_keys=True))
    return DetectorModels.load(model_dir), model_dir, info


@pytest.fixture(scope="session")
def runs(trained):
    """Lazily simulated full-length runs with the trained models, memoized by name."""
    models = trained[0]
    memo = {}

    def get(name):
        if name not in memo:
            if name == "normal":
                cfg = normal_operation()
            elif name == "1-unmitigated":
                cfg = builtin_scenario(1, mitigation=False)
            elif name.startswith("loadsteps-"):
                cfg = builtin_scenario(1, seed=int(name.split("-")[1])).with_overrides(attacks=())
            else:
                cfg = builtin_scenario(int(name))
            tr = simulate(cfg, models).trace
            memo[name] = (cfg, tr, compute_metrics(tr, cfg))
        return memo[name]

    return get


# --- criteria -----------------------------------------------------------------

def test_criterion_1_regulation():
    cfg = normal_operation(init="zero", detection=False)
    t0 = time.perf_counter()
    tr = simulate(cfg).trace
    elapsed = time.perf_counter() - t0
    w = tr.t >= cfg.duration - STEADY
    v_bus = float(tr.v_bus[w].mean())
    i_out = tr.i_out[w].mean(axis=0)
    spread = float((i_out.max() - i_out.min()) / i_out.mean())
    r = r_line_array(cfg)
    oracle = dc_steady_state_oracle(None, NetworkParams(r, cfg.r_load), v_refs=tr.v_c[w].mean(axis=0))
    graph = cfg.graph()
    op = closed_loop_operating_point(cfg.droop, cfg.converter.v_in, r, cfg.r_load,
                                     [graph.inbound(j) for j in range(cfg.k)])
    dc_err = max(float(np.max(np.abs(oracle.i_k / i_out - 1))), abs(oracle.v_bus / v_bus - 1),
                 float(np.max(np.abs(op.i / i_out - 1))), abs(op.v_bus / v_bus - 1))
    ok = abs(v_bus / 39.0 - 1) <= 0.05 and spread <= 0.10 and dc_err <= 0.01 and elapsed < 60
    report(1, ok, f"v_bus {v_bus:.3f} V, current spread {100 * spread:.2f}%, "
                  f"DC mismatch {100 * dc_err:.4f}%, runtime {elapsed:.1f} s")


def test_criterion_2_load_step_specificity(runs):
    flagged = {}
    for seed in range(5):
        _, tr, _ = runs(f"loadsteps-{seed}")
        flagged[seed] = int(tr.latched.sum())
    ok = all(v == 0 for v in flagged.values())
    report(2, ok, f"latched channel-samples per seed {flagged}")


def test_criterion_3_scenario1(runs):
    _, _, m = runs("1")
    _, _, mu = runs("1-unmitigated")
    a, au = m.attacks[0], mu.attacks[0]
    lat = a.detection_latency
    ok = (lat is not None and lat <= 0.05 and a.recovery_deviation_pct <= 5.0
          and au.recovery_deviation_pct >= 20.0)
    lat_s = "none" if lat is None else f"{1e3 * lat:.2f} ms"
    report(3, ok, f"latency {lat_s}, mitigated deviation {a.recovery_deviation_pct:.2f}%, "
                  f"unmitigated deviation {au.recovery_deviation_pct:.2f}%")


def test_criterion_4_scenarios_2_3_4(runs):
    parts, ok = [], True
    for name in ("2", "3", "4"):
        _, _, m = runs(name)
        for a in m.attacks:
            good = a.detection_latency is not None and a.recovery_deviation_pct <= 5.0
            ok &= good
            lat = "missed" if a.detection_latency is None else f"{a.detection_latency:.4f} s"
            parts.append(f"S{name} {a.target}: {lat}, dev {a.recovery_deviation_pct:.2f}%")
        if m.unlabeled_latched_channels:
            ok = False
            parts.append(f"S{name} stray {m.unlabeled_latched_channels}")
    report(4, ok, "; ".join(parts))


def test_criterion_5_heldout_error(dataset, trained):
    gc = dataset[0]
    rep = heldout_detection_error(trained[0], gc)
    ok = rep.sample_error_pct <= 2.0
    report(5, ok, f"sample error {rep.sample_error_pct:.3f}% over held-out runs {rep.runs} "
                  f"(fp {rep.confusion['fp']}, fn {rep.confusion['fn']})")


def test_criterion_6_fluctuation(runs):
    # coordinated attack: converter 4's current sensor is estimate-fed after detection
    cfg, tr, m = runs("4")
    conv = 3
    ncfg, ntr, _ = runs("normal")
    end = cfg.duration
    window = (end - STEADY, end + 1e-9)
    mitigated = fluctuation_pct(tr.i_out[:, conv], tr.t, window)
    normal = fluctuation_pct(ntr.i_out[:, conv], ntr.t, window)
    fed = bool(tr.latched[tr.t >= window[0], conv, 0].all())
    ok = fed and normal < mitigated <= 10.0
    report(6, ok, f"converter 4 output current fluctuation: normal {normal:.3f}%, "
                  f"estimate-fed {mitigated:.3f}% (estimate in use throughout window: {fed})")


def test_criterion_7_ml_numerics(trained):
    lstm_err = max(lstm_fd_error(seed) for seed in range(5))
    lr_err = max(logreg_fd_error(seed) for seed in range(5))
    x = np.linspace(-700, 700, 20001)
    sym = float(np.max(np.abs(sigmoid(x) + sigmoid(-x) - 1.0)))
    mse = trained[2]["test_mse"]
    ok = lstm_err < 1e-4 and lr_err < 1e-6 and sym <= 1e-12 and mse < 1e-3
    report(7, ok, f"LSTM grad rel err {lstm_err:.2e}, logreg {lr_err:.2e}, sigmoid symmetry {sym:.1e}, "
                  f"estimator test MSE {mse:.3e}")


def test_criterion_8_determinism(trained, tmp_path):
    _, model_dir, _ = trained
    cfg = builtin_scenario(1, duration=0.55)
    paths = []
    for rep in ("a", "b"):
        models = DetectorModels.load(model_dir)
        p = tmp_path / f"trace_{rep}.csv"
        write_trace_csv(simulate(cfg, models).trace, p)
        paths.append(p)
    traces_same = paths[0].read_bytes() == paths[1].read_bytes()

    gc = DatagenConfig(n_points=2000, segment=250, pre_roll=60, seed=5)
    shas = [save_training_data(generate_training_data(gc), tmp_path / f"data_{i}.csv") for i in range(2)]
    data_same = (tmp_path / "data_0.csv").read_bytes() == (tmp_path / "data_1.csv").read_bytes()

    cols = read_trace_csv(paths[0])
    svgs = [plot_trace(cols, tmp_path / f"plots_{i}") for i in range(2)]
    plots_same = all(a.read_bytes() == b.read_bytes() for a, b in zip(*svgs)) and len(svgs[0]) > 0
    ok = traces_same and data_same and plots_same and shas[0] == shas[1]
    report(8, ok, f"traces identical {traces_same}, datasets identical {data_same}, "
                  f"plots identical {plots_same} ({len(svgs[0])} files)")


def test_criterion_9_passthrough(runs):
    cfg, tr, _ = runs("normal")
    assert cfg.detection and not cfg.attacks
    same = (np.array_equal(tr.i_use, tr.i_meas) and np.array_equal(tr.v_use, tr.v_meas)
            and np.array_equal(tr.comm_use, tr.comm_raw) and bool(tr.comm_include.all()))
    report(9, same, f"control inputs equal raw measurements bit-exactly over {len(tr)} samples: {same}")
