"""The sample loop: plant, comms delivery, noise, attacks, defense, control.

One control period ``t_s`` per sample; the plant takes ``t_s/dt`` substeps
with the duty chosen at the previous sample. Within sample ``n``:

1. apply load steps due at ``t_n``; advance the plant (``n > 0``);
2. deliver messages sent at ``n - 1`` (currents and notifications);
3. add sensor noise; 4. inject attacks;
5. detect and substitute; 6. run the controllers;
7. feed the applied duty to the estimator; 8. broadcast consumed currents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..attack import N_SENSOR_CHANNELS, apply_attacks
from ..comms import CURRENT, NOTIFICATION, CommBus
from ..control import (ControllerState, ControlSample, closed_loop_operating_point, control_step,
                       controller_at)
from ..defense import (DetectorModels, DetectorState, FeatureContext, FeatureState, PlantConstants, Twin,
                       apply_notifications, defense_step, extract_features, notify_neighbors,
                       twin_inputs, N_FEATURES)
from ..plant import ConverterState, NetworkParams, StackedParams, plant_step
from .config import ScenarioConfig


@dataclass
class Trace:
    """Every logged signal, one row per control sample.

    Per-converter arrays are ``(n, k)``; link arrays ``(n, k, degree)`` with
    the receiver first; channel arrays ``(n, k, 2 + degree)``.
    """

    t: np.ndarray
    senders: np.ndarray  # (k, degree) sender id per receiver slot
    i_l: np.ndarray
    i_out: np.ndarray
    v_c: np.ndarray
    v_bus: np.ndarray
    i_meas: np.ndarray
    v_meas: np.ndarray
    i_use: np.ndarray
    v_use: np.ndarray
    i_est: np.ndarray
    v_est: np.ndarray
    duty: np.ndarray
    v_ref: np.ndarray
    i_avg: np.ndarray
    comm_raw: np.ndarray
    comm_use: np.ndarray
    comm_include: np.ndarray
    s_r: np.ndarray
    s_l: np.ndarray
    s_t: np.ndarray
    latched: np.ndarray
    labels: np.ndarray

    @property
    def k(self) -> int:
        return self.senders.shape[0]

    @property
    def degree(self) -> int:
        return self.senders.shape[1]

    def __len__(self):
        return self.t.size


@dataclass
class Collected:
    """Extra per-sample records used to build training data."""

    twin_x: np.ndarray  # (n, k, 4) estimator inputs at n
    i_clean: np.ndarray  # (n, k) noisy but unattacked current reading
    v_clean: np.ndarray
    comm_clean: np.ndarray  # (n, k, degree) unattacked link values
    features: np.ndarray  # (n, k, n_ch, N_FEATURES)
    warm: np.ndarray  # (n,) feature window full


@dataclass
class SimResult:
    trace: Trace
    collected: Collected | None = None
    config: ScenarioConfig | None = None
    notes: list = field(default_factory=list)


def _initial(cfg: ScenarioConfig, r, inbound):
    k = cfg.k
    if cfg.init == "steady":
        op = closed_loop_operating_point(cfg.droop, cfg.converter.v_in, r, cfg.r_load, inbound)
        return (ConverterState(op.i.copy(), op.v_c.copy()), controller_at(op), op.duty.copy(),
                op.i.copy(), op.v_c.copy())
    z = np.zeros(k)
    return ConverterState.zeros(k), ControllerState.zeros(k), z.copy(), z.copy(), z.copy()


def simulate(cfg: ScenarioConfig, models: DetectorModels | None = None, *,
             oracle_delay: int | None = None, collect: bool = False) -> SimResult:
    """Run ``cfg`` for its full duration.

    With ``models`` and ``cfg.detection`` the detectors run; they substitute
    only if ``cfg.mitigation``. ``oracle_delay`` replaces detection with
    ground truth: a channel attacked for more than that many samples is fed
    its unattacked reading (used when generating training data).
    """
    k = cfg.k
    graph = cfg.graph()
    deg = graph.degree
    n_ch = N_SENSOR_CHANNELS + deg
    senders = graph.inbound_matrix()
    inbound = [graph.inbound(j) for j in range(k)]
    r = np.asarray(cfg.r_line, dtype=float)
    params = StackedParams.from_params([cfg.converter] * k)
    net = NetworkParams(r.copy(), cfg.r_load)
    gv, gi = cfg.voltage_gains(), cfg.current_gains()
    t_s, dt, sub = cfg.t_s, cfg.dt, cfg.substeps
    n_total = cfg.n_samples
    rng = np.random.default_rng(cfg.seed)
    sigma = np.array([cfg.noise.current, cfg.noise.voltage, cfg.noise.bus])[:, None]

    plant, ctrl, duty, i_ref, v_ref = _initial(cfg, r, inbound)
    bus = CommBus(graph)
    inbox = plant.i_l[senders] if cfg.init == "steady" else np.zeros((k, deg))
    steps = sorted(cfg.load_steps, key=lambda s: s.t)
    step_at = [max(0, math.ceil(s.t / t_s - 1e-9)) for s in steps]
    next_step = 0

    use_defense = models is not None and cfg.detection
    pc = PlantConstants(r, params.l_buck, params.c_buck, params.v_in, t_s)
    dcfg = cfg.defense
    if use_defense:
        det = DetectorState.empty(k, deg, dcfg.window)
        twin = Twin(models.twin, k, params.v_in, r)
    feat_state = FeatureState.empty(k, deg, dcfg.window) if collect else None
    oracle_count = np.zeros((k, n_ch), int)

    def alloc(*shape, dtype=float):
        return np.zeros((n_total, *shape), dtype=dtype)

    tr = Trace(t=np.arange(n_total) * t_s, senders=senders,
               i_l=alloc(k), i_out=alloc(k), v_c=alloc(k), v_bus=alloc(), i_meas=alloc(k),
               v_meas=alloc(k), i_use=alloc(k), v_use=alloc(k), i_est=alloc(k), v_est=alloc(k),
               duty=alloc(k), v_ref=alloc(k), i_avg=alloc(k), comm_raw=alloc(k, deg),
               comm_use=alloc(k, deg), comm_include=alloc(k, deg, dtype=bool),
               s_r=alloc(k, n_ch, dtype=bool), s_l=alloc(k, n_ch, dtype=bool),
               s_t=alloc(k, n_ch, dtype=bool), latched=alloc(k, n_ch, dtype=bool),
               labels=alloc(k, n_ch, dtype=bool))
    col = None
    if collect:
        col = Collected(alloc(k, 4), alloc(k), alloc(k), alloc(k, deg), alloc(k, n_ch, N_FEATURES),
                        alloc(dtype=bool))
    all_links = np.ones((k, deg), bool)

    for n in range(n_total):
        t = n * t_s
        while next_step < len(steps) and step_at[next_step] <= n:
            net = net.with_load(steps[next_step].r_load)
            next_step += 1
        if n > 0:
            for j in range(sub):
                plant, meas = plant_step(plant, duty, params, net, dt, step=n, i_l_floor=cfg.i_l_floor)
            i_out, v_bus = meas.i_k, meas.v_bus
        else:
            g = 1.0 / r
            v_bus = float(g @ plant.v_c / (1.0 / net.r_load + g.sum()))
            i_out = (plant.v_c - v_bus) * g

        for m in bus.deliver(n):
            if m.kind == CURRENT:
                inbox[m.receiver, graph.slot(m.receiver, m.sender)] = m.value
            elif m.kind == NOTIFICATION and use_defense and cfg.mitigation:
                apply_notifications(det, [m], graph, dcfg.window)

        noise = rng.standard_normal((3, k)) * sigma
        i_clean = plant.i_l + noise[0]
        v_clean = plant.v_c + noise[1]
        vb_meas = v_bus + noise[2]
        i_raw, v_raw, c_raw, labels = apply_attacks(cfg.attacks, graph, i_clean, v_clean, inbox, t)

        ctx = FeatureContext(vb_meas, duty, ctrl.i_f)
        include = all_links
        i_use, v_use, c_use = i_raw, v_raw, c_raw
        if use_defense:
            warm = twin.steps >= dcfg.lstm_warmup
            raw = np.concatenate([i_raw[:, None], v_raw[:, None], c_raw], axis=1)
            ds = defense_step(det, dcfg, models, pc, raw, ctx, twin.estimate(deg) if warm else None)
            tr.s_r[n], tr.s_l[n], tr.s_t[n], tr.latched[n] = ds.s_r, ds.s_l, ds.s_t, ds.latched
            if cfg.mitigation:
                i_use, v_use, c_use, include = ds.i_use, ds.v_use, ds.comm_use, ds.comm_include
        elif oracle_delay is not None:
            oracle_count = np.where(labels, oracle_count + 1, 0)
            sub_mask = oracle_count > oracle_delay
            if sub_mask.any():
                i_use = np.where(sub_mask[:, 0], i_clean, i_raw)
                v_use = np.where(sub_mask[:, 1], v_clean, v_raw)
                c_use = np.where(sub_mask[:, 2:], inbox, c_raw)
                include = ~sub_mask[:, 2:]
        if collect:
            raw = np.concatenate([i_raw[:, None], v_raw[:, None], c_raw], axis=1)
            feat_state, feats, fwarm = extract_features(feat_state, raw, ctx, pc, dcfg.comm_ewma,
                                                              dcfg.trend_ewma)
            col.features[n], col.warm[n] = feats, fwarm
            col.i_clean[n], col.v_clean[n], col.comm_clean[n] = i_clean, v_clean, inbox

        n_inc = include.sum(axis=1)
        i_avg = (i_use + np.where(include, c_use, 0.0).sum(axis=1)) / (1 + n_inc)
        ctrl, out = control_step(ctrl, cfg.droop, gv, gi, ControlSample(i_use, v_use, i_avg, vb_meas, t_s))
        duty, i_ref, v_ref = out.duty, out.i_ref, out.v_ref_k

        if use_defense:
            pred = twin.update(duty, vb_meas)
        if collect:
            col.twin_x[n] = twin_inputs(duty, params.v_in, vb_meas, r)

        for j in range(k):
            bus.broadcast(j, i_use[j], n)
        if use_defense and cfg.mitigation and dcfg.notify and (ds.rising.any() or ds.falling.any()):
            notify_neighbors(bus, ds.rising, ds.falling, n)

        tr.i_l[n], tr.i_out[n], tr.v_c[n], tr.v_bus[n] = plant.i_l, i_out, plant.v_c, v_bus
        tr.i_meas[n], tr.v_meas[n], tr.i_use[n], tr.v_use[n] = i_raw, v_raw, i_use, v_use
        tr.duty[n], tr.v_ref[n], tr.i_avg[n] = duty, v_ref, i_avg
        tr.comm_raw[n], tr.comm_use[n], tr.comm_include[n] = c_raw, c_use, include
        tr.labels[n] = labels
        if use_defense and n + 1 < n_total:
            tr.i_est[n + 1], tr.v_est[n + 1] = pred[:, 0], pred[:, 1]
    if use_defense:
        cold = min(dcfg.lstm_warmup, n_total)
        tr.i_est[:cold] = np.nan
        tr.v_est[:cold] = np.nan
    else:
        tr.i_est[:] = np.nan
        tr.v_est[:] = np.nan
    return SimResult(tr, col, cfg)
