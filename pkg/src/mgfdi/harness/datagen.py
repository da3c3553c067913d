"""Labeled training data from randomized closed-loop runs.

Each run starts at the steady operating point of a random load, may take a
load step and one or two random attacks, and is simulated with ground-truth
mitigation (an attacked channel is fed its clean reading after a short
delay, so post-detection behavior is represented). After a pre-roll that
fills the feature windows, ``segments_per_run`` consecutive segments of
``segment`` samples are kept.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..attack import AttackSpec, AttackTarget, AttackWaveform
from ..defense import N_FEATURES
from ..errors import ConfigError
from ..ml.data import split_counts, split_dataset
from .config import LoadStep, ScenarioConfig, attack_to_dict
from .sim import simulate

DATA_SCHEMA = "mgfdi.dataset/1"


@dataclass(frozen=True)
class DatagenConfig:
    n_points: int = 20000
    segment: int = 500
    segments_per_run: int = 1
    pre_roll: int = 200
    seed: int = 0
    oracle_delay: int = 12
    fractions: tuple = (0.70, 0.15, 0.15)
    r_load_range: tuple = (2.0, 3.2)
    load_step_prob: float = 0.6
    load_factor_range: tuple = (0.7, 1.35)
    attack_prob: float = 0.75
    second_attack_prob: float = 0.25
    bias_current: tuple = (0.5, 2.5)  # A
    bias_voltage: tuple = (1.0, 4.0)  # V
    bias_comm: tuple = (0.2, 2.5)  # A
    ramp_slope: tuple = (1.0, 5.0)  # units/s, scaled per kind below
    ramp_cap: tuple = (1.0, 3.0)
    ramp_time_scale: float = 25.0  # ramps are sped up so a short run reaches the cap range
    base: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        if self.n_points % (self.segment * self.segments_per_run):
            raise ConfigError("n_points must be a whole number of runs")
        split_counts(self.n_points // self.segment, self.fractions)

    @property
    def run_samples(self) -> int:
        return self.segment * self.segments_per_run

    @property
    def n_runs(self) -> int:
        return self.n_points // self.run_samples


@dataclass
class TrainingData:
    """Arrays indexed by point (time sample), then converter.

    ``twin_y`` and ``comm_next`` hold the readings at the *next* sample, so
    the estimator input at row ``n`` is paired with its one-step target.
    """

    twin_x: np.ndarray  # (N, k, 4)
    twin_y: np.ndarray  # (N, k, 2)
    comm_next: np.ndarray  # (N, k, degree)
    features: np.ndarray  # (N, k, n_ch, N_FEATURES)
    labels: np.ndarray  # (N, k, n_ch) bool
    segment: int
    meta: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return self.twin_x.shape[0]

    @property
    def k(self) -> int:
        return self.twin_x.shape[1]

    @property
    def degree(self) -> int:
        return self.comm_next.shape[2]

    def split(self, fractions=(0.70, 0.15, 0.15), seed: int = 0):
        """Segment-aligned train/val/test views of every array."""
        idx = np.arange(self.n_points)
        parts = split_dataset(idx, fractions, seed, block=self.segment)
        return tuple(TrainingData(self.twin_x[p], self.twin_y[p], self.comm_next[p], self.features[p],
                                  self.labels[p], self.segment, self.meta) for p in parts)

    def sequences(self):
        """Estimator sequences ``(n_seg * k, segment, .)`` for inputs, targets, next link values."""
        n_seg = self.n_points // self.segment
        t = self.segment

        def seq(a):
            a = a.reshape(n_seg, t, self.k, -1).transpose(0, 2, 1, 3)
            return a.reshape(n_seg * self.k, t, a.shape[-1])

        return seq(self.twin_x), seq(self.twin_y), seq(self.comm_next)


def _uniform(rng, lo_hi):
    return float(rng.uniform(*lo_hi))


def _random_attack(rng, gc: DatagenConfig, k: int, graph, t0: float, t1: float) -> AttackSpec:
    kind = int(rng.integers(3))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    t_start = float(rng.uniform(t0, t1))
    if kind == 0:
        target = AttackTarget.sensor_current(int(rng.integers(k)))
        mag = gc.bias_current
    elif kind == 1:
        target = AttackTarget.sensor_voltage(int(rng.integers(k)))
        mag = gc.bias_voltage
    else:
        recv = int(rng.integers(k))
        links = graph.inbound(recv)
        target = AttackTarget.comm_link(links[int(rng.integers(len(links)))], recv)
        mag = gc.bias_comm
    if rng.random() < 0.5:
        wave = AttackWaveform.bias(sign * _uniform(rng, mag), t_start)
    else:
        slope = sign * _uniform(rng, gc.ramp_slope) * gc.ramp_time_scale
        wave = AttackWaveform.ramp(slope, t_start, cap=_uniform(rng, gc.ramp_cap))
    return AttackSpec(target, wave)


def run_configs(gc: DatagenConfig) -> list:
    """The randomized scenario of every run (deterministic in ``gc.seed``)."""
    rng = np.random.default_rng(gc.seed)
    base = gc.base
    graph = base.graph()
    t_s = base.t_s
    n_run = gc.pre_roll + gc.run_samples + 1
    dur = n_run * t_s
    keep0 = gc.pre_roll * t_s
    keep1 = (gc.pre_roll + gc.run_samples) * t_s
    out = []
    for run in range(gc.n_runs):
        r_load = _uniform(rng, gc.r_load_range)
        steps = ()
        if rng.random() < gc.load_step_prob:
            t = float(rng.uniform(keep0, keep1 - 0.2 * (keep1 - keep0)))
            steps = (LoadStep(t, r_load / _uniform(rng, gc.load_factor_range)),)
        attacks = []
        if rng.random() < gc.attack_prob:
            attacks.append(_random_attack(rng, gc, base.k, graph, keep0, keep1 - 0.3 * (keep1 - keep0)))
            if rng.random() < gc.second_attack_prob:
                second = _random_attack(rng, gc, base.k, graph, keep0, keep1 - 0.3 * (keep1 - keep0))
                if second.target.channel(graph) != attacks[0].target.channel(graph):
                    attacks.append(second)
        out.append(replace(base, name=f"datagen-{run}", duration=dur, r_load=r_load, load_steps=steps,
                           attacks=tuple(attacks), seed=gc.seed * 100003 + run, detection=False,
                           init="steady"))
    return out


def split_run_indices(gc: DatagenConfig, fractions=(0.70, 0.15, 0.15), seed: int = 0) -> tuple:
    """Indices of the runs lying wholly inside the train, val and test splits.

    Uses the same segment-aligned split as :meth:`TrainingData.split`; a run
    straddling two splits (possible with ``segments_per_run > 1``) is in none.
    """
    parts = split_dataset(np.arange(gc.n_points), fractions, seed, block=gc.segment)
    out = []
    for p in parts:
        runs, counts = np.unique(p // gc.run_samples, return_counts=True)
        out.append([int(r) for r in runs[counts == gc.run_samples]])
    return tuple(out)


def generate_training_data(gc: DatagenConfig = DatagenConfig()) -> TrainingData:
    parts = []
    runs_meta = []
    for cfg in run_configs(gc):
        res = simulate(cfg, oracle_delay=gc.oracle_delay, collect=True)
        c, tr = res.collected, res.trace
        sl = slice(gc.pre_roll, gc.pre_roll + gc.run_samples)
        nx = slice(gc.pre_roll + 1, gc.pre_roll + gc.run_samples + 1)
        if not c.warm[sl].all():
            raise ConfigError("pre_roll shorter than the feature window")
        parts.append((c.twin_x[sl], np.stack([c.i_clean[nx], c.v_clean[nx]], axis=2),
                      c.comm_clean[nx], c.features[sl], tr.labels[sl]))
        runs_meta.append({"name": cfg.name, "seed": cfg.seed, "r_load": cfg.r_load,
                          "load_steps": [{"t": s.t, "r_load": s.r_load} for s in cfg.load_steps],
                          "attacks": [attack_to_dict(a) for a in cfg.attacks]})
    arrays = [np.concatenate(p, axis=0) for p in zip(*parts)]
    meta = {
        "schema": DATA_SCHEMA,
        "n_points": gc.n_points,
        "segment": gc.segment,
        "k": gc.base.k,
        "topology": gc.base.topology,
        "split": list(split_counts(gc.n_points, gc.fractions)),
        "generator": _jsonable(asdict(gc)),
        "runs": runs_meta,
    }
    return TrainingData(*arrays, segment=gc.segment, meta=meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# --- files ------------------------------------------------------------------

def dataset_columns(k: int, degree: int) -> list:
    cols = ["point", "converter", "x_dvin", "x_vbus", "x_gap", "x_r", "y_i", "y_v"]
    cols += [f"comm_next_{s}" for s in range(degree)]
    chans = ["c", "v"] + [f"l{s}" for s in range(degree)]
    for ch in chans:
        cols.append(f"label_{ch}")
        cols += [f"f{q}_{ch}" for q in range(N_FEATURES)]
    return cols


def save_training_data(data: TrainingData, csv_path, meta_path=None) -> str:
    """Write the CSV and JSON sidecar; returns the CSV's sha256."""
    n, k = data.n_points, data.k
    deg = data.degree
    n_ch = 2 + deg
    point = np.repeat(np.arange(n), k)[:, None]
    conv = np.tile(np.arange(k), n)[:, None]
    chan_cols = np.concatenate([data.labels[..., None].astype(float), data.features], axis=3)
    table = np.concatenate([
        point, conv, data.twin_x.reshape(n * k, 4), data.twin_y.reshape(n * k, 2),
        data.comm_next.reshape(n * k, deg), chan_cols.reshape(n * k, n_ch * (1 + N_FEATURES))], axis=1)
    header = ",".join(dataset_columns(k, deg))
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, table, fmt="%.17g", delimiter=",")
    digest = hashlib.sha256(csv_path.read_bytes()).hexdigest()
    meta = dict(data.meta)
    meta.update(columns=dataset_columns(k, deg), sha256=digest, degree=deg)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return digest


def load_training_data(csv_path, meta_path=None) -> TrainingData:
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"dataset metadata not found: {meta_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"dataset metadata unreadable: {exc}") from None
    if meta.get("schema") != DATA_SCHEMA:
        raise ConfigError(f"unsupported dataset schema {meta.get('schema')!r}")
    k, deg, seg = int(meta["k"]), int(meta["degree"]), int(meta["segment"])
    cols = dataset_columns(k, deg)
    try:
        with open(csv_path) as fh:
            header = fh.readline().strip().split(",")
            if header != cols:
                raise ConfigError("dataset CSV header does not match its metadata")
            table = np.loadtxt(fh, delimiter=",", ndmin=2)
    except FileNotFoundError:
        raise ConfigError(f"dataset not found: {csv_path}") from None
    except ValueError as exc:
        raise ConfigError(f"corrupt dataset CSV: {exc}") from None
    if table.shape[1] != len(cols) or table.shape[0] % k or not np.all(np.isfinite(table)):
        raise ConfigError("corrupt dataset CSV: bad shape or non-finite values")
    n = table.shape[0] // k
    n_ch = 2 + deg
    pos = 2
    twin_x = table[:, pos:pos + 4].reshape(n, k, 4)
    pos += 4
    twin_y = table[:, pos:pos + 2].reshape(n, k, 2)
    pos += 2
    comm_next = table[:, pos:pos + deg].reshape(n, k, deg)
    pos += deg
    chan = table[:, pos:].reshape(n, k, n_ch, 1 + N_FEATURES)
    return TrainingData(twin_x, twin_y, comm_next, chan[..., 1:].copy(), chan[..., 0] > 0.5, seg, meta)
