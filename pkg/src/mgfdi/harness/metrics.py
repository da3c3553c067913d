"""Scenario metrics: fluctuation, detection latency, sample error, recovery."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..attack import COMM_LINK
from ..errors import ConfigError
from .config import ScenarioConfig

STEADY_WINDOW = 0.1  # s


def _window(t, t0, t1):
    m = (t >= t0 - 1e-12) & (t < t1 - 1e-12)
    if not m.any():
        raise ConfigError(f"empty metric window [{t0}, {t1})")
    return m


def fluctuation_pct(signal, t=None, window=None) -> float:
    """``100 (max - min) / mean`` over the window (whole signal by default)."""
    x = np.asarray(signal, dtype=float)
    if window is not None:
        x = x[_window(np.asarray(t), *window)]
    if x.size == 0:
        raise ConfigError("empty metric window")
    mean = float(np.mean(x))
    if mean == 0:
        raise ConfigError("fluctuation undefined for a zero-mean window")
    return 100.0 * float(np.max(x) - np.min(x)) / abs(mean)


def sample_error_pct(flags, labels) -> float:
    """``100 (FP + FN) / total`` over every labeled sample."""
    f = np.asarray(flags, bool)
    lab = np.asarray(labels, bool)
    if f.shape != lab.shape:
        raise ConfigError(f"flag shape {f.shape} differs from label shape {lab.shape}")
    if f.size == 0:
        raise ConfigError("no labeled samples")
    return 100.0 * float(np.count_nonzero(f != lab)) / f.size


def confusion(flags, labels) -> dict:
    f = np.asarray(flags, bool)
    lab = np.asarray(labels, bool)
    return {"tp": int(np.count_nonzero(f & lab)), "fp": int(np.count_nonzero(f & ~lab)),
            "fn": int(np.count_nonzero(~f & lab)), "tn": int(np.count_nonzero(~f & ~lab))}


def recovery_deviation_pct(signal, t, pre_window, post_window) -> float:
    x = np.asarray(signal, dtype=float)
    t = np.asarray(t)
    pre = float(np.mean(x[_window(t, *pre_window)]))
    post = float(np.mean(x[_window(t, *post_window)]))
    if pre == 0:
        raise ConfigError("pre-attack mean is zero")
    return 100.0 * abs(post - pre) / abs(pre)


def detection_latency(latched, t, t_start):
    """Seconds from ``t_start`` to the first latched sample, or None if never."""
    latched = np.asarray(latched, bool)
    hit = np.flatnonzero(latched & (np.asarray(t) >= t_start - 1e-12))
    return None if hit.size == 0 else float(t[hit[0]] - t_start)


@dataclass
class AttackMetrics:
    target: str
    converter: int  # 1-based converter whose channel is attacked
    channel: int  # channel index on that converter
    t_start: float
    detection_latency: float | None
    recovery_signal: str
    pre_window: tuple
    post_window: tuple
    recovery_deviation_pct: float
    samples_attacked: int


@dataclass
class Metrics:
    fluctuation_pct: dict
    fluctuation_window: tuple
    attacks: list
    sample_error_pct: float
    confusion: dict
    unlabeled_latched_channels: list = field(default_factory=list)

    def to_json(self) -> str:
        def clean(o):
            if isinstance(o, float) and not math.isfinite(o):
                return None
            if isinstance(o, dict):
                return {k: clean(v) for k, v in o.items()}
            if isinstance(o, (list, tuple)):
                return [clean(v) for v in o]
            return o
        return json.dumps(clean(asdict(self)), indent=2, sort_keys=True) + "\n"


def event_times(cfg: ScenarioConfig) -> list:
    ts = [s.t for s in cfg.load_steps] + [a.waveform.t_start for a in cfg.attacks]
    return sorted(set(ts))


def recovery_windows(cfg: ScenarioConfig, t_start: float, span: float = STEADY_WINDOW):
    """Steady windows just before the attack and just before the next event."""
    later = [e for e in event_times(cfg) if e > t_start + 1e-12]
    t_next = min(later[0], cfg.duration) if later else cfg.duration
    earlier = [e for e in event_times(cfg) if e < t_start - 1e-12]
    pre0 = max(t_start - span, earlier[-1] if earlier else 0.0)
    return (pre0, t_start), (max(t_next - span, t_start), t_next)


def compute_metrics(trace, cfg: ScenarioConfig, window: float = STEADY_WINDOW) -> Metrics:
    t = trace.t
    end = cfg.duration
    fw = (end - window, end + 1e-9)
    fl = {}
    for j in range(trace.k):
        fl[f"i_out_{j + 1}"] = fluctuation_pct(trace.i_out[:, j], t, fw)
        fl[f"i_use_{j + 1}"] = fluctuation_pct(trace.i_use[:, j], t, fw)
    graph = cfg.graph()
    attacks = []
    for spec in cfg.attacks:
        if spec.waveform.t_start >= end:
            continue  # never reached in this run
        conv, ch = spec.target.channel(graph)
        lat = detection_latency(trace.latched[:, conv, ch], t, spec.waveform.t_start)
        # the converter whose control the attack misleads
        pre, post = recovery_windows(cfg, spec.waveform.t_start, window)
        dev = recovery_deviation_pct(trace.i_out[:, conv], t, pre, post)
        name = (f"comm_link {spec.target.sender + 1}->{spec.target.receiver + 1}"
                if spec.target.kind == COMM_LINK else f"{spec.target.kind} {conv + 1}")
        attacks.append(AttackMetrics(name, conv + 1, ch, spec.waveform.t_start, lat, f"i_out_{conv + 1}",
                                     pre, post, dev, int(trace.labels[:, conv, ch].sum())))
    err = sample_error_pct(trace.latched, trace.labels)
    stray = []
    ever_l = trace.latched.any(axis=0)
    ever_lab = trace.labels.any(axis=0)
    for conv, ch in zip(*np.nonzero(ever_l & ~ever_lab)):
        stray.append([int(conv) + 1, int(ch)])
    return Metrics(fl, fw, attacks, err, confusion(trace.latched, trace.labels), stray)
