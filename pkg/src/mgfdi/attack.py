"""False-data-injection waveforms and their injection onto channels.

Converter ids here are 0-based. A converter's channels are ordered
``[current sensor, voltage sensor, inbound link 0, inbound link 1, ...]``
with inbound links sorted by sender id (see :class:`~mgfdi.comms.CommGraph`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .comms import CommGraph
from .errors import ConfigError

SENSOR_CURRENT = "sensor_current"
SENSOR_VOLTAGE = "sensor_voltage"
COMM_LINK = "comm_link"

CH_CURRENT = 0
CH_VOLTAGE = 1
N_SENSOR_CHANNELS = 2


@dataclass(frozen=True)
class AttackTarget:
    kind: str
    converter: int = -1
    sender: int = -1
    receiver: int = -1

    @classmethod
    def sensor_current(cls, converter: int) -> "AttackTarget":
        return cls(SENSOR_CURRENT, converter=converter)

    @classmethod
    def sensor_voltage(cls, converter: int) -> "AttackTarget":
        return cls(SENSOR_VOLTAGE, converter=converter)

    @classmethod
    def comm_link(cls, sender: int, receiver: int) -> "AttackTarget":
        return cls(COMM_LINK, sender=sender, receiver=receiver)

    def channel(self, graph: CommGraph) -> tuple:
        """``(converter, channel index)`` of the corrupted value."""
        if self.kind == SENSOR_CURRENT:
            self._check_id(self.converter, graph.k)
            return self.converter, CH_CURRENT
        if self.kind == SENSOR_VOLTAGE:
            self._check_id(self.converter, graph.k)
            return self.converter, CH_VOLTAGE
        if self.kind == COMM_LINK:
            return self.receiver, N_SENSOR_CHANNELS + graph.slot(self.receiver, self.sender)
        raise ConfigError(f"unknown attack target kind {self.kind!r}")

    @staticmethod
    def _check_id(i, k):
        if not 0 <= i < k:
            raise ConfigError(f"converter id {i} outside 0..{k - 1}")


@dataclass(frozen=True)
class AttackWaveform:
    shape: str
    t_start: float
    t_end: float = math.inf
    magnitude: float = 0.0
    slope: float = 0.0
    cap: float = math.inf

    def __post_init__(self):
        if self.shape not in ("bias", "ramp"):
            raise ConfigError(f"unknown waveform shape {self.shape!r}")
        if not self.t_start < self.t_end:
            raise ConfigError("t_start must be < t_end")
        if self.cap < 0:
            raise ConfigError("ramp cap must be >= 0")

    @classmethod
    def bias(cls, magnitude, t_start, t_end=math.inf):
        return cls("bias", t_start, t_end, magnitude=magnitude)

    @classmethod
    def ramp(cls, slope, t_start, cap=math.inf, t_end=math.inf):
        return cls("ramp", t_start, t_end, slope=slope, cap=cap)


@dataclass(frozen=True)
class AttackSpec:
    target: AttackTarget
    waveform: AttackWaveform


def attack_offset(w: AttackWaveform, t: float) -> float:
    if t < w.t_start or t >= w.t_end:
        return 0.0
    if w.shape == "bias":
        return w.magnitude
    # cap bounds the magnitude; the sign follows the slope
    return math.copysign(min(abs(w.slope) * (t - w.t_start), w.cap), w.slope)


def offset_matrix(specs, graph: CommGraph, t: float, n_channels: int) -> np.ndarray:
    """Summed offsets as a ``(k, n_channels)`` array."""
    out = np.zeros((graph.k, n_channels))
    for spec in specs:
        k, ch = spec.target.channel(graph)
        out[k, ch] += attack_offset(spec.waveform, t)
    return out


def apply_attacks(specs, graph: CommGraph, i_meas, v_meas, comm, t: float):
    """Add attack offsets to sensor readings and received link values.

    ``comm`` is the ``(k, degree)`` inbox matrix. Returns
    ``(i, v, comm, labels)`` with ``labels`` a ``(k, 2 + degree)`` bool array.
    Channels no spec touches are returned unchanged.
    """
    comm = np.asarray(comm, dtype=float)
    n_ch = N_SENSOR_CHANNELS + comm.shape[1]
    if not specs:
        return (np.array(i_meas, dtype=float), np.array(v_meas, dtype=float), comm.copy(),
                np.zeros((graph.k, n_ch), dtype=bool))
    off = offset_matrix(specs, graph, t, n_ch)
    labels = off != 0.0
    i = np.array(i_meas, dtype=float)
    v = np.array(v_meas, dtype=float)
    c = comm.copy()
    # only touch labelled entries so untargeted channels stay bit-identical
    rows = labels[:, CH_CURRENT]
    i[rows] = i[rows] + off[rows, CH_CURRENT]
    rows = labels[:, CH_VOLTAGE]
    v[rows] = v[rows] + off[rows, CH_VOLTAGE]
    mask = labels[:, N_SENSOR_CHANNELS:]
    c[mask] = c[mask] + off[:, N_SENSOR_CHANNELS:][mask]
    return i, v, c, labels


def validate_specs(specs, graph: CommGraph):
    for spec in specs:
        spec.target.channel(graph)
