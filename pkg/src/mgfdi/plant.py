"""Averaged electrical model of k parallel buck converters on a shared DC bus.

Each converter is a buck stage (inductor + output capacitor) connected to the
bus through its own line resistor; the bus feeds a single resistive load.
The switching ripple is averaged out, so the state per converter is just
``(i_l, v_c)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, SimulationFault

# Stand-in for an open-circuited bus.
R_OPEN = 1e12


@dataclass(frozen=True)
class ConverterParams:
    """Per-converter hardware values (defaults: 80 V -> 39 V, 150 W buck)."""

    v_in: float = 80.0
    l_buck: float = 2e-3
    c_buck: float = 100e-6
    f_s: float = 25e3
    p_rated: float = 150.0

    def __post_init__(self):
        for name in ("v_in", "l_buck", "c_buck", "f_s", "p_rated"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"ConverterParams.{name} must be > 0, got {value}")

    def rated_current(self, v_out: float = 39.0) -> float:
        return self.p_rated / v_out


@dataclass
class ConverterState:
    """Inductor currents and capacitor voltages, one entry per converter."""

    i_l: np.ndarray
    v_c: np.ndarray

    def copy(self) -> "ConverterState":
        return ConverterState(self.i_l.copy(), self.v_c.copy())

    @classmethod
    def zeros(cls, k: int) -> "ConverterState":
        return cls(np.zeros(k), np.zeros(k))


@dataclass
class NetworkParams:
    r_line: np.ndarray
    r_load: float

    def __post_init__(self):
        self.r_line = np.asarray(self.r_line, dtype=float)
        if self.r_line.ndim != 1 or self.r_line.size < 1:
            raise ConfigError("r_line must be a non-empty 1-D sequence")
        if not np.all(self.r_line > 0):
            raise ConfigError(f"all line resistances must be > 0, got {self.r_line}")
        if not self.r_load > 0:
            raise ConfigError(f"r_load must be > 0, got {self.r_load}")

    @property
    def k(self) -> int:
        return self.r_line.size

    def with_load(self, r_load: float) -> "NetworkParams":
        return NetworkParams(self.r_line.copy(), r_load)


@dataclass
class PlantMeasurement:
    """What the sensors would read: converter voltages, branch currents, bus."""

    v_k: np.ndarray
    i_k: np.ndarray
    v_bus: float
    sample_index: int = 0


@dataclass(frozen=True)
class StackedParams:
    """Converter parameters laid out as arrays for vectorized stepping."""

    v_in: np.ndarray
    l_buck: np.ndarray
    c_buck: np.ndarray
    f_s: np.ndarray

    @classmethod
    def from_params(cls, params: Sequence[ConverterParams]) -> "StackedParams":
        return cls(
            v_in=np.array([p.v_in for p in params], dtype=float),
            l_buck=np.array([p.l_buck for p in params], dtype=float),
            c_buck=np.array([p.c_buck for p in params], dtype=float),
            f_s=np.array([p.f_s for p in params], dtype=float),
        )


def _stacked(params) -> StackedParams:
    if isinstance(params, StackedParams):
        return params
    return StackedParams.from_params(params)


def solve_bus(v_c, net: NetworkParams):
    """Nodal solution of the resistive network for given capacitor voltages.

    Returns ``(v_bus, i_out)`` where ``i_out[j]`` flows from converter j into
    the bus.
    """
    v_c = np.asarray(v_c, dtype=float)
    if v_c.shape != net.r_line.shape:
        raise ConfigError(f"expected {net.k} capacitor voltages, got shape {v_c.shape}")
    if not np.all(np.isfinite(v_c)):
        raise SimulationFault("non-finite capacitor voltage passed to solve_bus")
    g = 1.0 / net.r_line
    v_bus = float(np.dot(g, v_c) / (1.0 / net.r_load + g.sum()))
    i_out = (v_c - v_bus) * g
    return v_bus, i_out


def plant_step(state: ConverterState, duties, params, net: NetworkParams, dt: float,
               step: int | None = None, i_l_floor: float = 0.0):
    """Advance all converters by one semi-implicit Euler step of length ``dt``.

    The inductor current is updated first and the capacitor update uses the
    new value. ``i_l_floor`` models the freewheeling diode (no reverse
    inductor current); pass ``-np.inf`` for a synchronous stage.
    """
    p = _stacked(params)
    if not dt > 0:
        raise ConfigError(f"dt must be > 0, got {dt}")
    if dt > 1.0 / p.f_s.min() * (1 + 1e-12):
        raise ConfigError(f"dt={dt} exceeds one switching period")
    d = np.asarray(duties, dtype=float)
    _, i_out = solve_bus(state.v_c, net)
    i_l = state.i_l + dt * (d * p.v_in - state.v_c) / p.l_buck
    np.maximum(i_l, i_l_floor, out=i_l)
    v_c = state.v_c + dt * (i_l - i_out) / p.c_buck
    if not (np.all(np.isfinite(v_c)) and np.all(np.isfinite(i_l))):
        raise SimulationFault("plant state became non-finite", step)
    if np.any(np.abs(v_c) > 10.0 * p.v_in):
        raise SimulationFault("capacitor voltage diverged beyond 10x input voltage", step)
    new = ConverterState(i_l, v_c)
    v_bus, i_k = solve_bus(v_c, net)
    return new, PlantMeasurement(v_k=v_c.copy(), i_k=i_k, v_bus=v_bus,
                                 sample_index=0 if step is None else step)


def stored_energy(state: ConverterState, params) -> float:
    p = _stacked(params)
    return float(np.sum(0.5 * p.l_buck * state.i_l ** 2 + 0.5 * p.c_buck * state.v_c ** 2))


def dc_steady_state_oracle(params, net: NetworkParams, duties=None, v_refs=None) -> PlantMeasurement:
    """Steady state of the network with all derivatives zero.

    Exactly one of ``duties`` (then ``v_c = d * v_in``) or ``v_refs``
    (regulated converter voltages) must be given. Solved as a dense linear
    system in ``[v_bus, i_out...]`` rather than the closed form used by
    :func:`solve_bus`, so the two can check each other.
    """
    if (duties is None) == (v_refs is None):
        raise ConfigError("give exactly one of duties or v_refs")
    k = net.k
    if v_refs is None:
        p = _stacked(params)
        v_c = np.asarray(duties, dtype=float) * p.v_in
    else:
        v_c = np.asarray(v_refs, dtype=float)
    if v_c.shape != (k,):
        raise ConfigError(f"expected {k} inputs, got shape {v_c.shape}")
    a = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    # rows 0..k-1: r_j * i_j + v_bus = v_c_j ; row k: sum(i) - v_bus / R = 0
    a[:k, 0] = 1.0
    a[np.arange(k), np.arange(k) + 1] = net.r_line
    rhs[:k] = v_c
    a[k, 1:] = 1.0
    a[k, 0] = -1.0 / net.r_load
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SimulationFault(f"singular network: {exc}") from None
    return PlantMeasurement(v_k=v_c.copy(), i_k=sol[1:], v_bus=float(sol[0]))


DEFAULT_R_LINE = (0.7, 0.6, 0.5, 0.4)
DEFAULT_R_LOAD = 2.54


def default_network() -> NetworkParams:
    return NetworkParams(np.array(DEFAULT_R_LINE), DEFAULT_R_LOAD)
