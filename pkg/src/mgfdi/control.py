"""Per-converter cascade PI control with droop and average-current sharing.

All discrete elements use the Tustin (bilinear) map. Functions here accept
scalars or numpy arrays; with arrays every converter is stepped at once.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, SimulationFault


@dataclass(frozen=True)
class PiGains:
    kp: float
    ki: float
    u_min: float
    u_max: float

    def __post_init__(self):
        if not self.u_min < self.u_max:
            raise ConfigError(f"u_min ({self.u_min}) must be < u_max ({self.u_max})")
        if self.ki < 0:
            raise ConfigError("ki must be >= 0")


@dataclass
class PiState:
    u_prev: np.ndarray | float = 0.0
    e_prev: np.ndarray | float = 0.0
    saturated: np.ndarray | bool = False


def pi_step(state: PiState, gains: PiGains, e, t_s: float):
    """Incremental Tustin PI with conditional-integration anti-windup.

    ``u = u_prev + kp (e - e_prev) + ki t_s / 2 (e + e_prev)``, clamped to
    ``[u_min, u_max]``. When the unclamped value leaves the band the integral
    increment is dropped for that step.
    """
    if not t_s > 0:
        raise ConfigError("t_s must be > 0")
    e = np.asarray(e, dtype=float) if np.ndim(e) else float(e)
    if not np.all(np.isfinite(e)):
        raise SimulationFault("non-finite error fed to PI controller")
    u_prop = state.u_prev + gains.kp * (e - state.e_prev)
    u_raw = u_prop + 0.5 * gains.ki * t_s * (e + state.e_prev)
    saturated = (u_raw > gains.u_max) | (u_raw < gains.u_min)
    u = np.where(saturated, u_prop, u_raw)
    u = np.clip(u, gains.u_min, gains.u_max)
    if np.ndim(u) == 0:
        u = float(u)
        saturated = bool(saturated)
    return PiState(u_prev=u, e_prev=e, saturated=saturated), u


def lpf_coefficients(cutoff: float, t_s: float):
    wt = cutoff * t_s
    if not (cutoff > 0 and 0 < wt < 2):
        raise ConfigError(f"Tustin low-pass needs 0 < cutoff*t_s < 2, got {wt}")
    return (2.0 - wt) / (2.0 + wt), wt / (2.0 + wt)


def lpf_step(y_prev, x, x_prev, cutoff: float, t_s: float):
    """First-order Tustin low-pass with unit DC gain."""
    a, b = lpf_coefficients(cutoff, t_s)
    return a * y_prev + b * (x + x_prev)


@dataclass(frozen=True)
class DroopConfig:
    v_ref: float = 39.0
    r_d: float = 0.2
    lpf_cutoff: float = 2 * np.pi * 30
    k_share: float = 0.5
    # Integral secondary terms; zero reduces to plain droop + proportional sharing.
    ki_share: float = 10.0
    ki_restore: float = 20.0
    secondary_limit: float = 6.0

    def __post_init__(self):
        if self.r_d < 0:
            raise ConfigError("r_d must be >= 0")
        if not self.lpf_cutoff > 0:
            raise ConfigError("lpf_cutoff must be > 0")
        if self.ki_share < 0 or self.ki_restore < 0:
            raise ConfigError("secondary integral gains must be >= 0")


def droop_reference(cfg: DroopConfig, i_filtered, i_avg):
    """Droop-adjusted voltage reference with proportional sharing correction."""
    return cfg.v_ref - cfg.r_d * i_filtered + cfg.k_share * (i_avg - i_filtered)


@dataclass
class ControlSample:
    i_meas: np.ndarray
    v_meas: np.ndarray
    i_avg: np.ndarray
    v_bus: np.ndarray | float  # each converter's own bus reading
    t_s: float

    def __post_init__(self):
        if not self.t_s > 0:
            raise ConfigError("t_s must be > 0")


def default_current_gains() -> PiGains:
    return PiGains(kp=0.05, ki=50.0, u_min=0.0, u_max=1.0)


def default_voltage_gains(i_rated: float = 150.0 / 39.0) -> PiGains:
    return PiGains(kp=0.5, ki=200.0, u_min=-2 * i_rated, u_max=2 * i_rated)


@dataclass
class ControllerState:
    """Everything the k controllers remember between control periods."""

    pi_v: PiState
    pi_i: PiState
    i_f: np.ndarray
    i_meas_prev: np.ndarray
    share_int: np.ndarray
    share_err_prev: np.ndarray
    restore_int: np.ndarray
    restore_err_prev: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "ControllerState":
        z = np.zeros(k)
        return cls(PiState(z.copy(), z.copy(), np.zeros(k, bool)),
                   PiState(z.copy(), z.copy(), np.zeros(k, bool)),
                   z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy())

    def copy(self) -> "ControllerState":
        return ControllerState(
            replace(self.pi_v), replace(self.pi_i), self.i_f.copy(), self.i_meas_prev.copy(),
            self.share_int.copy(), self.share_err_prev.copy(),
            self.restore_int.copy(), self.restore_err_prev.copy())


@dataclass
class ControlOutput:
    duty: np.ndarray
    v_ref_k: np.ndarray
    i_ref: np.ndarray
    i_f: np.ndarray


def _tustin_integrate(acc, err, err_prev, ki, t_s, limit):
    return np.clip(acc + 0.5 * ki * t_s * (err + err_prev), -limit, limit)


def control_step(state: ControllerState, cfg: DroopConfig, gains_v: PiGains, gains_i: PiGains,
                 sample: ControlSample):
    """One control period for every converter; returns ``(state, ControlOutput)``.

    Order: filter the current, build the droop/sharing/restoration voltage
    reference, run the voltage PI to get a current reference, then the
    current PI to get the duty cycle.
    """
    i_meas = np.asarray(sample.i_meas, dtype=float)
    v_meas = np.asarray(sample.v_meas, dtype=float)
    i_avg = np.asarray(sample.i_avg, dtype=float)
    if not (np.all(np.isfinite(i_meas)) and np.all(np.isfinite(v_meas))
            and np.all(np.isfinite(i_avg)) and np.all(np.isfinite(sample.v_bus))):
        raise SimulationFault("non-finite control sample")
    t_s = sample.t_s
    i_f = lpf_step(state.i_f, i_meas, state.i_meas_prev, cfg.lpf_cutoff, t_s)

    share_err = i_avg - i_f
    share_int = _tustin_integrate(state.share_int, share_err, state.share_err_prev,
                                  cfg.ki_share, t_s, cfg.secondary_limit)
    restore_err = np.broadcast_to(cfg.v_ref - np.asarray(sample.v_bus, dtype=float), i_f.shape).copy()
    restore_int = _tustin_integrate(state.restore_int, restore_err, state.restore_err_prev,
                                    cfg.ki_restore, t_s, cfg.secondary_limit)
    v_ref_k = droop_reference(cfg, i_f, i_avg) + share_int + restore_int

    pi_v, i_ref = pi_step(state.pi_v, gains_v, v_ref_k - v_meas, t_s)
    pi_i, duty = pi_step(state.pi_i, gains_i, i_ref - i_meas, t_s)
    if not np.all(np.isfinite(duty)):
        raise SimulationFault("non-finite duty command")
    new = ControllerState(pi_v, pi_i, i_f, i_meas.copy(), share_int, share_err,
                          restore_int, restore_err)
    return new, ControlOutput(duty=np.asarray(duty), v_ref_k=v_ref_k, i_ref=np.asarray(i_ref), i_f=i_f)


@dataclass
class OperatingPoint:
    i: np.ndarray  # steady output (= inductor) currents
    v_c: np.ndarray
    v_bus: float
    duty: np.ndarray
    share_int: np.ndarray
    restore_int: np.ndarray


def averaging_matrix(inbound: list) -> np.ndarray:
    """Row k averages converter k with the senders listed in ``inbound[k]``."""
    k = len(inbound)
    a = np.zeros((k, k))
    for r, senders in enumerate(inbound):
        idx = [r, *senders]
        a[r, idx] = 1.0 / len(idx)
    return a


def closed_loop_operating_point(cfg: DroopConfig, v_in, r_line, r_load: float,
                                inbound: list) -> OperatingPoint:
    """DC equilibrium of plant plus control with every derivative zero.

    Unknowns ``[i, v_bus, share_int, restore]``. The share integrals sum to
    zero (their total is conserved from a zero start for symmetric
    averaging), and the restore integral is common to all converters since
    its input is. Solved in the least-squares sense because the consensus
    rows are rank deficient by one; the residual is checked.
    """
    r = np.asarray(r_line, dtype=float)
    k = r.size
    avg = averaging_matrix(inbound)
    n = 2 * k + 2
    iv, ib, isg, irs = slice(0, k), k, slice(k + 1, 2 * k + 1), 2 * k + 1
    rows, rhs = [], []

    def row():
        rows.append(np.zeros(n))
        return rows[-1]

    eye = np.eye(k)
    for j in range(k):
        # v_bus + r i = V - r_d i + k_s (avg - i) + sigma + rho
        a = row()
        a[ib] = 1.0
        a[iv] = r[j] * eye[j] + cfg.r_d * eye[j] - cfg.k_share * (avg[j] - eye[j])
        a[k + 1 + j] = -1.0
        a[irs] = -1.0
        rhs.append(cfg.v_ref)
    a = row()
    a[iv] = 1.0
    a[ib] = -1.0 / r_load
    rhs.append(0.0)
    if cfg.ki_share > 0:
        for j in range(k):
            a = row()
            a[iv] = avg[j] - eye[j]
            rhs.append(0.0)
        a = row()
        a[isg] = 1.0
        rhs.append(0.0)
    else:
        for j in range(k):
            a = row()
            a[k + 1 + j] = 1.0
            rhs.append(0.0)
    a = row()
    if cfg.ki_restore > 0:
        a[ib] = 1.0
        rhs.append(cfg.v_ref)
    else:
        a[irs] = 1.0
        rhs.append(0.0)
    m, b = np.array(rows), np.array(rhs)
    sol, *_ = np.linalg.lstsq(m, b, rcond=None)
    if np.linalg.norm(m @ sol - b) > 1e-8 * max(1.0, np.linalg.norm(b)):
        raise ConfigError("no consistent closed-loop operating point")
    i = sol[iv]
    v_bus = float(sol[ib])
    v_c = v_bus + r * i
    duty = v_c / np.asarray(v_in, dtype=float)
    if np.any(duty < 0) or np.any(duty > 1) or np.any(i < 0):
        raise ConfigError("operating point outside the converters' range")
    return OperatingPoint(i, v_c, v_bus, duty, sol[isg], np.full(k, sol[irs]))


def controller_at(op: OperatingPoint) -> ControllerState:
    """Controller memory consistent with sitting at ``op``."""
    k = op.i.size
    z = np.zeros(k)
    return ControllerState(PiState(op.i.copy(), z.copy(), np.zeros(k, bool)),
                           PiState(op.duty.copy(), z.copy(), np.zeros(k, bool)),
                           op.i.copy(), op.i.copy(), op.share_int.copy(), z.copy(),
                           op.restore_int.copy(), z.copy())
