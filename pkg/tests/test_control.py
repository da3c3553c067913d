import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgfdi.control import (ControllerState, ControlSample, DroopConfig, PiGains, PiState,
                           closed_loop_operating_point, control_step, controller_at,
                           default_current_gains, default_voltage_gains, droop_reference,
                           lpf_coefficients, lpf_step, pi_step)
from mgfdi.comms import CommGraph
from mgfdi.errors import ConfigError, SimulationFault
from mgfdi.plant import DEFAULT_R_LINE


def test_pi_zero_error_stays_zero():
    s = PiState()
    g = PiGains(1.0, 100.0, -10, 10)
    for _ in range(20):
        s, u = pi_step(s, g, 0.0, 1e-3)
        assert u == 0.0


def test_pi_hand_recurrence():
    g = PiGains(kp=1.0, ki=100.0, u_min=-10, u_max=10)
    s, u = pi_step(PiState(), g, 1.0, 1e-3)
    assert u == pytest.approx(1.05, abs=1e-15)
    s, u = pi_step(s, g, 1.0, 1e-3)
    assert u == pytest.approx(1.15, abs=1e-15)


def test_pi_clamp_no_windup():
    g = PiGains(kp=2.0, ki=500.0, u_min=0.0, u_max=0.3)
    s = PiState()
    for _ in range(200):
        s, u = pi_step(s, g, 5.0, 1e-3)
        assert u == 0.3
    assert s.saturated
    # once the error reverses the output leaves the clamp immediately
    s, u = pi_step(s, g, -0.05, 1e-3)
    assert u < 0.3


def test_pi_rejects_bad_input():
    with pytest.raises(SimulationFault):
        pi_step(PiState(), PiGains(1, 1, -1, 1), np.nan, 1e-3)
    with pytest.raises(ConfigError):
        PiGains(1, 1, 1, 1)
    with pytest.raises(ConfigError):
        PiGains(1, -1, 0, 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_pi_output_always_in_band(errors):
    g = PiGains(0.3, 80.0, -2.0, 5.0)
    s = PiState()
    for e in errors:
        s, u = pi_step(s, g, e, 4e-5)
        assert g.u_min <= u <= g.u_max


def test_lpf_unit_dc_gain():
    y = x_prev = 0.0
    for _ in range(5000):
        y = lpf_step(y, 2.5, x_prev, 2 * np.pi * 30, 4e-5)
        x_prev = 2.5
    assert y == pytest.approx(2.5, rel=1e-9)


def test_lpf_step_response_time_constant():
    w, ts = 2 * np.pi * 100, 1e-6
    y, x_prev, t_cross = 0.0, 0.0, None
    for n in range(1, 20000):
        y = lpf_step(y, 1.0, x_prev, w, ts)
        x_prev = 1.0
        if t_cross is None and y >= 1 - np.exp(-1):
            t_cross = n * ts
    assert t_cross == pytest.approx(1 / w, rel=0.01)


def test_lpf_coefficients_exact():
    a, b = lpf_coefficients(1.0, 1.0)
    assert a == 1 / 3 and b == 1 / 3
    with pytest.raises(ConfigError):
        lpf_coefficients(2.0, 1.0)


def test_droop_reference():
    assert droop_reference(DroopConfig(r_d=0.0), 3.0, 3.0) == 39.0
    assert droop_reference(DroopConfig(k_share=0.0), 3.85, 0.0) == pytest.approx(38.23)
    cfg = DroopConfig()
    assert droop_reference(cfg, 3.0, 3.5) > droop_reference(cfg, 3.0, 3.0)


def test_control_step_equilibrium_keeps_duty():
    graph = CommGraph.ring(4)
    cfg = DroopConfig()
    op = closed_loop_operating_point(cfg, 80.0, np.array(DEFAULT_R_LINE), 2.54,
                                     [graph.inbound(r) for r in range(4)])
    st0 = controller_at(op)
    sample = ControlSample(op.i, op.v_c, op.i, np.full(4, op.v_bus), 4e-5)
    st1, out = control_step(st0, cfg, default_voltage_gains(), default_current_gains(), sample)
    np.testing.assert_allclose(out.duty, op.duty, rtol=1e-12)
    np.testing.assert_allclose(out.v_ref_k, op.v_c, rtol=1e-12)


def test_control_step_bounds():
    st0 = ControllerState.zeros(3)
    gv = default_voltage_gains()
    rng = np.random.default_rng(0)
    for _ in range(300):
        sample = ControlSample(rng.normal(0, 20, 3), rng.normal(39, 20, 3), rng.normal(0, 5, 3),
                               rng.normal(39, 5, 3), 4e-5)
        st0, out = control_step(st0, DroopConfig(), gv, default_current_gains(), sample)
        assert np.all((out.duty >= 0) & (out.duty <= 1))
        assert np.all((out.i_ref >= gv.u_min) & (out.i_ref <= gv.u_max))


def test_control_step_rejects_nan():
    with pytest.raises(SimulationFault):
        control_step(ControllerState.zeros(2), DroopConfig(), default_voltage_gains(),
                     default_current_gains(), ControlSample(np.array([1.0, np.nan]), np.ones(2),
                                                            np.ones(2), 39.0, 4e-5))


def test_operating_point_shares_and_restores():
    graph = CommGraph.ring(4)
    op = closed_loop_operating_point(DroopConfig(), 80.0, np.array(DEFAULT_R_LINE), 2.54,
                                     [graph.inbound(r) for r in range(4)])
    assert op.v_bus == pytest.approx(39.0)
    np.testing.assert_allclose(op.i, op.i[0], rtol=1e-12)
    assert op.i.sum() == pytest.approx(39.0 / 2.54)
    assert op.share_int.sum() == pytest.approx(0.0, abs=1e-12)


def test_operating_point_plain_droop():
    graph = CommGraph.ring(4)
    cfg = DroopConfig(ki_share=0.0, ki_restore=0.0, k_share=0.0)
    op = closed_loop_operating_point(cfg, 80.0, np.array(DEFAULT_R_LINE), 2.54,
                                     [graph.inbound(r) for r in range(4)])
    # plain droop: v_c = 39 - r_d i and v_c = v_bus + r i
    np.testing.assert_allclose(op.v_c, 39.0 - 0.2 * op.i, rtol=1e-12)
    assert op.v_bus < 39.0 * 0.96
