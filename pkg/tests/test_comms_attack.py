import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgfdi.attack import (AttackSpec, AttackTarget, AttackWaveform, apply_attacks, attack_offset)
from mgfdi.comms import NOTIFICATION, CommBus, CommGraph, average_received, broadcast, inbox_matrix
from mgfdi.errors import ConfigError

RING = CommGraph.ring(4)


def test_ring_topology():
    msgs = broadcast(RING, 2, 1.5, 10)
    assert sorted(m.receiver for m in msgs) == [1, 3]
    assert RING.inbound(0) == [1, 3]
    assert RING.degree == 2
    with pytest.raises(ConfigError):
        broadcast(RING, 7, 1.0, 0)


def test_graph_validation():
    with pytest.raises(ConfigError):
        CommGraph(2, ((0, 0), (1, 0)))
    with pytest.raises(ConfigError):
        CommGraph(3, ((0, 1), (1, 0)))  # converter 2 has no inbound link
    assert CommGraph.full(4).degree == 3
    with pytest.raises(ConfigError):
        CommGraph.from_name("star", 4)


def test_one_sample_delay_and_order():
    bus = CommBus(RING)
    bus.broadcast(3, 1.0, 5)
    bus.broadcast(1, 2.0, 5)
    assert bus.deliver(5) == []
    got = bus.deliver(6)
    assert [m.sender for m in got] == [1, 1, 3, 3]
    assert bus.pending() == 0


def test_inbox_matrix_holds_old_values():
    prev = np.full((4, 2), 7.0)
    bus = CommBus(RING)
    bus.broadcast(0, 3.0, 0)
    bus.broadcast(0, 1.0, 0, kind=NOTIFICATION, channel="current")
    out = inbox_matrix(RING, bus.deliver(1), prev)
    assert out[1, RING.slot(1, 0)] == 3.0 and out[3, RING.slot(3, 0)] == 3.0
    assert out[2].tolist() == [7.0, 7.0]


def test_average_received():
    assert average_received(2.0, [2.0, 2.0]) == 2.0
    assert average_received(1.0, [3.0]) == 2.0
    assert average_received(1.25, []) == 1.25


def test_offsets():
    w = AttackWaveform.bias(1.5, 0.5)
    assert attack_offset(w, 0.49) == 0.0
    assert attack_offset(w, 0.7) == 1.5
    r = AttackWaveform.ramp(2.0, 0.4, cap=3.0)
    assert attack_offset(r, 0.9) == pytest.approx(1.0)
    assert attack_offset(r, 2.5) == 3.0
    assert attack_offset(AttackWaveform.ramp(-2.0, 0.0, cap=1.0), 5.0) == -1.0
    assert attack_offset(AttackWaveform.bias(1.0, 0.1, 0.2), 0.2) == 0.0
    with pytest.raises(ConfigError):
        AttackWaveform.bias(1.0, 0.5, 0.5)
    with pytest.raises(ConfigError):
        AttackWaveform.ramp(1.0, 0.0, cap=-1.0)


def test_no_specs_identity():
    i, v, c = np.array([1.0, 2, 3, 4]), np.array([39.0, 39.1, 39.2, 39.3]), np.arange(8.0).reshape(4, 2)
    i2, v2, c2, lab = apply_attacks([], RING, i, v, c, 0.5)
    assert np.array_equal(i2, i) and np.array_equal(v2, v) and np.array_equal(c2, c)
    assert not lab.any()


def test_scenario_specs_labels():
    spec = AttackSpec(AttackTarget.sensor_current(0), AttackWaveform.bias(1.5, 0.5))
    i = np.full(4, 3.8)
    _, _, _, lab = apply_attacks([spec], RING, i, i, np.zeros((4, 2)), 0.4999)
    assert not lab.any()
    i2, _, _, lab = apply_attacks([spec], RING, i, i, np.zeros((4, 2)), 0.5)
    assert i2[0] == pytest.approx(5.3) and lab[0, 0] and lab.sum() == 1
    coordinated = [AttackSpec(AttackTarget.sensor_current(3), AttackWaveform.bias(1.5, 0.3)),
                   AttackSpec(AttackTarget.comm_link(1, 2), AttackWaveform.ramp(2.0, 0.6, 3.0))]
    _, _, c, lab = apply_attacks(coordinated, RING, i, i, np.zeros((4, 2)), 0.7)
    assert lab[3, 0] and lab[2, 2 + RING.slot(2, 1)] and lab.sum() == 2
    assert c[2, RING.slot(2, 1)] == pytest.approx(0.2)


def test_overlapping_specs_sum():
    specs = [AttackSpec(AttackTarget.sensor_voltage(1), AttackWaveform.bias(1.0, 0.0)),
             AttackSpec(AttackTarget.sensor_voltage(1), AttackWaveform.bias(-1.0, 0.0))]
    _, v, _, lab = apply_attacks(specs, RING, np.zeros(4), np.full(4, 39.0), np.zeros((4, 2)), 1.0)
    assert v[1] == 39.0 and not lab[1, 1]  # offsets cancel: nothing is corrupted


def test_invalid_target():
    with pytest.raises(ConfigError):
        AttackTarget.comm_link(0, 2).channel(RING)  # 0 and 2 are not ring neighbors
    with pytest.raises(ConfigError):
        AttackTarget.sensor_current(9).channel(RING)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 1), st.floats(0, 2), st.integers(0, 3), st.integers(0, 1))
def test_corruption_is_additive(mag, t0, t, conv, kind):
    rng = np.random.default_rng(0)
    i, v, c = rng.normal(size=4), rng.normal(size=4), rng.normal(size=(4, 2))
    target = AttackTarget.sensor_current(conv) if kind == 0 else AttackTarget.comm_link((conv + 1) % 4, conv)
    w = AttackWaveform.bias(mag, t0)
    i2, v2, c2, lab = apply_attacks([AttackSpec(target, w)], RING, i, v, c, t)
    off = attack_offset(w, t)
    ch = target.channel(RING)
    got = i2 if kind == 0 else c2
    ref = i if kind == 0 else c
    idx = conv if kind == 0 else (conv, ch[1] - 2)
    assert got[idx] - ref[idx] == pytest.approx(off)
    assert lab[ch] == (off != 0)
    assert np.array_equal(v2, v)
