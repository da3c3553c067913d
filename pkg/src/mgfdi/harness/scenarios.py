"""The four built-in attack scenarios (converter ids 1-based in names, 0-based in code)."""
from __future__ import annotations

from ..attack import AttackSpec, AttackTarget, AttackWaveform
from ..errors import ConfigError
from ..plant import DEFAULT_R_LOAD
from .config import LoadStep, ScenarioConfig

DEFAULT_BIAS = 1.5  # A on a current sensor
DEFAULT_RAMP_SLOPE = 2.0  # A/s on a link
DEFAULT_RAMP_CAP = 3.0  # A
LOAD_STEP_FACTOR = 1.25


def scenario_1(**kw) -> ScenarioConfig:
    """Load steps at 0.2 s and 0.85 s around a current-sensor bias on converter 1 at 0.5 s."""
    return ScenarioConfig(
        name="scenario1",
        load_steps=(LoadStep(0.2, DEFAULT_R_LOAD / LOAD_STEP_FACTOR), LoadStep(0.85, DEFAULT_R_LOAD)),
        attacks=(AttackSpec(AttackTarget.sensor_current(0), AttackWaveform.bias(DEFAULT_BIAS, 0.5)),),
        **kw)


def scenario_2(**kw) -> ScenarioConfig:
    """Current-sensor bias on converter 1 at 0.3 s, then on converter 3 at 0.6 s."""
    return ScenarioConfig(
        name="scenario2",
        attacks=(AttackSpec(AttackTarget.sensor_current(0), AttackWaveform.bias(DEFAULT_BIAS, 0.3)),
                 AttackSpec(AttackTarget.sensor_current(2), AttackWaveform.bias(DEFAULT_BIAS, 0.6))),
        **kw)


def scenario_3(**kw) -> ScenarioConfig:
    """Capped ramp on the link carrying converter 3's current to converter 4, from 0.4 s."""
    return ScenarioConfig(
        name="scenario3",
        attacks=(AttackSpec(AttackTarget.comm_link(2, 3),
                            AttackWaveform.ramp(DEFAULT_RAMP_SLOPE, 0.4, DEFAULT_RAMP_CAP)),),
        **kw)


def scenario_4(**kw) -> ScenarioConfig:
    """Coordinated: sensor bias on converter 4 at 0.3 s and a ramp on link 2 -> 3 at 0.6 s."""
    return ScenarioConfig(
        name="scenario4",
        attacks=(AttackSpec(AttackTarget.sensor_current(3), AttackWaveform.bias(DEFAULT_BIAS, 0.3)),
                 AttackSpec(AttackTarget.comm_link(1, 2),
                            AttackWaveform.ramp(DEFAULT_RAMP_SLOPE, 0.6, DEFAULT_RAMP_CAP))),
        **kw)


def normal_operation(**kw) -> ScenarioConfig:
    """No load change, no attack."""
    return ScenarioConfig(name="normal", **kw)


BUILTIN = {1: scenario_1, 2: scenario_2, 3: scenario_3, 4: scenario_4}


def builtin_scenario(which, **kw) -> ScenarioConfig:
    try:
        factory = BUILTIN[int(which)]
    except (KeyError, ValueError, TypeError):
        raise ConfigError(f"unknown built-in scenario {which!r} (expected 1-4)") from None
    return factory(**kw)
