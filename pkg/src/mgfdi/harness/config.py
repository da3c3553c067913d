"""Scenario configuration: dataclasses plus a versioned JSON form."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..attack import AttackSpec, AttackTarget, AttackWaveform, COMM_LINK, SENSOR_CURRENT, SENSOR_VOLTAGE
from ..comms import CommGraph
from ..control import DroopConfig, PiGains, default_current_gains, default_voltage_gains
from ..defense import DefenseConfig
from ..errors import ConfigError
from ..plant import DEFAULT_R_LINE, DEFAULT_R_LOAD, ConverterParams

SCHEMA = "mgfdi.scenario/1"


@dataclass(frozen=True)
class NoiseConfig:
    current: float = 0.01  # A, standard deviation
    voltage: float = 0.01  # V
    bus: float = 0.01  # V

    def __post_init__(self):
        if min(self.current, self.voltage, self.bus) < 0:
            raise ConfigError("noise levels must be >= 0")


@dataclass(frozen=True)
class LoadStep:
    t: float
    r_load: float


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    duration: float = 1.0
    dt: float = 20e-6
    t_s: float = 40e-6
    k: int = 4
    converter: ConverterParams = ConverterParams()
    r_line: tuple = DEFAULT_R_LINE
    r_load: float = DEFAULT_R_LOAD
    load_steps: tuple = ()
    droop: DroopConfig = DroopConfig()
    gains_v: PiGains | None = None
    gains_i: PiGains | None = None
    topology: str = "ring"
    noise: NoiseConfig = NoiseConfig()
    defense: DefenseConfig = DefenseConfig()
    detection: bool = True
    mitigation: bool = True
    attacks: tuple = ()
    seed: int = 0
    init: str = "steady"  # or "zero"
    i_l_floor: float = 0.0
    trace_path: str | None = None
    metrics_path: str | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if not (self.dt > 0 and self.t_s > 0):
            raise ConfigError("dt and t_s must be > 0")
        ratio = self.t_s / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("t_s must be an integer multiple of dt")
        if len(self.r_line) != self.k:
            raise ConfigError(f"r_line has {len(self.r_line)} entries for k={self.k}")
        if self.init not in ("steady", "zero"):
            raise ConfigError("init must be 'steady' or 'zero'")
        for step in self.load_steps:
            if not step.t >= 0:
                raise ConfigError(f"load step at negative time {step.t}")
            if not step.r_load > 0:
                raise ConfigError("load-step resistance must be > 0")
        for spec in self.attacks:
            if not spec.waveform.t_start >= 0:
                raise ConfigError(f"attack start at negative time {spec.waveform.t_start}")
        self.graph()  # validates topology and attack ids
        for spec in self.attacks:
            spec.target.channel(self.graph())

    @property
    def substeps(self) -> int:
        return int(round(self.t_s / self.dt))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.t_s))

    def graph(self) -> CommGraph:
        return CommGraph.from_name(self.topology, self.k)

    def voltage_gains(self) -> PiGains:
        return self.gains_v or default_voltage_gains(self.converter.rated_current())

    def current_gains(self) -> PiGains:
        return self.gains_i or default_current_gains()

    def with_overrides(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


# --- JSON ------------------------------------------------------------------

def _num(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unnum(x):
    if x in ("inf", "Infinity"):
        return math.inf
    if x in ("-inf", "-Infinity"):
        return -math.inf
    return x


def attack_to_dict(spec: AttackSpec) -> dict:
    t, w = spec.target, spec.waveform
    if t.kind == COMM_LINK:
        target = {"kind": t.kind, "sender": t.sender + 1, "receiver": t.receiver + 1}
    else:
        target = {"kind": t.kind, "converter": t.converter + 1}
    wave = {"shape": w.shape, "t_start": w.t_start, "t_end": _num(w.t_end)}
    if w.shape == "bias":
        wave["magnitude"] = w.magnitude
    else:
        wave.update(slope=w.slope, cap=_num(w.cap))
    return {"target": target, "waveform": wave}


def attack_from_dict(d: dict) -> AttackSpec:
    """Converter ids in files are 1-based, as in the scenario descriptions."""
    try:
        t, w = d["target"], d["waveform"]
        kind = t["kind"]
        if kind == COMM_LINK:
            target = AttackTarget.comm_link(int(t["sender"]) - 1, int(t["receiver"]) - 1)
        elif kind in (SENSOR_CURRENT, SENSOR_VOLTAGE):
            target = AttackTarget(kind, converter=int(t["converter"]) - 1)
        else:
            raise ConfigError(f"unknown attack target kind {kind!r}")
        t_end = float(_unnum(w.get("t_end", math.inf)))
        if w["shape"] == "bias":
            wave = AttackWaveform.bias(float(w["magnitude"]), float(w["t_start"]), t_end)
        elif w["shape"] == "ramp":
            wave = AttackWaveform.ramp(float(w["slope"]), float(w["t_start"]),
                                       float(_unnum(w.get("cap", math.inf))), t_end)
        else:
            raise ConfigError(f"unknown waveform shape {w['shape']!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed attack entry {d!r}: {exc}") from None
    return AttackSpec(target, wave)


_NESTED = {"converter": ConverterParams, "droop": DroopConfig, "noise": NoiseConfig,
           "defense": DefenseConfig, "gains_v": PiGains, "gains_i": PiGains}


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = {"schema": SCHEMA}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "attacks":
            v = [attack_to_dict(a) for a in v]
        elif f.name == "load_steps":
            v = [{"t": s.t, "r_load": s.r_load} for s in v]
        elif f.name == "r_line":
            v = [float(x) for x in v]
        elif f.name in _NESTED and v is not None:
            v = {kk: _num(vv) for kk, vv in asdict(v).items()}
        out[f.name] = v
    return out


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**{kk: _unnum(vv) for kk, vv in d.items()})
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from None


def config_from_dict(d: dict, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build a config from its JSON form; missing keys fall back to ``base``."""
    if not isinstance(d, dict):
        raise ConfigError("scenario config must be a JSON object")
    schema = d.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r} (expected {SCHEMA!r})")
    names = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - names - {"schema", "scenario"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for key, v in d.items():
        if key in ("schema", "scenario"):
            continue
        if key == "attacks":
            kw[key] = tuple(attack_from_dict(a) for a in v)
        elif key == "load_steps":
            try:
                kw[key] = tuple(LoadStep(float(s["t"]), float(s["r_load"])) for s in v)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"malformed load_steps: {exc}") from None
        elif key == "r_line":
            kw[key] = tuple(float(x) for x in v)
        elif key in _NESTED:
            kw[key] = None if v is None else _build(_NESTED[key], v, key)
        else:
            kw[key] = v
    base = base or ScenarioConfig()
    try:
        return replace(base, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    base = None
    if isinstance(d, dict) and "scenario" in d:
        from .scenarios import builtin_scenario
        base = builtin_scenario(d["scenario"])
    return config_from_dict(d, base)


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=False)


def r_line_array(cfg: ScenarioConfig) -> np.ndarray:
    return np.asarray(cfg.r_line, dtype=float)
