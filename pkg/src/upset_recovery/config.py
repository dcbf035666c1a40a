"""INI configuration files for scenarios.

Sections ``[vehicle]``, ``[sim]``, ``[disturbance]``, ``[gains]``, ``[allocator]``,
``[scenario]`` and ``[recovery]``; every key is optional and falls back to the
dataclass default. Vectors are written as comma- or space-separated numbers.
Unknown sections or keys are rejected so that typos do not pass silently.

Example::

    [allocator]
    mode = p1
    w = 1e4, 1e4, 1e2, 4

    [scenario]
    thrust_axis = -0.2, 0.2, 0.98
    omega = -15, 15, 0
"""

from __future__ import annotations

import configparser
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .allocator import AllocatorConfig, Mode
from .controller import ControlGains
from .dynamics import DisturbanceModel
from .harness import InitialStateSpec, RecoveryCriterion, ScenarioConfig, SimConfig
from .vehicle import VehicleParams


def _floats(text: str) -> tuple[float, ...]:
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValueError("empty value")
    return tuple(float(p) for p in parts)


def _scalar(text: str) -> float:
    vals = _floats(text)
    if len(vals) != 1:
        raise ValueError(f"expected a single number, got {text!r}")
    return vals[0]


def _vector(n: int):
    def parse(text: str) -> tuple[float, ...]:
        vals = _floats(text)
        if len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {text!r}")
        return vals

    return parse


def _optional_vector(n: int):
    def parse(text: str):
        if text.strip().lower() in ("random", "none", ""):
            return None
        return _vector(n)(text)

    return parse


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_int(text: str):
    low = text.strip().lower()
    if low in ("none", "", "0"):
        return None
    return int(low)


def _deg(text: str) -> float:
    return math.radians(_scalar(text))


def _diag(n: int):
    return lambda text: _vector(n)(text)


# key -> (dataclass field, parser)
_VEHICLE = {
    "mass": ("mass", _scalar),
    "inertia_diag": ("inertia_diag", _vector(3)),
    "arm_length": ("arm_length", _scalar),
    "arm_angle_deg": ("arm_angle", _deg),
    "sigma": ("torque_thrust_ratio", _scalar),
    "spin_signs": ("rotor_spin_signs", _vector(4)),
    "u_min": ("u_min", _vector(4)),
    "u_max": ("u_max", _vector(4)),
    "gravity": ("gravity", _scalar),
}
_SIM = {
    "dt_dynamics": ("dt_dynamics", _scalar),
    "dt_control": ("dt_control", _scalar),
    "duration": ("duration", _scalar),
}
_DISTURBANCE = {
    "drag_linear": ("drag_coeff_linear", _vector(3)),
    "rotational_drag": ("rotational_drag", _vector(3)),
    "rotor_inertia": ("rotor_inertia", _scalar),
    "actuator_tau": ("actuator_tau", _scalar),
    "drag_enabled": ("drag_enabled", _bool),
    "gyro_enabled": ("gyro_enabled", _bool),
    "actuator_lag_enabled": ("actuator_lag_enabled", _bool),
}
_GAINS = {
    "kp_pos": ("kp_pos", _diag(3)),
    "kp_vel": ("kp_vel", _diag(3)),
    "ki_vel": ("ki_vel", _diag(3)),
    "kp_att": ("kp_att", _scalar),
    "kp_rate": ("kp_rate", _diag(3)),
    "theta1_deg": ("theta1", _deg),
    "theta2_deg": ("theta2", _deg),
    "integrator_limit": ("integrator_limit", _vector(3)),
    "ff_enabled": ("ff_enabled", _bool),
    "ff_cutoff_hz": ("ff_cutoff_hz", _scalar),
}
_ALLOCATOR = {
    "mode": ("mode", lambda s: Mode(s.strip().lower())),
    "w": ("W", _vector(4)),
    "lambda": ("lam", _scalar),
    "gamma": ("gamma", _scalar),
    "t_h": ("t_h", _scalar),
    "omega_tilde_max": ("omega_tilde_max", _scalar),
    "qp_max_iter": ("qp_max_iter", lambda s: int(s)),
    "qp_tol": ("qp_tol", _scalar),
    "failed_rotor": ("failed_rotor", _optional_int),
}
_INITIAL = {
    "position": ("position", _vector(3)),
    "velocity": ("velocity", _vector(3)),
    "thrust_axis": ("thrust_axis", _optional_vector(3)),
    "omega": ("omega", _optional_vector(3)),
    "omega_max": ("omega_max", _vector(3)),
}
_SCENARIO = {
    "xi_ref": ("xi_ref", _vector(3)),
    "failure_time": ("failure_time", _scalar),
    "rng_seed": ("rng_seed", lambda s: int(s)),
    "n_des": ("n_des_override", _optional_vector(3)),
}
_RECOVERY = {
    "attitude_deg": ("attitude_deg", _scalar),
    "velocity_band": ("velocity_band", _scalar),
    "hold": ("hold", _scalar),
}

SECTIONS = ("vehicle", "sim", "disturbance", "gains", "allocator", "scenario", "recovery")


def _apply(obj, table: dict, section: configparser.SectionProxy | None, extra: set[str] = frozenset()):
    if section is None:
        return obj
    updates = {}
    for key, text in section.items():
        if key in extra:
            continue
        if key not in table:
            raise KeyError(f"unknown key [{section.name}] {key}; known: {', '.join(sorted(table) + sorted(extra))}")
        name, parse = table[key]
        try:
            updates[name] = parse(text)
        except ValueError as exc:
            raise ValueError(f"[{section.name}] {key}: {exc}") from None
    return replace(obj, **updates) if updates else obj


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Scenario built from INI text on top of ``base`` (defaults if omitted)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    cp.read_string(text)
    for name in cp.sections():
        if name not in SECTIONS:
            raise KeyError(f"unknown section [{name}]; known: {', '.join(SECTIONS)}")
    get = lambda name: cp[name] if cp.has_section(name) else None  # noqa: E731

    cfg = base or ScenarioConfig()
    scenario = get("scenario")
    initial = _apply(cfg.initial, _INITIAL, scenario, extra=set(_SCENARIO))
    cfg = _apply(cfg, _SCENARIO, scenario, extra=set(_INITIAL))
    return replace(
        cfg,
        vehicle=_apply(cfg.vehicle, _VEHICLE, get("vehicle")),
        sim=_apply(cfg.sim, _SIM, get("sim")),
        disturbance=_apply(cfg.disturbance, _DISTURBANCE, get("disturbance")),
        gains=_apply(cfg.gains, _GAINS, get("gains")),
        allocator=_apply(cfg.allocator, _ALLOCATOR, get("allocator")),
        initial=initial,
        recovery=_apply(cfg.recovery, _RECOVERY, get("recovery")),
    )


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base)


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Mode):
        return value.value
    if isinstance(value, (tuple, list, np.ndarray)):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: ScenarioConfig) -> str:
    """INI text that ``parse_config`` maps back to ``cfg``."""
    def section(obj, table, skip=()):
        lines = []
        for key, (name, parse) in table.items():
            if key in skip:
                continue
            value = getattr(obj, name)
            if parse is _deg:
                value = math.degrees(value)
            if key == "failed_rotor" and value is None:
                value = 0
            lines.append(f"{key} = {_fmt(value)}")
        return lines

    out = []
    for name, obj, table in (
        ("vehicle", cfg.vehicle, _VEHICLE),
        ("sim", cfg.sim, _SIM),
        ("disturbance", cfg.disturbance, _DISTURBANCE),
        ("gains", cfg.gains, _GAINS),
        ("allocator", cfg.allocator, _ALLOCATOR),
    ):
        out.append(f"[{name}]")
        out.extend(section(obj, table))
        out.append("")
    out.append("[scenario]")
    out.extend(section(cfg, _SCENARIO))
    out.extend(section(cfg.initial, _INITIAL))
    out.append("")
    out.append("[recovery]")
    out.extend(section(cfg.recovery, _RECOVERY))
    return "\n".join(out) + "\n"
