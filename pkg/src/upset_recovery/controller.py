"""Cascaded position/velocity loop and reduced-attitude/rate loops.

The outer loop turns a position setpoint into a desired thrust direction
``n_des`` (confined to a cone of half-angle ``theta1`` about vertical) and a
collective thrust that fades to zero as the vehicle tilts past ``theta2``.
The attitude loop steers the thrust axis ``n`` toward ``n_des`` without ever
commanding yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import RigidState

SINGULAR_SIN = 1e-6
DEGENERATE_AZ = -0.1


def _cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _norm(v) -> float:
    return math.sqrt(float(v @ v))


def _diag3(values) -> tuple[float, float, float]:
    vals = tuple(float(v) for v in values)
    if len(vals) != 3:
        raise ValueError("expected 3 diagonal entries")
    return vals


@dataclass(frozen=True)
class ControlGains:
    kp_pos: tuple[float, float, float] = (1.0, 1.0, 15.0)
    kp_vel: tuple[float, float, float] = (2.0, 2.0, 25.0)
    ki_vel: tuple[float, float, float] = (1.0, 1.0, 5.0)
    kp_att: float = 8.0
    kp_rate: tuple[float, float, float] = (15.0, 15.0, 1.0)
    theta1: float = np.deg2rad(30.0)
    theta2: float = np.deg2rad(70.0)
    integrator_limit: tuple[float, float, float] = (5.0, 5.0, 5.0)
    ff_enabled: bool = True
    ff_cutoff_hz: float = 20.0

    def __post_init__(self):
        for name in ("kp_pos", "kp_vel", "ki_vel", "kp_rate", "integrator_limit"):
            vals = _diag3(getattr(self, name))
            if min(vals) <= 0:
                raise ValueError(f"{name} entries must be positive")
            object.__setattr__(self, name, vals)
        if self.kp_att <= 0:
            raise ValueError("kp_att must be positive")
        if not 0 < self.theta1 < self.theta2 <= np.pi:
            raise ValueError("need 0 < theta1 < theta2 <= pi")


@dataclass(frozen=True, eq=False)
class OuterLoopState:
    velocity_error_integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_omega_des: np.ndarray | None = None
    omega_des_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True, eq=False)
class OuterLoopOutput:
    n_des: np.ndarray
    T_des: float
    a_des: np.ndarray
    theta: float
    beta_scale: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class AttitudeLoopOutput:
    omega_des: np.ndarray
    alpha_des: np.ndarray
    rho: float
    n_c: np.ndarray


def thrust_axis(state_or_R) -> np.ndarray:
    """Inertial direction of the collective thrust, ``R @ [0, 0, -1]``."""
    R = state_or_R.R if isinstance(state_or_R, RigidState) else np.asarray(state_or_R)
    n = -R[:, 2]
    return n / _norm(n)


def accel_clamp(a_des0, theta1: float) -> tuple[np.ndarray, float]:
    """Scale the horizontal part of ``a_des0`` so its tilt from vertical is at most ``theta1``.

    Returns the clamped vector and the divisor ``eps >= 1``. Requires ``a_des0[2] < 0``.
    """
    a = np.asarray(a_des0, dtype=float)
    if not a[2] < 0:
        raise ValueError("vertical acceleration command must point up (a_z < 0)")
    horiz = math.hypot(a[0], a[1])
    eps = max(horiz / (-a[2] * np.tan(theta1)), 1.0)
    return np.array([a[0] / eps, a[1] / eps, a[2]]), eps


def beta_scale(theta: float, theta1: float, theta2: float) -> float:
    """Thrust fade factor: 1 below ``theta1``, 0 above ``theta2``, linear between."""
    return (theta2 - min(max(theta, theta1), theta2)) / (theta2 - theta1)


def outer_loop(
    state: RigidState,
    xi_ref,
    gains: ControlGains,
    os: OuterLoopState,
    dt_control: float,
    mass: float,
    gravity: float = 9.81,
    max_thrust: float = np.inf,
) -> tuple[OuterLoopOutput, OuterLoopState]:
    kp_pos = np.array(gains.kp_pos)
    kp_vel = np.array(gains.kp_vel)
    ki_vel = np.array(gains.ki_vel)
    v_des = kp_pos * (np.asarray(xi_ref, dtype=float) - state.position)
    v_err = v_des - state.velocity
    integral = os.velocity_error_integral
    a0 = kp_vel * v_err + ki_vel * integral - np.array([0.0, 0.0, gravity])

    degenerate = not a0[2] < DEGENERATE_AZ
    if degenerate:
        a0 = a0.copy()
        a0[2] = DEGENERATE_AZ
    a_des, _ = accel_clamp(a0, gains.theta1)
    n_des = a_des / _norm(a_des)

    n = thrust_axis(state.R)
    theta = math.acos(min(max(-n[2], -1.0), 1.0))
    beta = beta_scale(theta, gains.theta1, gains.theta2)
    T_des = min(max(-beta * mass * a_des[2] / math.cos(min(theta, gains.theta1)), 0.0), max_thrust)

    lim = np.array(gains.integrator_limit)
    new_integral = np.clip(integral + v_err * dt_control, -lim, lim)
    out = OuterLoopOutput(n_des=n_des, T_des=float(T_des), a_des=a_des, theta=theta,
                          beta_scale=float(beta), degenerate=degenerate)
    return out, replace(os, velocity_error_integral=new_integral)


def _perpendicular(n: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Deterministic unit vector normal to ``n``: body x axis projected, else body y."""
    for col in (0, 1):
        e = R[:, col]
        v = e - (e @ n) * n
        norm = _norm(v)
        if norm > 1e-6:
            return v / norm
    raise ArithmeticError("rotation matrix columns are degenerate")


def reduced_attitude_loop(state_or_R, n_des, gains: ControlGains) -> tuple[float, np.ndarray, np.ndarray]:
    """Returns ``(rho, n_c, omega_des)`` with ``omega_des`` in body axes."""
    R = state_or_R.R if isinstance(state_or_R, RigidState) else np.asarray(state_or_R)
    n = thrust_axis(R)
    n_des = np.asarray(n_des, dtype=float)
    rho = math.acos(min(max(float(n_des @ n), -1.0), 1.0))
    axis = _cross(n, n_des)
    s = _norm(axis)
    if s < SINGULAR_SIN:
        n_c = _perpendicular(n, R)
    else:
        n_c = axis / s
    omega_des = gains.kp_att * rho * (R.T @ n_c)
    return rho, n_c, omega_des


def rate_loop(
    omega_des,
    omega_body,
    gains: ControlGains,
    os: OuterLoopState,
    dt_control: float,
) -> tuple[np.ndarray, OuterLoopState]:
    """Proportional rate law, optionally with a filtered derivative of ``omega_des``."""
    omega_des = np.asarray(omega_des, dtype=float)
    alpha = np.array(gains.kp_rate) * (omega_des - np.asarray(omega_body, dtype=float))
    ff = np.zeros(3)
    if gains.ff_enabled:
        if os.prev_omega_des is None:
            ff = np.zeros(3)
        else:
            raw = (omega_des - os.prev_omega_des) / dt_control
            # first-order low-pass, bilinear-free exponential form
            a = 1.0 - np.exp(-2.0 * np.pi * gains.ff_cutoff_hz * dt_control)
            ff = os.omega_des_dot + a * (raw - os.omega_des_dot)
        alpha = alpha + ff
    return alpha, replace(os, prev_omega_des=omega_des.copy(), omega_des_dot=ff)


class CascadedController:
    """Outer loop, attitude loop and rate loop chained at the control rate."""

    def __init__(self, gains: ControlGains, mass: float, gravity: float, dt_control: float,
                 n_des_override=None, max_thrust: float = np.inf):
        self.gains = gains
        self.max_thrust = max_thrust
        self.mass = mass
        self.gravity = gravity
        self.dt = dt_control
        self.n_des_override = None if n_des_override is None else np.asarray(n_des_override, float) / np.linalg.norm(n_des_override)
        self.os = OuterLoopState()

    def update(self, state: RigidState, xi_ref) -> tuple[OuterLoopOutput, AttitudeLoopOutput]:
        outer, self.os = outer_loop(state, xi_ref, self.gains, self.os, self.dt, self.mass, self.gravity,
                                   self.max_thrust)
        n_des = outer.n_des if self.n_des_override is None else self.n_des_override
        rho, n_c, omega_des = reduced_attitude_loop(state.R, n_des, self.gains)
        alpha_des, self.os = rate_loop(omega_des, state.omega, self.gains, self.os, self.dt)
        return outer, AttitudeLoopOutput(omega_des=omega_des, alpha_des=alpha_des, rho=rho, n_c=n_c)
