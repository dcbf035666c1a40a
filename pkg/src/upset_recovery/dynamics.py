"""Fixed-step 6-DoF rigid-body propagation (NED inertial frame, FRD body frame).

The integrator works on a flat 18-vector ``[xi(3), v(3), R(9, row-major), omega(3)]``
so that a classical RK4 stage is a handful of array operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .vehicle import VehicleParams

HOVER_RPM = 10_000.0


def _frozen3(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(3)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RigidState:
    position: np.ndarray
    velocity: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen3(self.position))
        object.__setattr__(self, "velocity", _frozen3(self.velocity))
        object.__setattr__(self, "omega", _frozen3(self.omega))
        R = np.array(self.R, dtype=float).reshape(3, 3)
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.R.ravel(), self.omega])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "RigidState":
        return cls(x[0:3], x[3:6], x[6:15].reshape(3, 3), x[15:18])

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0)) -> "RigidState":
        return cls(position, np.zeros(3), np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class DisturbanceModel:
    """Simplified aerodynamic and gyroscopic disturbances.

    ``drag_coeff_linear`` is a body-axis linear drag, ``f_a = -D R^T v``.
    ``rotational_drag`` is a body-axis linear moment damping, ``m_a = -C omega``.
    Only the yaw entry is non-zero by default: 3e-3 N m s balances the
    reaction torque of a three-rotor hover (sigma * m * g) at about 13 rad/s,
    so the relaxed-hover spin settles instead of growing without bound.
    Weaker yaw damping leaves more flights tumbling at zero thrust; see
    ``scripts/yaw_damping_sweep.py``.
    ``actuator_tau`` is applied by the closed-loop simulator, not here.
    """

    drag_coeff_linear: tuple[float, float, float] = (0.1, 0.1, 0.15)
    rotational_drag: tuple[float, float, float] = (0.0, 0.0, 3e-3)
    rotor_inertia: float = 0.0
    actuator_tau: float = 0.02
    drag_enabled: bool = True
    gyro_enabled: bool = True
    actuator_lag_enabled: bool = False

    def __post_init__(self):
        if min(self.drag_coeff_linear) < 0 or min(self.rotational_drag) < 0:
            raise ValueError("drag coefficients must be non-negative")
        if self.rotor_inertia < 0 or self.actuator_tau <= 0:
            raise ValueError("rotor_inertia must be >= 0 and actuator_tau > 0")

    @classmethod
    def none(cls) -> "DisturbanceModel":
        return cls(drag_enabled=False, gyro_enabled=False)


@dataclass(frozen=True, eq=False)
class StateDerivative:
    d_position: np.ndarray
    d_velocity: np.ndarray
    d_R: np.ndarray
    d_omega: np.ndarray


def skew(a) -> np.ndarray:
    """Matrix ``S`` with ``S @ b == np.cross(a, b)``."""
    return np.array(
        [
            [0.0, -a[2], a[1]],
            [a[2], 0.0, -a[0]],
            [-a[1], a[0], 0.0],
        ]
    )


def rotor_speed_constant(params: VehicleParams) -> float:
    """Thrust coefficient k_f [N s^2] mapping hover thrust per rotor to 10,000 RPM."""
    omega_hover = HOVER_RPM * 2.0 * np.pi / 60.0
    return params.hover_thrust / 4.0 / omega_hover**2


def rotor_speeds_from_thrust(u: np.ndarray, params: VehicleParams) -> np.ndarray:
    return np.sqrt(np.maximum(np.asarray(u, dtype=float), 0.0) / rotor_speed_constant(params))


def gyroscopic_moment(omega_body, rotor_speeds, params: VehicleParams, dist: DisturbanceModel) -> np.ndarray:
    if not dist.gyro_enabled or dist.rotor_inertia == 0.0:
        return np.zeros(3)
    h = dist.rotor_inertia * float(np.dot(params.rotor_spin_signs, rotor_speeds))
    w = omega_body
    # h * (z_B x omega)
    return h * np.array([-w[1], w[0], 0.0])


class _Plant:
    """Constants of the equations of motion, precomputed once per configuration."""

    def __init__(self, params: VehicleParams, dist: DisturbanceModel):
        l, b = params.arm_length, params.arm_angle
        self.mass = params.mass
        self.J = params.inertia_diag.copy()
        self.g = np.array([0.0, 0.0, params.gravity])
        self.G_m = np.vstack(
            [
                l * np.sin(b) * np.array([1.0, -1.0, -1.0, 1.0]),
                l * np.cos(b) * np.array([1.0, 1.0, -1.0, -1.0]),
                params.torque_thrust_ratio * params.rotor_spin_signs,
            ]
        )
        self.drag = np.array(dist.drag_coeff_linear, dtype=float) if dist.drag_enabled else np.zeros(3)
        self.rot_drag = np.array(dist.rotational_drag, dtype=float) if dist.drag_enabled else np.zeros(3)
        self.gyro_gain = dist.rotor_inertia if dist.gyro_enabled else 0.0
        self.spin_signs = params.rotor_spin_signs.copy()

    def moments_and_thrust(self, u, rotor_speeds):
        """Returns (moment about body axes excluding gyro coefficient, thrust, gyro scalar)."""
        m_c = self.G_m @ u
        thrust = -(u[0] + u[1] + u[2] + u[3])
        h = 0.0
        if self.gyro_gain:
            h = self.gyro_gain * float(self.spin_signs @ rotor_speeds)
        return m_c, thrust, h

    def rhs(self, x: np.ndarray, m_c: np.ndarray, thrust: float, h: float) -> np.ndarray:
        return _rhs(x, m_c, thrust, h, self.J, self.mass, self.g, self.drag, self.rot_drag)

    def rk4(self, x: np.ndarray, u: np.ndarray, rotor_speeds, dt: float, n_steps: int = 1) -> np.ndarray:
        """``n_steps`` RK4 steps of size ``dt`` with ``u`` held constant."""
        m_c, thrust, h = self.moments_and_thrust(u, rotor_speeds)
        return _rk4_steps(np.asarray(x, dtype=float), m_c, thrust, h, self.J, self.mass, self.g,
                          self.drag, self.rot_drag, dt, n_steps)


@njit(cache=True)
def _rhs(x, m_c, thrust, h, J, mass, g, drag, rot_drag):
    out = np.empty(18)
    v0, v1, v2 = x[3], x[4], x[5]
    wx, wy, wz = x[15], x[16], x[17]
    out[0] = v0
    out[1] = v1
    out[2] = v2
    # dR = R @ skew(w), R stored row-major in x[6:15]
    for i in range(3):
        r0, r1, r2 = x[6 + 3 * i], x[7 + 3 * i], x[8 + 3 * i]
        out[6 + 3 * i] = r1 * wz - r2 * wy
        out[7 + 3 * i] = r2 * wx - r0 * wz
        out[8 + 3 * i] = r0 * wy - r1 * wx
    # body-frame force: thrust along z_B minus linear drag on body velocity
    fb0 = -drag[0] * (x[6] * v0 + x[9] * v1 + x[12] * v2)
    fb1 = -drag[1] * (x[7] * v0 + x[10] * v1 + x[13] * v2)
    fb2 = thrust - drag[2] * (x[8] * v0 + x[11] * v1 + x[14] * v2)
    for i in range(3):
        out[3 + i] = g[i] + (x[6 + 3 * i] * fb0 + x[7 + 3 * i] * fb1 + x[8 + 3 * i] * fb2) / mass
    mx = m_c[0] - rot_drag[0] * wx - h * wy
    my = m_c[1] - rot_drag[1] * wy + h * wx
    mz = m_c[2] - rot_drag[2] * wz
    jx, jy, jz = J[0] * wx, J[1] * wy, J[2] * wz
    out[15] = (mx - (wy * jz - wz * jy)) / J[0]
    out[16] = (my - (wz * jx - wx * jz)) / J[1]
    out[17] = (mz - (wx * jy - wy * jx)) / J[2]
    return out


@njit(cache=True)
def _rk4_steps(x, m_c, thrust, h, J, mass, g, drag, rot_drag, dt, n_steps):
    x = x.copy()
    for _ in range(n_steps):
        k1 = _rhs(x, m_c, thrust, h, J, mass, g, drag, rot_drag)
        k2 = _rhs(x + 0.5 * dt * k1, m_c, thrust, h, J, mass, g, drag, rot_drag)
        k3 = _rhs(x + 0.5 * dt * k2, m_c, thrust, h, J, mass, g, drag, rot_drag)
        k4 = _rhs(x + dt * k3, m_c, thrust, h, J, mass, g, drag, rot_drag)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        R = _orthonormalize(np.ascontiguousarray(x[6:15]).reshape(3, 3))
        x[6:15] = R.ravel()
        if x[2] >= 0.0 and n_steps > 1:
            break
    return x


@njit(cache=True)
def _orthonormalize(R):
    eye = np.eye(3)
    err = R.T @ R - eye
    if np.abs(err).max() > 1e-3:
        U, _, Vt = np.linalg.svd(R)
        return U @ Vt
    # Newton-Schulz iteration for the polar factor; quadratic convergence.
    for _ in range(3):
        if np.abs(err).max() < 1e-15:
            break
        R = R - 0.5 * R @ err
        err = R.T @ R - eye
    return R


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Orthonormal polar factor of a near-rotation matrix."""
    return _orthonormalize(np.ascontiguousarray(R, dtype=float))


def derivative(
    state: RigidState,
    u,
    params: VehicleParams,
    dist: DisturbanceModel,
    rotor_speeds=None,
) -> StateDerivative:
    """Right-hand side of the rigid-body equations of motion."""
    u = np.asarray(u, dtype=float)
    if rotor_speeds is None:
        rotor_speeds = rotor_speeds_from_thrust(u, params)
    plant = _Plant(params, dist)
    m_c, thrust, h = plant.moments_and_thrust(u, np.asarray(rotor_speeds, dtype=float))
    d = plant.rhs(state.as_vector(), m_c, thrust, h)
    return StateDerivative(d[0:3], d[3:6], d[6:15].reshape(3, 3), d[15:18])


def step(
    state: RigidState,
    u,
    params: VehicleParams,
    dist: DisturbanceModel,
    rotor_speeds=None,
    dt: float = 5e-4,
) -> RigidState:
    """One classical RK4 step with zero-order-hold on ``u``, then projection onto SO(3)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    if rotor_speeds is None:
        rotor_speeds = rotor_speeds_from_thrust(u, params)
    x = _Plant(params, dist).rk4(state.as_vector(), u, np.asarray(rotor_speeds, dtype=float), dt)
    return RigidState.from_vector(x)
