"""Vehicle parameters, control-effectiveness matrices and rotor-failure injection.

Rotor layout (body frame, forward-right-down), indices 1..4 as used in docs:
rotor 1 front-left, 2 front-right, 3 back-right, 4 back-left. Code uses 0-based
indices everywhere except at the user-facing ``apply_failure`` boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Sign pattern of the moment map, one row per body axis (x, y, z).
MOMENT_PATTERN = np.array(
    [
        [1.0, -1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, 1.0, -1.0],
    ]
)


def _vec(values, n: int) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} values, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VehicleParams:
    """Inertial and geometric properties of a quadrotor.

    Defaults describe the Parrot Bebop 2 used in the flight tests. ``u_max`` is
    not published for that vehicle; 4.5 N per rotor is roughly 4.4x hover thrust.
    """

    mass: float = 0.41
    inertia_diag: np.ndarray = field(default_factory=lambda: np.array([1.45e-3, 1.26e-3, 2.52e-3]))
    arm_length: float = 0.145
    arm_angle: float = np.deg2rad(52.6)
    torque_thrust_ratio: float = 0.01
    rotor_spin_signs: np.ndarray = field(default_factory=lambda: np.array([1.0, -1.0, 1.0, -1.0]))
    u_min: np.ndarray = field(default_factory=lambda: np.zeros(4))
    u_max: np.ndarray = field(default_factory=lambda: np.full(4, 4.5))
    gravity: float = 9.81

    def __post_init__(self):
        for name, n in (("inertia_diag", 3), ("rotor_spin_signs", 4), ("u_min", 4), ("u_max", 4)):
            object.__setattr__(self, name, _vec(getattr(self, name), n))
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not np.all(self.inertia_diag > 0):
            raise ValueError("inertia_diag components must be positive")
        if not self.arm_length > 0:
            raise ValueError("arm_length must be positive")
        if not 0 < self.arm_angle < np.pi / 2:
            raise ValueError("arm_angle must lie in (0, pi/2)")
        if not np.all(np.abs(self.rotor_spin_signs) == 1):
            raise ValueError("rotor_spin_signs must be +1 or -1")
        if np.any(self.u_min < 0) or np.any(self.u_min > self.u_max):
            raise ValueError("thrust bounds must satisfy 0 <= u_min <= u_max")

    @property
    def inertia(self) -> np.ndarray:
        return np.diag(self.inertia_diag)

    @property
    def failed_rotors(self) -> tuple[int, ...]:
        """0-based indices of rotors whose thrust range is pinned at zero."""
        return tuple(int(i) for i in np.flatnonzero(self.u_max == 0.0))

    @property
    def hover_thrust(self) -> float:
        return self.mass * self.gravity


@dataclass(frozen=True, eq=False)
class EffectivenessModel:
    G_t: np.ndarray  # (1, 4)
    G_m: np.ndarray  # (3, 4)
    G: np.ndarray  # (4, 4), rows [G_m; G_t]
    G_m_hat: np.ndarray  # (2, 4)


def build_effectiveness(params: VehicleParams) -> EffectivenessModel:
    """Thrust and moment maps from rotor forces.

    The yaw row takes its sign per rotor from ``rotor_spin_signs``; the default
    signs reproduce the [+1, -1, +1, -1] reaction-torque pattern.
    """
    l, b = params.arm_length, params.arm_angle
    G_t = -np.ones((1, 4))
    G_m = np.vstack(
        [
            l * np.sin(b) * MOMENT_PATTERN[0],
            l * np.cos(b) * MOMENT_PATTERN[1],
            params.torque_thrust_ratio * params.rotor_spin_signs,
        ]
    )
    G = np.vstack([G_m, G_t])
    G_m_hat = G_m[:2] / params.inertia_diag[:2, None]
    for arr in (G_t, G_m, G, G_m_hat):
        arr.setflags(write=False)
    return EffectivenessModel(G_t=G_t, G_m=G_m, G=G, G_m_hat=G_m_hat)


def rotor_wrench(u: np.ndarray, eff: EffectivenessModel) -> tuple[np.ndarray, np.ndarray]:
    """Body force and moment produced by rotor thrusts ``u``."""
    u = np.asarray(u, dtype=float)
    force = np.array([0.0, 0.0, float(eff.G_t[0] @ u)])
    return force, eff.G_m @ u


def apply_failure(params: VehicleParams, rotor_index: int) -> VehicleParams:
    """Return a copy of ``params`` with rotor ``rotor_index`` (1..4) dead."""
    if isinstance(rotor_index, bool) or int(rotor_index) != rotor_index or not 1 <= rotor_index <= 4:
        raise ValueError(f"rotor_index must be an integer in 1..4, got {rotor_index!r}")
    i = int(rotor_index) - 1
    u_min = params.u_min.copy()
    u_max = params.u_max.copy()
    u_min[i] = 0.0
    u_max[i] = 0.0
    return replace(params, u_min=u_min, u_max=u_max)
