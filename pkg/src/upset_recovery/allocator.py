"""Control allocation: rotor thrusts from desired moments and collective thrust.

P1 is box-constrained weighted least squares. P2 adds a one-sided bound on the
predicted unrecoverable angular rate ``omega_tilde`` at a short horizon ``t_h``,
relaxed by a penalized slack ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .qp import solve_qp, kkt_residual
from .vehicle import EffectivenessModel, VehicleParams, apply_failure, build_effectiveness

SERIES_THRESHOLD = 1e-4


class Mode(str, Enum):
    P1 = "p1"
    P2 = "p2"


@dataclass(frozen=True)
class AllocatorConfig:
    W: tuple[float, float, float, float] = (1e4, 1e4, 1e2, 4.0)
    lam: float = 0.1
    gamma: float = 1e5
    t_h: float = 0.1
    omega_tilde_max: float = 5.0
    failed_rotor: int | None = None  # 1..4
    mode: Mode = Mode.P2
    qp_max_iter: int = 50
    qp_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "W", tuple(float(w) for w in self.W))
        if len(self.W) != 4 or min(self.W) <= 0:
            raise ValueError("W must be 4 positive weights")
        if not (self.lam > 0 and self.gamma > 0 and self.t_h > 0):
            raise ValueError("lam, gamma and t_h must be positive")
        if self.omega_tilde_max < 0:
            raise ValueError("omega_tilde_max must be >= 0")


@dataclass(frozen=True, eq=False)
class PhiMatrices:
    Phi0: np.ndarray
    Phi1: np.ndarray
    b: float
    c: float
    regime: str  # "oscillatory" | "hyperbolic" | "degenerate"


@dataclass(eq=False)
class AllocationResult:
    u: np.ndarray
    d: float
    achieved_mu: np.ndarray
    qp_iterations: int
    active_set: tuple[int, ...]
    predicted_omega_tilde: float
    kkt_residual: float
    degraded: bool = False


def desired_wrench(alpha_des, T_des: float, omega_body, params: VehicleParams) -> np.ndarray:
    """``[I alpha + omega x I omega ; T_des]`` (moments in N m, thrust in N)."""
    J = params.inertia_diag
    w = np.asarray(omega_body, dtype=float)
    a = np.asarray(alpha_des, dtype=float)
    Jw = J * w
    return np.array([
        J[0] * a[0] + w[1] * Jw[2] - w[2] * Jw[1],
        J[1] * a[1] + w[2] * Jw[0] - w[0] * Jw[2],
        J[2] * a[2] + w[0] * Jw[1] - w[1] * Jw[0],
        float(T_des),
    ])


def phi_matrices(omega_z: float, params: VehicleParams, t_h: float) -> PhiMatrices:
    """Transition and input-integral matrices of the roll/pitch rate ODE at frozen yaw rate.

    The ODE is ``d/dt [wx, wy] = A [wx, wy] + G_m_hat u`` with
    ``A = [[0, p], [b, 0]]``, ``p = (Iy - Iz)/Ix wz``, ``b = (Iz - Ix)/Iy wz``.
    Since ``A^2 = p b I``, ``exp(A t) = C(t) I + S(t) A`` with trigonometric
    (``p b < 0``) or hyperbolic (``p b > 0``) ``C`` and ``S``; a Taylor series is
    used when ``|c t_h|`` is below 1e-4.
    """
    if not t_h > 0:
        raise ValueError("t_h must be positive")
    Ix, Iy, Iz = params.inertia_diag
    p = (Iy - Iz) / Ix * omega_z
    b = (Iz - Ix) / Iy * omega_z
    k = p * b
    c = np.sqrt(abs((Iz - Ix) * (Iy - Iz)) / (Ix * Iy)) * abs(omega_z)
    ct = c * t_h
    t = t_h
    if ct < SERIES_THRESHOLD:
        regime = "degenerate"
        C = 1.0 + k * t**2 / 2.0 + k**2 * t**4 / 24.0
        S = t + k * t**3 / 6.0 + k**2 * t**5 / 120.0
        D = t**2 / 2.0 + k * t**4 / 24.0 + k**2 * t**6 / 720.0
    elif k < 0:
        regime = "oscillatory"
        C = np.cos(ct)
        S = np.sin(ct) / c
        D = 2.0 * np.sin(0.5 * ct) ** 2 / c**2
    else:
        regime = "hyperbolic"
        C = np.cosh(ct)
        S = np.sinh(ct) / c
        D = 2.0 * np.sinh(0.5 * ct) ** 2 / c**2
    A = np.array([[0.0, p], [b, 0.0]])
    Phi0 = C * np.eye(2) + S * A
    Phi1 = S * np.eye(2) + D * A
    return PhiMatrices(Phi0=Phi0, Phi1=Phi1, b=float(b), c=float(c), regime=regime)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Counterclockwise hull (monotone chain); collinear points dropped."""
    pts = sorted({(round(float(x), 15), round(float(y), 15)) for x, y in points})
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    eps = 1e-15
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= eps:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= eps:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def ams_projection(params: VehicleParams, eff: EffectivenessModel | None = None) -> np.ndarray:
    """Vertices (k, 2) of the attainable roll/pitch moment set, counterclockwise."""
    if eff is None:
        eff = build_effectiveness(params)
    corners = np.array(
        [[params.u_max[i] if (bits >> i) & 1 else params.u_min[i] for i in range(4)] for bits in range(16)]
    )
    return _convex_hull(corners @ eff.G_m[:2].T)


def unrecoverable_axis(params_failed: VehicleParams, eff: EffectivenessModel | None = None) -> np.ndarray:
    """Unit direction ``phi`` of roll/pitch rate that attainable moments cannot oppose.

    ``phi`` is the inward unit normal of the polygon edge nearest the origin: every
    attainable moment ``m`` has ``phi . m >= -h`` with ``h`` that edge's distance, so a
    rate with a positive component along ``phi`` is (nearly) undampable.
    """
    failed = params_failed.failed_rotors
    if len(failed) != 1:
        raise ValueError(f"exactly one failed rotor required, got {len(failed)}")
    poly = ams_projection(params_failed, eff)
    if len(poly) < 3:
        raise ValueError("attainable moment set is degenerate")
    best = None
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        edge = b - a
        length = np.hypot(*edge)
        outward = np.array([edge[1], -edge[0]]) / length
        t = np.clip(-a @ edge / length**2, 0.0, 1.0)
        dist = np.hypot(*(a + t * edge))
        key = (round(dist, 12), i)
        if best is None or key < best[0]:
            best = (key, -outward)
    phi = best[1]
    phi.setflags(write=False)
    return phi


class OmegaTildePredictor:
    """Predicts ``phi . [wx, wy](t_h)`` for constant rotor thrusts over the horizon."""

    def __init__(self, params: VehicleParams, phi: np.ndarray, t_h: float):
        self.params = params
        self.phi = np.asarray(phi, dtype=float)
        self.t_h = t_h
        self.G_m_hat = build_effectiveness(params).G_m_hat

    def matrices(self, omega_z: float) -> PhiMatrices:
        return phi_matrices(omega_z, self.params, self.t_h)

    def constraint(self, omega_body) -> tuple[np.ndarray, float]:
        """``(a, r)`` such that ``omega_tilde(t_h) = a . u + r``."""
        pm = self.matrices(float(omega_body[2]))
        a = self.phi @ pm.Phi1 @ self.G_m_hat
        r = float(self.phi @ pm.Phi0 @ np.asarray(omega_body[:2], dtype=float))
        return a, r

    def predict(self, omega_body, u) -> float:
        a, r = self.constraint(omega_body)
        return float(a @ np.asarray(u, dtype=float) + r)


def _p1_hessian(eff: EffectivenessModel, cfg: AllocatorConfig):
    # Thrust row matched against the collective magnitude sum(u); G_t itself is all -1.
    G = np.vstack([eff.G_m, -eff.G_t])
    W = np.asarray(cfg.W, dtype=float)
    H = 2.0 * (G.T @ (W[:, None] * G) + cfg.lam * np.eye(4))
    return G, W, H


def _p1_terms(mu_des, eff: EffectivenessModel, cfg: AllocatorConfig, hessian=None):
    G, W, H = _p1_hessian(eff, cfg) if hessian is None else hessian
    f = -2.0 * G.T @ (W * np.asarray(mu_des, dtype=float))
    return G, H, f


def allocate_p1(
    mu_des,
    eff: EffectivenessModel,
    params: VehicleParams,
    cfg: AllocatorConfig,
    *,
    predictor: OmegaTildePredictor | None = None,
    omega_body=None,
    warm: tuple | None = None,
    hessian=None,
) -> AllocationResult:
    """Box-constrained weighted least-squares allocation."""
    G, H, f = _p1_terms(mu_des, eff, cfg, hessian)
    x0, ws = warm if warm is not None else (None, None)
    if x0 is not None:
        x0 = x0[:4]
    res = solve_qp(H, f, None, None, params.u_min, params.u_max, max_iter=cfg.qp_max_iter, tol=cfg.qp_tol,
                   x0=x0, working_set=ws)
    u = res.x
    pred = float("nan")
    if predictor is not None and omega_body is not None:
        pred = predictor.predict(omega_body, u)
    return AllocationResult(
        u=u,
        d=0.0,
        achieved_mu=G @ u,
        qp_iterations=res.iterations,
        active_set=res.active_set,
        predicted_omega_tilde=pred,
        kkt_residual=kkt_residual(H, f, None, None, params.u_min, params.u_max, u, res.multipliers),
        degraded=res.degraded,
    )


def allocate_p2(
    mu_des,
    omega_body,
    eff: EffectivenessModel,
    params: VehicleParams,
    cfg: AllocatorConfig,
    *,
    predictor: OmegaTildePredictor | None = None,
    warm: tuple | None = None,
    hessian=None,
) -> AllocationResult:
    """Allocation with the horizon constraint ``omega_tilde(t_h) <= omega_tilde_max + d``.

    Decision vector is ``[u1..u4, d]``; ``d >= 0`` is penalized by ``gamma d^2``.
    """
    if predictor is None:
        phi = unrecoverable_axis(params, eff)
        predictor = OmegaTildePredictor(params, phi, cfg.t_h)
    G, H1, f1 = _p1_terms(mu_des, eff, cfg, hessian)
    H = np.zeros((5, 5))
    H[:4, :4] = H1
    H[4, 4] = 2.0 * cfg.gamma
    f = np.append(f1, 0.0)
    a, r = predictor.constraint(omega_body)
    A = np.append(a, -1.0)[None, :]
    b = np.array([cfg.omega_tilde_max - r])
    lb = np.append(params.u_min, 0.0)
    ub = np.append(params.u_max, np.inf)

    x0, ws = warm if warm is not None else (None, None)
    if x0 is None or len(x0) != 5:
        u0 = np.clip(np.full(4, params.hover_thrust / 4.0), params.u_min, params.u_max)
        x0 = np.append(u0, 0.0)
    x0 = np.clip(np.asarray(x0, dtype=float), lb, ub)
    # slack large enough that the warm start is feasible
    x0[4] = max(0.0, float(a @ x0[:4]) + r - cfg.omega_tilde_max)
    res = solve_qp(H, f, A, b, lb, ub, max_iter=cfg.qp_max_iter, tol=cfg.qp_tol, x0=x0, working_set=ws)
    u, d = res.x[:4], float(res.x[4])
    return AllocationResult(
        u=u,
        d=d,
        achieved_mu=G @ u,
        qp_iterations=res.iterations,
        active_set=res.active_set,
        predicted_omega_tilde=float(a @ u + r),
        kkt_residual=kkt_residual(H, f, A, b, lb, ub, res.x, res.multipliers),
        degraded=res.degraded,
    )


class Allocator:
    """Per-simulation allocator holding the cached axis, predictor and warm-start state."""

    def __init__(self, params: VehicleParams, cfg: AllocatorConfig):
        if cfg.failed_rotor is not None:
            params = apply_failure(params, cfg.failed_rotor)
        self.params = params
        self.cfg = cfg
        self.eff = build_effectiveness(params)
        self.predictor = None
        if len(params.failed_rotors) == 1:
            self.predictor = OmegaTildePredictor(params, unrecoverable_axis(params, self.eff), cfg.t_h)
        elif cfg.mode is Mode.P2:
            raise ValueError("P2 allocation requires exactly one failed rotor")
        self._hessian = _p1_hessian(self.eff, cfg)
        self._warm = None

    @property
    def phi(self):
        return None if self.predictor is None else self.predictor.phi

    def reset(self):
        self._warm = None

    def allocate(self, alpha_des, T_des: float, omega_body) -> AllocationResult:
        mu = desired_wrench(alpha_des, T_des, omega_body, self.params)
        if self.cfg.mode is Mode.P2:
            res = allocate_p2(mu, omega_body, self.eff, self.params, self.cfg,
                              predictor=self.predictor, warm=self._warm, hessian=self._hessian)
            self._warm = (np.append(res.u, res.d), res.active_set)
        else:
            res = allocate_p1(mu, self.eff, self.params, self.cfg, predictor=self.predictor,
                              omega_body=omega_body, warm=self._warm, hessian=self._hessian)
            self._warm = (res.u.copy(), res.active_set)
        return res
