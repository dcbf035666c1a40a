"""Closed-loop scenarios, recovery metrics, Monte-Carlo campaigns and file export."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .allocator import Allocator, AllocatorConfig, Mode
from .controller import CascadedController, ControlGains, thrust_axis
from .dynamics import DisturbanceModel, RigidState, _Plant, rotor_speeds_from_thrust
from .vehicle import VehicleParams, apply_failure

log = logging.getLogger(__name__)

CSV_HEADER = (
    "t,x,y,z,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,u1,u2,u3,u4,nz,omega_tilde,d,T_des,rho"
).split(",")
GENERATOR = "numpy.random.PCG64"
SEED_RULE = "SeedSequence([master_seed, flight_index])"


@dataclass(frozen=True)
class SimConfig:
    dt_dynamics: float = 5e-4
    dt_control: float = 2e-3
    duration: float = 10.0

    def __post_init__(self):
        if not (self.dt_dynamics > 0 and self.dt_control > 0 and self.duration > 0):
            raise ValueError("time steps and duration must be positive")
        ratio = self.dt_control / self.dt_dynamics
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_control must be an integer multiple of dt_dynamics")

    @property
    def substeps(self) -> int:
        return int(round(self.dt_control / self.dt_dynamics))

    @property
    def n_control_steps(self) -> int:
        return int(round(self.duration / self.dt_control))


@dataclass(frozen=True)
class RecoveryCriterion:
    attitude_deg: float = 15.0
    velocity_band: float = 2.0
    hold: float = 0.5


@dataclass(frozen=True)
class InitialStateSpec:
    """Initial condition: fixed values, or ``None`` for the randomized entries.

    ``thrust_axis=None`` draws the attitude uniformly over SO(3); ``omega=None``
    draws each body rate uniformly in ``[-omega_max, omega_max]``.
    """

    position: tuple[float, float, float] = (0.0, 0.0, -50.0)
    velocity: tuple[float, float, float] = (10.0, 0.0, 0.0)
    thrust_axis: tuple[float, float, float] | None = None
    omega: tuple[float, float, float] | None = None
    omega_max: tuple[float, float, float] = (10.0, 10.0, 5.0)

    @property
    def randomized(self) -> bool:
        return self.thrust_axis is None or self.omega is None


@dataclass(frozen=True)
class ScenarioConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    gains: ControlGains = field(default_factory=ControlGains)
    allocator: AllocatorConfig = field(default_factory=lambda: AllocatorConfig(failed_rotor=4))
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    sim: SimConfig = field(default_factory=SimConfig)
    initial: InitialStateSpec = field(default_factory=InitialStateSpec)
    xi_ref: tuple[float, float, float] = (0.0, 0.0, -50.0)
    failure_time: float = 0.0
    rng_seed: int = 0
    n_des_override: tuple[float, float, float] | None = None
    recovery: RecoveryCriterion = field(default_factory=RecoveryCriterion)

    def __post_init__(self):
        if self.failure_time < 0:
            raise ValueError("failure_time must be >= 0")

    @property
    def failed_rotor(self) -> int | None:
        return self.allocator.failed_rotor

    def with_mode(self, mode) -> "ScenarioConfig":
        return replace(self, allocator=replace(self.allocator, mode=Mode(mode)))


@dataclass(eq=False)
class TrajectoryRecord:
    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    quaternion: np.ndarray  # (N, 4) scalar-first
    omega: np.ndarray
    u: np.ndarray
    n: np.ndarray
    n_des: np.ndarray
    v_des: np.ndarray
    omega_tilde: np.ndarray
    d: np.ndarray
    T_des: np.ndarray
    rho: np.ndarray
    failure_time: float = 0.0
    error: str | None = None

    def __len__(self):
        return len(self.t)

    @property
    def n_z(self) -> np.ndarray:
        return self.n[:, 2]

    def rows(self) -> np.ndarray:
        return np.column_stack(
            [self.t, self.position, self.velocity, self.quaternion, self.omega, self.u,
             self.n_z, self.omega_tilde, self.d, self.T_des, self.rho]
        )


@dataclass
class FlightMetrics:
    crashed: bool
    max_height_drop: float
    recovery_time: float | None
    attitude_recovery_time: float | None
    final_position_error: float
    min_n_z: float
    error: str | None = None

    @property
    def recovered(self) -> bool:
        return self.recovery_time is not None and not self.crashed


@dataclass
class CampaignStats:
    n_flights: int
    crash_count: int
    recovered_count: int
    success_rate: float
    drop_p50: float
    drop_p95: float
    drop_max: float
    mean_recovery_time: float | None
    flights: list[dict]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_flights": self.n_flights,
            "crash_count": self.crash_count,
            "recovered_count": self.recovered_count,
            "success_rate": self.success_rate,
            "drop_p50": self.drop_p50,
            "drop_p95": self.drop_p95,
            "drop_max": self.drop_max,
            "mean_recovery_time": self.mean_recovery_time,
            "metadata": self.metadata,
            "flights": self.flights,
        }


# ---------------------------------------------------------------------------
# Randomization


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized 4-D Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_rotation(q)


def quat_to_rotation(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Scalar-first unit quaternion with ``qw >= 0``."""
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def rotation_from_thrust_axis(n) -> np.ndarray:
    """Smallest rotation from upright (``n = [0, 0, -1]``) to thrust axis ``n``."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    z_b = -n  # body z axis in inertial frame
    e3 = np.array([0.0, 0.0, 1.0])
    axis = np.cross(e3, z_b)
    s, c = np.linalg.norm(axis), float(e3 @ z_b)
    if s < 1e-12:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = axis / s
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + s * K + (1.0 - c) * K @ K


def random_initial_state(rng: np.random.Generator, spec: InitialStateSpec) -> RigidState:
    """Draw attitude first, then body rates, so both depend only on the seed."""
    R = random_rotation(rng) if spec.thrust_axis is None else rotation_from_thrust_axis(spec.thrust_axis)
    if spec.omega is None:
        w_max = np.asarray(spec.omega_max, dtype=float)
        omega = rng.uniform(-w_max, w_max)
    else:
        omega = np.asarray(spec.omega, dtype=float)
    return RigidState(spec.position, spec.velocity, R, omega)


def flight_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(index)])))


# ---------------------------------------------------------------------------
# Closed loop


def run_scenario(cfg: ScenarioConfig, initial_state: RigidState | None = None):
    """Simulate one flight; returns ``(TrajectoryRecord, FlightMetrics)``."""
    if initial_state is None:
        initial_state = random_initial_state(np.random.default_rng(cfg.rng_seed), cfg.initial)
    sim = cfg.sim
    healthy = cfg.vehicle
    failed = apply_failure(healthy, cfg.failed_rotor) if cfg.failed_rotor is not None else healthy
    alloc_cfg = replace(cfg.allocator, failed_rotor=None)
    post_alloc = Allocator(failed, alloc_cfg)
    if cfg.failure_time > 0:
        pre_alloc = Allocator(healthy, replace(alloc_cfg, mode=Mode.P1))
    else:
        pre_alloc = post_alloc
    phi = post_alloc.phi
    ctrl = CascadedController(cfg.gains, healthy.mass, healthy.gravity, sim.dt_control, cfg.n_des_override)
    plant = _Plant(healthy, cfg.disturbance)
    dist = cfg.disturbance
    use_speeds = dist.gyro_enabled and dist.rotor_inertia > 0
    lag = dist.actuator_lag_enabled
    lag_a = 1.0 - math.exp(-sim.dt_dynamics / dist.actuator_tau)
    xi_ref = np.asarray(cfg.xi_ref, dtype=float)
    kp_pos = np.asarray(cfg.gains.kp_pos)

    n_steps = sim.n_control_steps
    cap = n_steps + 1
    buf = {
        "t": np.zeros(cap), "position": np.zeros((cap, 3)), "velocity": np.zeros((cap, 3)),
        "quaternion": np.zeros((cap, 4)), "omega": np.zeros((cap, 3)), "u": np.zeros((cap, 4)),
        "n": np.zeros((cap, 3)), "n_des": np.zeros((cap, 3)), "v_des": np.zeros((cap, 3)),
        "omega_tilde": np.zeros(cap), "d": np.zeros(cap), "T_des": np.zeros(cap), "rho": np.zeros(cap),
    }
    x = initial_state.as_vector()
    u_act = None
    error = None
    count = 0
    for k in range(n_steps + 1):
        t = k * sim.dt_control
        state = RigidState.from_vector(x)
        post = t >= cfg.failure_time
        params = failed if post else healthy
        ctrl.max_thrust = float(params.u_max.sum())
        try:
            outer, att = ctrl.update(state, xi_ref)
            res = (post_alloc if post else pre_alloc).allocate(att.alpha_des, outer.T_des, state.omega)
        except Exception as exc:  # surfaced with the timestamp, flight marked as failed
            error = f"t={t:.4f}s: {type(exc).__name__}: {exc}"
            log.warning("flight aborted at %s", error)
            break
        u_cmd = np.clip(res.u, params.u_min, params.u_max)
        if u_act is None or not lag:
            u_act = u_cmd
        n = thrust_axis(state.R)
        buf["t"][k] = t
        buf["position"][k] = x[0:3]
        buf["velocity"][k] = x[3:6]
        buf["quaternion"][k] = rotation_to_quat(state.R)
        buf["omega"][k] = x[15:18]
        buf["u"][k] = u_act
        buf["n"][k] = n
        buf["n_des"][k] = outer.n_des if ctrl.n_des_override is None else ctrl.n_des_override
        buf["v_des"][k] = kp_pos * (xi_ref - x[0:3])
        buf["omega_tilde"][k] = float(phi @ x[15:17]) if phi is not None else np.nan
        buf["d"][k] = res.d
        buf["T_des"][k] = outer.T_des
        buf["rho"][k] = att.rho
        count = k + 1
        if x[2] >= 0.0 or k == n_steps:
            break
        if lag:
            for _ in range(sim.substeps):
                u_act = np.clip(u_act + lag_a * (u_cmd - u_act), params.u_min, params.u_max)
                speeds = rotor_speeds_from_thrust(u_act, healthy) if use_speeds else None
                x = plant.rk4(x, u_act, speeds, sim.dt_dynamics)
                if x[2] >= 0.0:
                    break
        else:
            speeds = rotor_speeds_from_thrust(u_act, healthy) if use_speeds else None
            x = plant.rk4(x, u_act, speeds, sim.dt_dynamics, sim.substeps)
        if x[2] >= 0.0:
            # record the ground contact sample without further control
            k1 = k + 1
            state = RigidState.from_vector(x)
            buf["t"][k1] = min((k + 1) * sim.dt_control, sim.duration)
            buf["position"][k1] = x[0:3]
            buf["velocity"][k1] = x[3:6]
            buf["quaternion"][k1] = rotation_to_quat(state.R)
            buf["omega"][k1] = x[15:18]
            buf["u"][k1] = u_act
            buf["n"][k1] = thrust_axis(state.R)
            buf["n_des"][k1] = buf["n_des"][k]
            buf["v_des"][k1] = kp_pos * (xi_ref - x[0:3])
            buf["omega_tilde"][k1] = float(phi @ x[15:17]) if phi is not None else np.nan
            buf["d"][k1] = buf["d"][k]
            buf["T_des"][k1] = buf["T_des"][k]
            buf["rho"][k1] = buf["rho"][k]
            count = k1 + 1
            break

    traj = TrajectoryRecord(**{key: val[:count] for key, val in buf.items()},
                            failure_time=cfg.failure_time, error=error)
    return traj, compute_metrics(traj, cfg)


def _first_sustained(ok: np.ndarray, t: np.ndarray, start: float, hold: float) -> float | None:
    """First ``t >= start`` from which ``ok`` holds for ``hold`` seconds of samples."""
    idx = np.flatnonzero(t >= start - 1e-12)
    if idx.size == 0:
        return None
    i0 = idx[0]
    run_start = None
    for i in range(i0, len(t)):
        if ok[i]:
            if run_start is None:
                run_start = i
            if t[i] - t[run_start] >= hold - 1e-9:
                return float(t[run_start] - start)
        else:
            run_start = None
    return None


def compute_metrics(traj: TrajectoryRecord, cfg: ScenarioConfig) -> FlightMetrics:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    z = traj.position[:, 2]
    crashed = bool(np.any(z >= 0.0))
    drop = max(float(z.max() - z[0]), 0.0)
    if crashed:
        drop = float(-z[0])  # ground contact; the last sample may sit slightly below the plane
    crit = cfg.recovery
    cos_att = np.einsum("ij,ij->i", traj.n, traj.n_des)
    att_ok = cos_att > np.cos(np.deg2rad(crit.attitude_deg))
    vel_ok = np.linalg.norm(traj.velocity - traj.v_des, axis=1) < crit.velocity_band
    rec = att_ok & vel_ok
    recovery = None if crashed else _first_sustained(rec, traj.t, traj.failure_time, crit.hold)
    att_rec = _first_sustained(att_ok, traj.t, traj.failure_time, crit.hold)
    if crashed and att_rec is not None and traj.t[-1] - traj.failure_time < att_rec:
        att_rec = None
    return FlightMetrics(
        crashed=crashed,
        max_height_drop=drop,
        recovery_time=recovery,
        attitude_recovery_time=att_rec,
        final_position_error=float(np.linalg.norm(traj.position[-1] - np.asarray(cfg.xi_ref))),
        min_n_z=float(traj.n_z.min()),
        error=traj.error,
    )


# ---------------------------------------------------------------------------
# Campaign


def _flight(args):
    cfg, master_seed, index = args
    rng = flight_rng(master_seed, index)
    x0 = random_initial_state(rng, cfg.initial)
    try:
        _, metrics = run_scenario(cfg, x0)
    except Exception as exc:
        metrics = FlightMetrics(True, float(-x0.position[2]), None, None, float("nan"), float("nan"),
                                error=f"{type(exc).__name__}: {exc}")
    n0 = thrust_axis(x0.R)
    return {
        "index": index,
        "n0": [float(v) for v in n0],
        "omega0": [float(v) for v in x0.omega],
        "omega_tilde0": None,
        "crashed": metrics.crashed,
        "max_height_drop": metrics.max_height_drop,
        "recovery_time": metrics.recovery_time,
        "attitude_recovery_time": metrics.attitude_recovery_time,
        "final_position_error": metrics.final_position_error,
        "min_n_z": metrics.min_n_z,
        "error": metrics.error,
    }


def aggregate(flights: list[dict], metadata: dict | None = None) -> CampaignStats:
    if not flights:
        raise ValueError("a campaign needs at least one flight")
    drops = np.array([f["max_height_drop"] for f in flights])
    crashed = np.array([f["crashed"] for f in flights])
    rec_times = [f["recovery_time"] for f in flights if f["recovery_time"] is not None and not f["crashed"]]
    n = len(flights)
    return CampaignStats(
        n_flights=n,
        crash_count=int(crashed.sum()),
        recovered_count=len(rec_times),
        success_rate=len(rec_times) / n,
        drop_p50=float(np.percentile(drops, 50)),
        drop_p95=float(np.percentile(drops, 95)),
        drop_max=float(drops.max()),
        mean_recovery_time=float(np.mean(rec_times)) if rec_times else None,
        flights=flights,
        metadata=dict(metadata or {}),
    )


def run_campaign(cfg: ScenarioConfig, n_flights: int, parallelism: int = 1, master_seed: int | None = None) -> CampaignStats:
    """Monte-Carlo campaign; per-flight seeds depend only on ``(master_seed, index)``."""
    if n_flights < 1:
        raise ValueError("n_flights must be >= 1")
    seed = cfg.rng_seed if master_seed is None else master_seed
    phi = None
    if cfg.failed_rotor is not None:
        from .allocator import unrecoverable_axis

        phi = unrecoverable_axis(apply_failure(cfg.vehicle, cfg.failed_rotor))
    jobs = [(cfg, seed, i) for i in range(n_flights)]
    if parallelism <= 1:
        flights = [_flight(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            flights = list(pool.map(_flight, jobs, chunksize=max(1, n_flights // (4 * parallelism))))
    if phi is not None:
        for f in flights:
            f["omega_tilde0"] = float(phi @ np.asarray(f["omega0"][:2]))
    meta = {
        "generator": GENERATOR,
        "seed_rule": SEED_RULE,
        "master_seed": int(seed),
        "allocator": Mode(cfg.allocator.mode).value,
        "failed_rotor": cfg.failed_rotor,
        "duration": cfg.sim.duration,
        "dt_dynamics": cfg.sim.dt_dynamics,
        "dt_control": cfg.sim.dt_control,
    }
    return aggregate(flights, meta)


# ---------------------------------------------------------------------------
# Export


def export_trajectory(traj: TrajectoryRecord, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for row in traj.rows():
                w.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def stats_json(stats: CampaignStats) -> str:
    return json.dumps(stats.to_dict(), indent=2, allow_nan=True) + "\n"


def export_stats(stats: CampaignStats, path) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(stats_json(stats))
    except OSError as exc:
        raise OSError(f"cannot write campaign stats to {path}: {exc}") from exc


def case_study_config(mode="p2", **overrides) -> ScenarioConfig:
    """Upset preset: thrust axis [-0.2, 0.2, 0.98], body rates [-15, 15, 0] rad/s, rotor 4 dead."""
    base = ScenarioConfig(
        allocator=AllocatorConfig(failed_rotor=4, mode=Mode(mode)),
        sim=SimConfig(duration=4.0),
        initial=InitialStateSpec(
            position=(0.0, 0.0, -50.0),
            velocity=(0.0, 0.0, 0.0),
            thrust_axis=(-0.2, 0.2, 0.98),
            omega=(-15.0, 15.0, 0.0),
        ),
        n_des_override=(0.0, 0.0, -1.0),
    )
    return replace(base, **overrides)
