import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from upset_recovery.controller import (
    CascadedController,
    ControlGains,
    OuterLoopState,
    accel_clamp,
    beta_scale,
    outer_loop,
    rate_loop,
    reduced_attitude_loop,
    thrust_axis,
)
from upset_recovery.dynamics import RigidState
from upset_recovery.harness import random_rotation, rotation_from_thrust_axis

G = ControlGains()
UP = np.array([0.0, 0.0, -1.0])


def _state(R=None, pos=(0, 0, -50), vel=(0, 0, 0), omega=(0, 0, 0)):
    return RigidState(pos, vel, np.eye(3) if R is None else R, omega)


def test_default_gains():
    assert G.kp_pos == (1.0, 1.0, 15.0) and G.kp_vel == (2.0, 2.0, 25.0) and G.ki_vel == (1.0, 1.0, 5.0)
    assert G.kp_att == 8.0 and G.kp_rate == (15.0, 15.0, 1.0)
    assert math.isclose(math.degrees(G.theta1), 30.0) and math.isclose(math.degrees(G.theta2), 70.0)
    with pytest.raises(ValueError):
        ControlGains(theta1=1.0, theta2=0.5)
    with pytest.raises(ValueError):
        ControlGains(kp_att=0.0)


def test_thrust_axis_upright_and_inverted():
    np.testing.assert_array_equal(thrust_axis(np.eye(3)), UP)
    np.testing.assert_allclose(thrust_axis(np.diag([1.0, -1.0, -1.0])), -UP)


def test_beta_scale_endpoints_and_midpoint():
    t1, t2 = G.theta1, G.theta2
    assert beta_scale(0.0, t1, t2) == 1.0
    assert beta_scale(t1, t1, t2) == 1.0
    assert beta_scale(t2, t1, t2) == 0.0
    assert beta_scale(np.pi, t1, t2) == 0.0
    assert abs(beta_scale(0.5 * (t1 + t2), t1, t2) - 0.5) <= 2 * np.finfo(float).eps
    # with dyadic angles the midpoint itself is representable, so equality is exact
    assert beta_scale(1.0, 0.5, 1.5) == 0.5
    assert beta_scale(0.5, 0.5, 1.5) == 1.0 and beta_scale(1.5, 0.5, 1.5) == 0.0


@given(st.floats(0, np.pi))
def test_beta_scale_monotone_in_unit_interval(theta):
    b = beta_scale(theta, G.theta1, G.theta2)
    assert 0.0 <= b <= 1.0
    assert beta_scale(min(theta + 0.01, np.pi), G.theta1, G.theta2) <= b


def test_accel_clamp_examples():
    a, eps = accel_clamp([0.0, 0.0, -9.81], G.theta1)
    assert eps == 1.0 and np.array_equal(a, [0, 0, -9.81])
    a, eps = accel_clamp([10.0, 0.0, -9.81], G.theta1)
    assert math.isclose(math.atan2(a[0], -a[2]), G.theta1, rel_tol=1e-12)
    assert math.isclose(eps, 10.0 / (9.81 * math.tan(G.theta1)), rel_tol=1e-12)
    with pytest.raises(ValueError):
        accel_clamp([0, 0, 1.0], G.theta1)


@given(arrays(np.float64, 3, elements=st.floats(-200, 200)))
def test_accel_clamp_tilt_bound(v):
    v[2] = -abs(v[2]) - 1e-3
    a, eps = accel_clamp(v, G.theta1)
    assert eps >= 1.0 and a[2] == v[2]
    tilt = math.atan2(math.hypot(a[0], a[1]), -a[2])
    assert tilt <= G.theta1 + 1e-12


def test_tilt_cone_random_states():
    rng = np.random.default_rng(3)
    os = OuterLoopState()
    for _ in range(2000):
        st_ = _state(random_rotation(rng), pos=rng.uniform(-100, 100, 3), vel=rng.uniform(-30, 30, 3))
        out, os = outer_loop(st_, [0, 0, -50], G, os, 2e-3, 0.41)
        assert math.acos(-out.n_des[2]) <= G.theta1 + 1e-12
        assert out.T_des >= 0.0
        assert 0.0 <= out.beta_scale <= 1.0


def test_outer_loop_hover_thrust():
    out, _ = outer_loop(_state(), [0, 0, -50], G, OuterLoopState(), 2e-3, 0.41)
    np.testing.assert_allclose(out.n_des, UP)
    assert math.isclose(out.T_des, 0.41 * 9.81, rel_tol=1e-12)


def test_outer_loop_thrust_cut_when_inverted_and_capped():
    out, _ = outer_loop(_state(np.diag([1.0, -1.0, -1.0])), [0, 0, -50], G, OuterLoopState(), 2e-3, 0.41)
    assert out.T_des == 0.0
    out, _ = outer_loop(_state(pos=(0, 0, 0)), [0, 0, -50], G, OuterLoopState(), 2e-3, 0.41, max_thrust=13.5)
    assert out.T_des == 13.5


def test_outer_loop_degenerate_vertical_command():
    # far below a setpoint that demands a downward push: a_z would be positive
    out, _ = outer_loop(_state(pos=(0, 0, -60)), [0, 0, -50], G, OuterLoopState(), 2e-3, 0.41)
    assert out.degenerate and out.a_des[2] < 0
    np.testing.assert_allclose(out.n_des, UP)


def test_integrator_clamped():
    os = OuterLoopState()
    for _ in range(10000):
        _, os = outer_loop(_state(pos=(0, 0, -10)), [30, 0, -50], G, os, 2e-3, 0.41)
    assert np.all(np.abs(os.velocity_error_integral) <= np.array(G.integrator_limit))
    assert os.velocity_error_integral[0] == G.integrator_limit[0]


def test_attitude_loop_geometry():
    R = rotation_from_thrust_axis([np.sin(0.3), 0.0, -np.cos(0.3)])
    rho, n_c, w = reduced_attitude_loop(R, UP, G)
    assert math.isclose(rho, 0.3, rel_tol=1e-12)
    np.testing.assert_allclose(n_c, np.cross(thrust_axis(R), UP) / np.sin(0.3), atol=1e-12)
    np.testing.assert_allclose(w, G.kp_att * 0.3 * R.T @ n_c, atol=1e-12)
    assert abs(w[2]) < 1e-12  # tilt about a horizontal body axis only


@pytest.mark.parametrize("R", [np.eye(3), np.diag([1.0, -1.0, -1.0]), np.diag([-1.0, 1.0, -1.0])])
def test_attitude_loop_singular_points(R):
    rho, n_c, w = reduced_attitude_loop(R, UP, G)
    assert math.isclose(np.linalg.norm(n_c), 1.0)
    assert abs(n_c @ thrust_axis(R)) < 1e-12
    assert np.all(np.isfinite(w))
    if rho == 0.0:
        np.testing.assert_array_equal(w, 0.0)
    else:
        assert math.isclose(rho, np.pi)


def test_rate_loop_feedforward():
    os = OuterLoopState()
    alpha, os = rate_loop([1.0, 0, 0], np.zeros(3), G, os, 2e-3)
    np.testing.assert_array_equal(alpha, [15.0, 0, 0])  # no history yet
    for _ in range(200):
        alpha, os = rate_loop([1.0, 0, 0], np.zeros(3), G, os, 2e-3)
    np.testing.assert_allclose(alpha, [15.0, 0, 0], atol=1e-12)  # constant command: no feed-forward
    ramp = ControlGains(ff_cutoff_hz=1e6)
    os = OuterLoopState()
    for k in range(5):
        alpha, os = rate_loop([0.01 * k, 0, 0], [0.01 * k, 0, 0], ramp, os, 2e-3)
    np.testing.assert_allclose(alpha, [5.0, 0, 0], rtol=1e-9)
    off = ControlGains(ff_enabled=False)
    alpha, _ = rate_loop([2.0, 0, 0], np.zeros(3), off, OuterLoopState(prev_omega_des=np.zeros(3)), 2e-3)
    np.testing.assert_array_equal(alpha, [30.0, 0, 0])


def test_cascade_override_direction():
    ctrl = CascadedController(G, 0.41, 9.81, 2e-3, n_des_override=(0, 0, -2))
    R = rotation_from_thrust_axis([0.0, np.sin(0.5), -np.cos(0.5)])
    _, att = ctrl.update(_state(R), [5, 5, -50])
    assert math.isclose(att.rho, 0.5, rel_tol=1e-12)


@pytest.mark.parametrize("tilt_deg", [178.9, 150.0, 90.0, 20.0])
def test_closed_loop_upright_from_large_tilt(tilt_deg):
    from upset_recovery.allocator import AllocatorConfig, Mode
    from upset_recovery.harness import ScenarioConfig, SimConfig, run_scenario

    cfg = ScenarioConfig(allocator=AllocatorConfig(failed_rotor=None, mode=Mode.P1), sim=SimConfig(duration=2.0),
                         n_des_override=(0.0, 0.0, -1.0))
    a = math.radians(tilt_deg)
    R = rotation_from_thrust_axis([math.sin(a) * 0.6, math.sin(a) * 0.8, -math.cos(a)])
    traj, _ = run_scenario(cfg, RigidState((0, 0, -50), (0, 0, 0), R, (0, 0, 0)))
    assert math.isclose(traj.rho[0], a, rel_tol=1e-9)
    assert traj.rho[-1] < math.radians(5.0)
