import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from RobotTrackingBench.antifragile import (
    AntifragileController, AntifragileGains, InvalidGainError, SlidingState,
    antifragile_control, lyapunov_rate, lyapunov_value, reaching_time, sliding_values
)
from RobotTrackingBench.planner import ReferenceSample
from RobotTrackingBench.simulation import run_scenario
from RobotTrackingBench.tracking import TrackingError, measure_tracking
from RobotTrackingBench.vehicle import Pose, RobotState


def _ref(v=1.0, omega=0.0):
    return ReferenceSample(t=0.0, x=0.0, y=0.0, phi=0.0, v=v, omega=omega,
                           a_v=0.0, a_omega=0.0, curvature=0.0)


@pytest.mark.parametrize("field", ["lambda0", "lambda1", "lambda2"])
def test_lambdas_must_be_positive(field):
    with pytest.raises(InvalidGainError, match=r"lambda > 0"):
        AntifragileGains(**{field: -1.0})


def test_reaching_gains_must_be_non_negative():
    with pytest.raises(InvalidGainError):
        AntifragileGains(q1=-0.5)
    with pytest.raises(InvalidGainError):
        AntifragileGains(switching="tanh")


def test_sliding_values():
    gains = AntifragileGains(lambda0=0.2, lambda1=0.5, lambda2=2.0)
    err = TrackingError(x_e=0.1, y_e=-0.2, phi_e=0.3, dx_e=0.05, dy_e=0.01)
    s1, s2 = sliding_values(err, gains)
    assert s1 == pytest.approx(0.05 + 0.5 * 0.1)
    assert s2 == pytest.approx(0.01 + 2.0 * -0.2 - 0.2 * 0.3)


def test_reaching_time_matches_integrated_reaching_law():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p, q = rng.uniform(0.2, 3.0), rng.uniform(0.05, 1.0)
        s0 = rng.uniform(0.1, 2.0) * rng.choice([-1.0, 1.0])
        expected = reaching_time(p, q, s0)

        def crossing(_t, s):
            return s[0]
        crossing.terminal = True

        sol = solve_ivp(lambda _t, s: -p * s - q * math.copysign(1.0, s0),
                        (0.0, 2.0 * expected + 1.0), [s0], events=crossing,
                        rtol=1e-10, atol=1e-12)
        assert sol.t_events[0][0] == pytest.approx(expected, rel=1e-2)


def test_reaching_time_requires_positive_gains():
    with pytest.raises(InvalidGainError):
        reaching_time(0.0, 1.0, 1.0)


def test_lyapunov_rate_is_never_positive():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        q1, q2, p1, p2 = rng.uniform(0.0, 5.0, size=4)
        gains = AntifragileGains(q1=q1, q2=q2, p1=p1, p2=p2)
        s1, s2 = rng.normal(scale=3.0, size=2)
        assert lyapunov_rate(s1, s2, gains) <= 0.0
        assert lyapunov_value(s1, s2) >= 0.0


def test_command_on_reference_is_feedforward():
    mem = SlidingState()
    state = RobotState(pose=Pose(0.0, 0.0, 0.0), v=1.0, omega=0.0)
    cmd = antifragile_control(state, _ref(), mem, AntifragileGains(), 0.02)
    assert cmd.v_c == pytest.approx(1.0)
    assert cmd.omega_c == pytest.approx(0.0)
    assert cmd.flags == ()
    assert (mem.s1, mem.s2) == (0.0, 0.0)


def test_lateral_offset_turns_back_toward_path():
    state = RobotState(pose=Pose(0.0, 0.2, 0.0), v=1.0, omega=0.0)
    cmd = antifragile_control(state, _ref(), SlidingState(), AntifragileGains(), 0.02)
    assert cmd.omega_c < 0.0


def test_perpendicular_heading_clamps_denominators():
    state = RobotState(pose=Pose(0.0, 0.0, math.pi / 2), v=1.0)
    cmd = antifragile_control(state, _ref(), SlidingState(), AntifragileGains(), 0.02)
    assert "cos-clamped" in cmd.flags
    assert "omega-den-clamped" in cmd.flags
    assert math.isfinite(cmd.v_c) and math.isfinite(cmd.omega_c)


def test_lambda0_condition_is_flagged():
    state = RobotState(pose=Pose(0.0, 0.001, 0.1), v=1.0)
    cmd = antifragile_control(state, _ref(), SlidingState(), AntifragileGains(), 0.02)
    assert "lambda0-condition" in cmd.flags


def test_sign_switching_variant_runs():
    gains = AntifragileGains(switching="sgn")
    state = RobotState(pose=Pose(0.05, 0.05, 0.0), v=1.0)
    cmd = antifragile_control(state, _ref(), SlidingState(), gains, 0.02)
    assert math.isfinite(cmd.omega_c)


def test_controller_reset_clears_memory():
    ctrl = AntifragileController()
    state = RobotState(pose=Pose(0.0, 0.1, 0.0), v=1.0)
    ctrl.compute(state, [_ref()], 0.02)
    assert ctrl.memory.v_c is not None
    ctrl.reset()
    assert ctrl.memory.v_c is None
    assert ctrl.describe()["lambda1"] == 0.75


def test_lateral_offset_decays_in_closed_loop(line_scenario):
    gains = {"ANTIFRAGILE": {"lambda0": 0.01, "q2": 10.0}}
    scn = replace(line_scenario, gains=gains, initial_offset=(0.0, 0.1, 0.0), duration_s=20.0)
    trace = run_scenario(scn)
    t = trace.column("t")
    y_e = trace.column("y_e")
    assert abs(y_e[0]) == pytest.approx(0.1, abs=1e-9)
    later = t >= 3.0
    assert np.max(np.abs(y_e[later])) < 0.01


def test_straight_line_is_tracked(line_scenario):
    trace = run_scenario(line_scenario)
    assert np.max(np.abs(trace.column("y_e"))) < 1e-9
    assert np.max(np.abs(trace.column("phi_e"))) < 1e-9
    assert np.max(np.abs(trace.column("x_e"))) < 0.01


def test_lateral_manifold_worked_example():
    gains = AntifragileGains(lambda0=0.5, lambda2=2.0)
    err = TrackingError(x_e=0.0, y_e=-0.1, phi_e=0.2, dx_e=0.0, dy_e=0.0)
    _, s2 = sliding_values(err, gains)
    assert s2 == pytest.approx(-0.3)


def test_on_manifold_command_matches_closed_form():
    gains = AntifragileGains()
    v_d, omega_d, a_v, a_omega = 1.0, 0.2, 0.1, 0.05
    v_r, phi_e = 1.1, 0.1
    ref = ReferenceSample(t=0.0, x=0.0, y=0.0, phi=0.0, v=v_d, omega=omega_d,
                          a_v=a_v, a_omega=a_omega, curvature=omega_d / v_d)
    # s1 = s2 = 0 is linear in (x_e, y_e) once sgn(y_e) = -1 is fixed
    lhs = np.array([[gains.lambda1, omega_d], [-omega_d, gains.lambda2]])
    rhs = np.array([v_d - v_r * math.cos(phi_e),
                    -v_r * math.sin(phi_e) + gains.lambda0 * phi_e])
    x_e, y_e = np.linalg.solve(lhs, rhs)
    assert y_e < 0.0

    state = RobotState(pose=Pose(x_e, y_e, phi_e), v=v_r, omega=omega_d)
    err = measure_tracking(state, ref)
    s1, s2 = sliding_values(err, gains)
    assert s1 == pytest.approx(0.0, abs=1e-12)
    assert s2 == pytest.approx(0.0, abs=1e-12)

    dt = 0.02
    mem = SlidingState()
    cmd = antifragile_control(state, ref, mem, gains, dt)
    # First call: both rate filters report zero
    dv_c = (-gains.lambda1 * err.dx_e - a_omega * y_e - omega_d * err.dy_e + a_v) / math.cos(phi_e)
    omega_c = omega_d + ((-gains.lambda2 * err.dy_e + a_omega * x_e + omega_d * err.dx_e)
                         / (v_r * math.cos(phi_e) - gains.lambda0))
    assert cmd.dv_c == pytest.approx(dv_c, rel=1e-9, abs=1e-12)
    assert cmd.v_c == pytest.approx(v_r + dv_c * dt, rel=1e-9)
    assert cmd.omega_c == pytest.approx(omega_c, rel=1e-9)


def _first_time_at_or_below(t, series, level):
    below = np.flatnonzero(series <= level)
    assert below.size, f"never reached {level}"
    return t[below[0]]


@pytest.mark.parametrize("switching", ["sgn", "sat"])
def test_along_track_manifold_is_reached_in_time(line_scenario, switching):
    scn = replace(line_scenario, gains={"ANTIFRAGILE": {"switching": switching}},
                  initial_offset=(0.5, 0.0, 0.0), duration_s=20.0)
    gains = scn.antifragile_gains
    trace = run_scenario(scn)
    t, s1 = trace.column("t"), trace.column("s1")
    s1_0 = gains.lambda1 * 0.5
    assert s1[0] == pytest.approx(s1_0)
    bound = 1.2 * reaching_time(gains.q1, gains.p1, s1_0)
    # The saturated law only enters its boundary layer in finite time
    level = 0.0 if switching == "sgn" else gains.sat_width
    reached = _first_time_at_or_below(t, s1, level)
    assert reached <= bound
    if switching == "sgn":
        assert reached >= 0.8 * reaching_time(gains.q1, gains.p1, s1_0)


def test_lateral_offset_decays_with_default_gains(line_scenario):
    scn = replace(line_scenario, initial_offset=(0.0, 0.1, 0.0), duration_s=20.0)
    gains = scn.antifragile_gains
    trace = run_scenario(scn)
    t, y_e = trace.column("t"), trace.column("y_e")
    s2_0 = gains.lambda2 * 0.1
    settle = reaching_time(gains.q2, gains.p2, s2_0) + 3.0 / gains.lambda2
    assert np.max(np.abs(y_e[t >= settle])) < 0.01


def test_lateral_offset_on_manifold_decays_within_three_time_constants(line_scenario):
    gains = AntifragileGains()
    y0, v0 = 0.1, 1.0
    # Heading that zeroes s2 at the start: v sin(phi) + lambda0 phi = -lambda2 y
    phi0 = brentq(lambda p: v0 * math.sin(p) + gains.lambda0 * p + gains.lambda2 * y0,
                  -1.0, 0.0)
    scn = replace(line_scenario, initial_offset=(0.0, y0, phi0), duration_s=20.0)
    trace = run_scenario(scn)
    t, y_e, s2 = trace.column("t"), trace.column("y_e"), trace.column("s2")
    assert s2[0] == pytest.approx(0.0, abs=1e-6)
    assert np.max(np.abs(y_e[t >= 3.0 / gains.lambda2])) < 0.01
