import math
import pickle
from dataclasses import replace

import numpy as np
import pytest

from RobotTrackingBench import simulation
from RobotTrackingBench.controllers import COMPARED_CONTROLLERS
from RobotTrackingBench.faults import FaultEvent, FaultKind, FaultSchedule
from RobotTrackingBench.output import emit_trace
from RobotTrackingBench.planner import Waypoint
from RobotTrackingBench.scenario import load_bundled
from RobotTrackingBench.simulation import (
    TRACE_COLUMNS, SimulationAbortError, quantize, run_batch, run_scenario,
    with_controller
)
from RobotTrackingBench.vehicle import WheelSpeeds, wheels_to_body


def test_trace_has_one_record_per_step_plus_initial(line_scenario):
    scn = replace(line_scenario, duration_s=20.0)
    trace = run_scenario(scn)
    assert len(trace) == scn.n_steps + 1 == 1001
    assert trace.records[0].t == 0.0
    assert trace.records[-1].t == pytest.approx(20.0)
    assert all(len(r.row()) == len(TRACE_COLUMNS) == 21 for r in trace.records)


def test_header_records_run_settings(short_dynamic_scenario):
    trace = run_scenario(short_dynamic_scenario)
    header = trace.header
    assert header["controller"] == "ANTIFRAGILE"
    assert header["seed"] == 3
    assert header["outer_rate_hz"] == 50.0
    assert header["inner_rate_hz"] == 1000.0
    assert header["gains"]["lambda1"] == 0.75


def test_runs_are_deterministic(short_dynamic_scenario):
    first = run_scenario(short_dynamic_scenario)
    second = run_scenario(short_dynamic_scenario)
    assert first.records == second.records


def test_seed_changes_measurement_noise(short_dynamic_scenario):
    a = run_scenario(short_dynamic_scenario)
    b = run_scenario(replace(short_dynamic_scenario, seed=4))
    assert not np.array_equal(a.column("x_m"), b.column("x_m"))


def test_noiseless_fault_free_measurement_is_truth(line_scenario):
    trace = run_scenario(replace(line_scenario, duration_s=20.0))
    assert np.array_equal(trace.column("x_m"), trace.column("x_r"))
    assert np.array_equal(trace.column("y_m"), trace.column("y_r"))


def test_values_are_quantized(short_dynamic_scenario):
    trace = run_scenario(short_dynamic_scenario)
    for value in trace.column("x_r"):
        assert quantize(value) == value


@pytest.mark.parametrize("plant, motor_model", [
    ("dynamic", "full"), ("dynamic", "reduced"), ("rigid", "full"),
])
def test_plants_stay_finite(short_dynamic_scenario, plant, motor_model):
    scn = replace(short_dynamic_scenario, plant=plant, motor_model=motor_model)
    trace = run_scenario(scn)
    assert len(trace) == scn.n_steps + 1
    for name in ("x_r", "y_r", "phi_r", "v_r", "w_r"):
        assert np.all(np.isfinite(trace.column(name)))


def test_kinematic_plant_follows_line(line_scenario):
    trace = run_scenario(line_scenario)
    deviation = np.hypot(trace.column("x_r") - trace.column("x_d"),
                         trace.column("y_r") - trace.column("y_d"))
    assert np.max(deviation) < 0.01


@pytest.mark.parametrize("controller", ["ROBUST", "ADAPTIVE", "RESILIENT", "BASELINE"])
def test_every_controller_completes(short_dynamic_scenario, controller):
    trace = run_scenario(with_controller(short_dynamic_scenario, controller))
    assert trace.controller == controller
    assert len(trace) == short_dynamic_scenario.n_steps + 1


def test_fault_label_follows_schedule(line_scenario):
    schedule = FaultSchedule((FaultEvent(FaultKind.BUMP_LEFT, 1.0, 2.0),))
    trace = run_scenario(replace(line_scenario, faults=schedule, duration_s=20.0))
    labels = {r.t: r.fault_active for r in trace.records}
    assert labels[0.98] == "FaultFree"
    assert labels[1.0] == "BumpLeft"
    assert labels[2.0] == "FaultFree"


def test_estimate_feedback_runs(short_dynamic_scenario):
    trace = run_scenario(replace(short_dynamic_scenario, feedback="estimate"))
    assert set(trace.column("diagnosis")) <= {k.value for k in FaultKind}


@pytest.mark.parametrize("changes, field", [
    (dict(outer_rate_hz=60.0), "inner_rate_hz"),
    (dict(duration_s=1.0), "duration_s"),
    (dict(plant="hover"), "plant"),
    (dict(controller="PID"), "controller"),
    (dict(waypoints=(Waypoint(0.0, 0.0, 0.0),)), "waypoints"),
])
def test_scenario_validation(short_dynamic_scenario, changes, field):
    with pytest.raises(ValueError, match=field):
        replace(short_dynamic_scenario, **changes)


def test_scenario_rejects_bad_gains(short_dynamic_scenario):
    with pytest.raises(ValueError, match="lambda > 0"):
        replace(short_dynamic_scenario, gains={"ANTIFRAGILE": {"lambda2": -1.0}})


def test_abort_error_survives_pickling():
    err = pickle.loads(pickle.dumps(SimulationAbortError("state diverged", 17)))
    assert err.record_index == 17
    assert "record 17" in str(err)


def test_batch_isolates_failures(monkeypatch, line_scenario):
    real = simulation.run_scenario

    def flaky(scn):
        if scn.controller == "ROBUST":
            raise SimulationAbortError("non-finite state or command", 3)
        return real(scn)

    monkeypatch.setattr(simulation, "run_scenario", flaky)
    scn = replace(line_scenario, duration_s=20.0)
    result = run_batch([scn, with_controller(scn, "ROBUST")])
    assert not result.ok
    assert result.traces[0] is not None
    assert result.traces[1] is None
    assert result.failures[0][0] == 1
    assert "record 3" in result.failures[0][2]


def test_wheel_angles_follow_shaft_rotation_under_bump(line_scenario):
    schedule = FaultSchedule((FaultEvent(FaultKind.BUMP_RIGHT, 0.0),))
    plant = simulation._Plant(replace(line_scenario, faults=schedule),
                              simulation.initial_state(line_scenario, line_scenario.trajectory()))
    shaft, h = WheelSpeeds(3.0, 2.0), 1e-3
    for k in range(500):
        plant.step(shaft, k * h, h)
    assert plant.angles[0] == pytest.approx(500 * h * 3.0)
    assert plant.angles[1] == pytest.approx(500 * h * 2.0)
    # The bump still lifts the realized right wheel speed
    _, nominal_omega = wheels_to_body(shaft, line_scenario.robot)
    assert plant.truth.omega > nominal_omega


@pytest.fixture
def compared_runs(short_dynamic_scenario):
    scn = replace(short_dynamic_scenario, plant="kinematic")
    return [with_controller(scn, c) for c in COMPARED_CONTROLLERS]


def test_parallel_batch_matches_sequential(tmp_path, compared_runs):
    sequential = run_batch(compared_runs, workers=1)
    parallel = run_batch(compared_runs, workers=2)
    assert sequential.ok and parallel.ok
    for i, (a, b) in enumerate(zip(sequential.traces, parallel.traces)):
        first = emit_trace(a, tmp_path / f"seq_{i}.csv")
        second = emit_trace(b, tmp_path / f"par_{i}.csv")
        assert first.read_bytes() == second.read_bytes()


def test_compared_controllers_share_the_reference(compared_runs):
    traces = run_batch(compared_runs).traces
    for name in ("t", "x_d", "y_d", "phi_d", "v_d", "w_d"):
        columns = [tr.column(name) for tr in traces]
        assert all(np.array_equal(columns[0], c) for c in columns[1:])


@pytest.fixture(scope="module")
def bundled_fault_free_trace():
    return run_scenario(load_bundled("double_loop_faultfree"))


def test_bundled_fault_free_run_stays_within_bounds(bundled_fault_free_trace):
    trace = bundled_fault_free_trace
    assert trace.controller == "ANTIFRAGILE"
    deviation = np.hypot(trace.column("x_r") - trace.column("x_d"),
                         trace.column("y_r") - trace.column("y_d"))
    assert np.max(np.abs(trace.column("x_e"))) <= 0.06
    assert np.max(deviation) <= 0.10
    assert np.max(np.abs(trace.column("phi_e"))) <= math.radians(8.0)
