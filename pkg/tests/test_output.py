from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from RobotTrackingBench.controllers import COMPARED_CONTROLLERS
from RobotTrackingBench.evaluation import compute_metrics, rank_controllers, trace_metrics
from RobotTrackingBench.output import (
    METRICS_COLUMNS, OutputError, emit_metrics, emit_plotdata, emit_rank_table, emit_trace,
    read_trace, trace_filename
)
from RobotTrackingBench.simulation import TRACE_COLUMNS, run_scenario, with_controller


@pytest.fixture
def kinematic_short(short_dynamic_scenario):
    return replace(short_dynamic_scenario, plant="kinematic")


@pytest.fixture
def short_trace(kinematic_short):
    return run_scenario(kinematic_short)


def test_trace_file_layout(tmp_path, short_trace):
    path = emit_trace(short_trace, tmp_path / trace_filename(short_trace))
    assert path.name == "trace_short_ANTIFRAGILE.csv"
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# scenario: short"
    assert "# seed: 3" in lines
    header = next(line for line in lines if not line.startswith("#"))
    assert header.split(",") == list(TRACE_COLUMNS)

    frame = read_trace(path)
    assert list(frame.columns) == list(TRACE_COLUMNS)
    assert len(frame) == len(short_trace)
    assert frame["fault_active"].iloc[0] == "FaultFree"


def test_metrics_from_file_match_memory(tmp_path, short_trace):
    path = emit_trace(short_trace, tmp_path / "trace.csv")
    from_file = compute_metrics(read_trace(path), short_trace.controller, short_trace.scenario)
    assert from_file == trace_metrics(short_trace)


def test_same_seed_gives_identical_files(tmp_path, short_dynamic_scenario):
    a = emit_trace(run_scenario(short_dynamic_scenario), tmp_path / "a.csv")
    b = emit_trace(run_scenario(short_dynamic_scenario), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_unwritable_destination(tmp_path, short_trace):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory", encoding="utf-8")
    with pytest.raises(OutputError):
        emit_trace(short_trace, blocker / "trace.csv")


def test_read_missing_trace(tmp_path):
    with pytest.raises(OutputError):
        read_trace(tmp_path / "missing.csv")


def test_metrics_and_rank_files(tmp_path, kinematic_short):
    traces = [run_scenario(with_controller(kinematic_short, c)) for c in COMPARED_CONTROLLERS]
    reports = [trace_metrics(tr) for tr in traces]
    metrics = pd.read_csv(emit_metrics(reports, tmp_path / "metrics.csv"))
    assert tuple(metrics.columns) == METRICS_COLUMNS
    assert len(metrics) == len(COMPARED_CONTROLLERS)

    table = rank_controllers(reports, ["short"], fault_free="short")
    ranks = pd.read_csv(emit_rank_table(table, reports, tmp_path / "ranks.csv"))
    assert list(ranks.columns) == ["metric", "controller", "short", "average", "rank"]
    assert sorted(ranks["rank"].unique()) == [1, 2, 3, 4]


def test_plotdata_files(tmp_path, kinematic_short):
    traces = [run_scenario(with_controller(kinematic_short, c)) for c in COMPARED_CONTROLLERS]
    reports = [trace_metrics(tr) for tr in traces]
    written = emit_plotdata(traces, tmp_path, reports)
    names = {p.name for p in written}
    assert {"trajectory_short.dat", "errors_short.dat", "deviation_short.dat",
            "regimes_short.dat", "rmse.dat"} <= names

    n = kinematic_short.n_steps + 1
    deviation = np.loadtxt(tmp_path / "deviation_short.dat")
    assert deviation.shape == (n, 1 + len(COMPARED_CONTROLLERS))
    trajectory = np.loadtxt(tmp_path / "trajectory_short.dat")
    assert trajectory.shape == (n, 3 + 2 * len(COMPARED_CONTROLLERS))
    profiles = np.loadtxt(tmp_path / "profiles_short_ANTIFRAGILE.dat")
    assert profiles.shape == (n, 13)
    regimes = np.loadtxt(tmp_path / "regimes_short.dat")
    assert set(np.unique(regimes[:, 2])) <= {0.0, 1.0}
    assert len((tmp_path / "rmse.dat").read_text().splitlines()) == 1 + len(reports)


def test_plotdata_rejects_ragged_traces(tmp_path, kinematic_short, short_trace):
    longer = run_scenario(replace(kinematic_short, duration_s=3.0))
    with pytest.raises(ValueError, match="differ in length"):
        emit_plotdata([short_trace, longer], tmp_path)
    with pytest.raises(ValueError):
        emit_plotdata([], tmp_path)


def test_plotdata_rmse_error_is_reported_once(tmp_path, short_trace):
    (tmp_path / "rmse.dat").mkdir()
    with pytest.raises(OutputError) as info:
        emit_plotdata([short_trace], tmp_path, [trace_metrics(short_trace)])
    message = str(info.value)
    assert message.count("cannot write") == 1
    assert "rmse.dat" in message


def test_profile_accelerations_come_from_the_trace(tmp_path, short_trace):
    emit_plotdata([short_trace], tmp_path)
    profiles = np.loadtxt(tmp_path / "profiles_short_ANTIFRAGILE.dat")
    # Columns: t, v_d, v_c, v_r, w_d, w_c, w_r, then their rates in the same order
    assert np.allclose(profiles[:, 7], short_trace.column("dv_d"))
    assert np.allclose(profiles[:, 8], short_trace.column("dv_c"))
    assert np.allclose(profiles[:, 10], short_trace.column("dw_d"))
    assert np.allclose(profiles[:, 9], np.gradient(short_trace.column("v_r"),
                                                   short_trace.column("t")), atol=1e-6)
