import math

import pytest

from RobotTrackingBench.controllers import COMPARED_CONTROLLERS
from RobotTrackingBench.evaluation import (
    EmptyInputError, MetricsReport, MissingCellError, cascade_summary, compute_metrics,
    fault_average, longest_decreasing_run, rank_controllers, rank_table_rows,
    rank_table_text, rank_values, rmse, trace_metrics
)
from RobotTrackingBench.simulation import (
    Scenario, SimTrace, TraceRecord, run_batch, with_controller
)

from conftest import LOOP_WAYPOINTS

CONDITIONS = ("FaultFree", "BumpLeft", "BumpRight", "FlatLeft", "FlatRight")

RMSE_TABLE = {
    "x_e": {
        "ROBUST": (0.0156, 1.3897, 1.7950, 0.1430, 0.1434),
        "ADAPTIVE": (0.0036, 1.3777, 1.7830, 0.1310, 0.1314),
        "RESILIENT": (0.6948, 5.5747, 5.1694, 6.8214, 6.8219),
        "ANTIFRAGILE": (0.0025, 1.3766, 1.7819, 0.1299, 0.1300),
    },
    "y_e": {
        "ROBUST": (0.0005, 0.3538, 1.2162, 0.1689, 0.6052),
        "ADAPTIVE": (0.0007, 0.3540, 1.2159, 0.1691, 0.6053),
        "RESILIENT": (0.0316, 0.3848, 1.2851, 0.1999, 0.6362),
        "ANTIFRAGILE": (0.0002, 0.3529, 1.2170, 0.1681, 0.6043),
    },
    "phi_e": {
        "ROBUST": (0.05521, 0.2573, 0.3441, 0.2332, 0.8642),
        "ADAPTIVE": (0.0917, 0.7628, 0.0807, 0.6785, 1.3898),
        "RESILIENT": (0.5569, 0.2976, 0.3844, 0.2133, 0.8945),
        "ANTIFRAGILE": (0.0707, 0.1838, 0.1016, 0.6195, 1.3807),
    },
}

EXPECTED_ORDER = {
    "x_e": ["ANTIFRAGILE", "ADAPTIVE", "ROBUST", "RESILIENT"],
    "y_e": ["ANTIFRAGILE", "ROBUST", "ADAPTIVE", "RESILIENT"],
    "phi_e": ["ROBUST", "RESILIENT", "ANTIFRAGILE", "ADAPTIVE"],
}


def _values(metric):
    return {ctrl: dict(zip(CONDITIONS, row)) for ctrl, row in RMSE_TABLE[metric].items()}


def _reports():
    reports = []
    for ctrl in RMSE_TABLE["x_e"]:
        for i, cond in enumerate(CONDITIONS):
            reports.append(MetricsReport(
                controller=ctrl, scenario=cond,
                rmse_x_e=RMSE_TABLE["x_e"][ctrl][i],
                rmse_y_e=RMSE_TABLE["y_e"][ctrl][i],
                rmse_phi_e=RMSE_TABLE["phi_e"][ctrl][i],
                max_abs_x_e=0.0, max_abs_y_e=0.0, max_abs_phi_e=0.0,
                deviation_peak=0.0, deviation_mean=0.0,
            ))
    return reports


def _record(t, x_r, x_d=0.0, fault="FaultFree"):
    return TraceRecord(
        t=t, x_r=x_r, y_r=0.0, phi_r=0.0, x_d=x_d, y_d=0.0, phi_d=0.0,
        x_e=x_d - x_r, y_e=0.0, phi_e=0.0, v_c=0.0, w_c=0.0, v_r=0.0, w_r=0.0,
        s1=0.0, s2=0.0, V=0.0, Vdot=0.0, fault_active=fault,
        diagnosis="FaultFree", flags="",
    )


def _trace(controller, deviations, dt=1.0):
    records = [_record(k * dt, d) for k, d in enumerate(deviations)]
    return SimTrace(scenario="cascade", controller=controller, header={}, records=records)


#########################################################
# Metrics
#########################################################

def test_rmse():
    assert rmse([3.0, -3.0]) == 3.0
    assert rmse([1.0, 7.0]) == pytest.approx(5.0)


def test_rmse_of_empty_series():
    with pytest.raises(EmptyInputError):
        rmse([])


def test_compute_metrics_on_trace():
    report = compute_metrics(_trace("ROBUST", [0.0, 3.0, 4.0, 0.0]), "ROBUST", "cascade")
    assert report.rmse_x_e == pytest.approx(2.5)
    assert report.max_abs_x_e == 4.0
    assert report.deviation_peak == 4.0
    assert report.deviation_mean == pytest.approx(1.75)
    assert report.rmse_y_e == 0.0


def test_compute_metrics_on_empty_trace():
    with pytest.raises(EmptyInputError):
        compute_metrics(_trace("ROBUST", []), "ROBUST", "cascade")


#########################################################
# Ranking
#########################################################

@pytest.mark.parametrize("metric", ["x_e", "y_e", "phi_e"])
def test_rank_values_orders_reference_matrix(metric):
    averages, order = rank_values(_values(metric), CONDITIONS)
    assert order == EXPECTED_ORDER[metric]
    assert averages["ROBUST"] == pytest.approx(sum(RMSE_TABLE[metric]["ROBUST"]) / 5)


def test_rank_controllers_from_reports():
    table = rank_controllers(_reports(), CONDITIONS)
    assert table.conditions == CONDITIONS
    for metric, order in EXPECTED_ORDER.items():
        assert table.orderings[metric] == order
        assert table.ranks[metric][order[0]] == 1
        assert table.ranks[metric][order[-1]] == 4
    assert table.average_rank("ANTIFRAGILE") == pytest.approx(5 / 3)


def test_ties_break_on_fault_free_then_name():
    values = {
        "B": {"FaultFree": 0.2, "FlatLeft": 0.0},
        "A": {"FaultFree": 0.2, "FlatLeft": 0.0},
        "C": {"FaultFree": 0.1, "FlatLeft": 0.1},
    }
    _, order = rank_values(values, ("FaultFree", "FlatLeft"))
    assert order == ["C", "A", "B"]


def test_missing_cell_is_reported():
    values = _values("x_e")
    del values["ADAPTIVE"]["FlatLeft"]
    with pytest.raises(MissingCellError, match="ADAPTIVE.*FlatLeft"):
        rank_values(values, CONDITIONS)


def test_ranking_needs_conditions():
    with pytest.raises(EmptyInputError):
        rank_values(_values("x_e"), ())


def test_fault_average_skips_fault_free():
    averages = fault_average(_reports())
    expected = sum(RMSE_TABLE["y_e"]["ANTIFRAGILE"][1:]) / 4
    assert averages["ANTIFRAGILE"]["y_e"] == pytest.approx(expected)


def test_fault_average_without_faulty_conditions():
    only_free = [r for r in _reports() if r.scenario == "FaultFree"]
    with pytest.raises(EmptyInputError):
        fault_average(only_free)


def test_rank_table_text_shows_heading_in_degrees():
    reports = _reports()
    text = rank_table_text(rank_controllers(reports, CONDITIONS), reports)
    assert "phi_e RMSE" in text
    assert f"({math.degrees(0.05521):.2f})" in text
    first_phi_row = text.split("phi_e RMSE")[1].splitlines()[2]
    assert first_phi_row.startswith("ROBUST")
    assert first_phi_row.rstrip().endswith("1")


def test_rank_table_rows():
    reports = _reports()
    rows = rank_table_rows(rank_controllers(reports, CONDITIONS), reports)
    assert rows[0] == ["metric", "controller", *CONDITIONS, "average", "rank"]
    assert len(rows) == 1 + 3 * 4
    assert rows[1][:2] == ["x_e", "ANTIFRAGILE"]
    assert rows[1][-1] == 1


#########################################################
# Cascaded faults
#########################################################

@pytest.mark.parametrize("series, expected", [
    ([], 0),
    ([1.0], 1),
    ([5.0, 4.0, 3.0, 3.0, 2.0], 3),
    ([1.0, 2.0, 3.0], 1),
    ([3.0, 2.0, 1.0, 4.0, 3.0, 2.0, 1.0, 0.0], 5),
])
def test_longest_decreasing_run(series, expected):
    assert longest_decreasing_run(series) == expected


def test_cascade_summary_peaks_and_recovery():
    recovering = [0.0, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0, 0.6, 0.7, 0.8]
    diverging = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.9, 0.8, 0.7]
    summary = cascade_summary(
        [_trace("ANTIFRAGILE", recovering), _trace("ROBUST", diverging)],
        fault_times=(7.0, 1.0),
    )
    assert summary.fault_times == (1.0, 7.0)
    assert summary.peaks == {"ANTIFRAGILE": 0.8, "ROBUST": 1.0}
    assert summary.peak_order() == ["ANTIFRAGILE", "ROBUST"]
    assert summary.recovering["ANTIFRAGILE"] == [True, False]
    assert summary.recovering["ROBUST"] == [False, False]


def test_cascade_summary_needs_traces():
    with pytest.raises(EmptyInputError):
        cascade_summary([], (1.0,))


def test_ranking_a_simulated_batch():
    base = Scenario(name="offset_loop", waypoints=LOOP_WAYPOINTS, rolling_start=True,
                    rolling_end=True, plant="kinematic", initial_offset=(0.0, 0.1, 0.0),
                    seed=11)
    result = run_batch([with_controller(base, c) for c in COMPARED_CONTROLLERS])
    assert not result.failures
    reports = [trace_metrics(trace) for trace in result.traces]
    table = rank_controllers(reports, ["offset_loop"], fault_free="offset_loop")
    for metric in ("x_e", "y_e", "phi_e"):
        assert sorted(table.ranks[metric].values()) == [1, 2, 3, 4]
    # The fuzzy law has no lateral feedback, so its offset never closes
    assert table.orderings["y_e"][-1] == "RESILIENT"
