"""Tracking metrics, controller ranking and cascaded-fault summaries."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRICS = ("x_e", "y_e", "phi_e")
FAULT_FREE_CONDITION = "FaultFree"
MIN_DECREASING_RUN = 5


class EmptyInputError(ValueError):
    """Raised when a metric is asked of an empty series."""


class MissingCellError(KeyError):
    """Raised when a controller lacks a result for a condition."""


@dataclass(frozen=True)
class MetricsReport:
    """Error statistics of one controller on one scenario, in SI units."""

    controller: str
    scenario: str
    rmse_x_e: float
    rmse_y_e: float
    rmse_phi_e: float
    max_abs_x_e: float
    max_abs_y_e: float
    max_abs_phi_e: float
    deviation_peak: float
    deviation_mean: float

    def rmse(self, metric: str) -> float:
        return getattr(self, f"rmse_{metric}")


@dataclass
class RankTable:
    """Per-metric averages, ranks and orderings over a set of conditions."""

    conditions: Tuple[str, ...]
    averages: Dict[str, Dict[str, float]] = field(default_factory=dict)
    ranks: Dict[str, Dict[str, int]] = field(default_factory=dict)
    orderings: Dict[str, List[str]] = field(default_factory=dict)

    def average_rank(self, controller: str) -> float:
        return float(np.mean([self.ranks[m][controller] for m in self.ranks]))


def rmse(series: Sequence[float]) -> float:
    """Root mean square of a series.

    Raises:
        EmptyInputError: If the series is empty
    """
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise EmptyInputError("rmse of an empty series")
    return float(np.sqrt(np.mean(np.square(values))))


def _column(source: Any, name: str) -> np.ndarray:
    if isinstance(source, pd.DataFrame):
        return source[name].to_numpy(dtype=float)
    return source.column(name)


def euclidean_deviation(source: Any) -> np.ndarray:
    """Distance between the robot and the reference at every record.

    Accepts a SimTrace or a DataFrame read back from a trace file.
    """
    dx = _column(source, "x_r") - _column(source, "x_d")
    dy = _column(source, "y_r") - _column(source, "y_d")
    return np.hypot(dx, dy)


def compute_metrics(source: Any, controller: str, scenario: str) -> MetricsReport:
    """RMSE and peak of each error axis plus deviation statistics, over the whole run."""
    deviation = euclidean_deviation(source)
    if deviation.size == 0:
        raise EmptyInputError(f"trace of {controller} on {scenario} has no records")
    values = {m: _column(source, m) for m in METRICS}
    return MetricsReport(
        controller=controller,
        scenario=scenario,
        rmse_x_e=rmse(values["x_e"]),
        rmse_y_e=rmse(values["y_e"]),
        rmse_phi_e=rmse(values["phi_e"]),
        max_abs_x_e=float(np.max(np.abs(values["x_e"]))),
        max_abs_y_e=float(np.max(np.abs(values["y_e"]))),
        max_abs_phi_e=float(np.max(np.abs(values["phi_e"]))),
        deviation_peak=float(np.max(deviation)),
        deviation_mean=float(np.mean(deviation)),
    )


def trace_metrics(trace: Any) -> MetricsReport:
    return compute_metrics(trace, trace.controller, trace.scenario)


def rank_values(
    values: Mapping[str, Mapping[str, float]],
    conditions: Sequence[str],
    fault_free: str = FAULT_FREE_CONDITION,
) -> Tuple[Dict[str, float], List[str]]:
    """Average each controller over the conditions and order ascending.

    Ties are broken by the fault-free value, then by controller name.

    Args:
        values: values[controller][condition]
        conditions: Conditions to average over
        fault_free: Condition used as the first tie-break

    Returns:
        Tuple of (average per controller, controllers best first)

    Raises:
        MissingCellError: If a controller lacks one of the conditions
    """
    if not conditions:
        raise EmptyInputError("no conditions to rank over")
    averages = {}
    for controller, row in values.items():
        missing = [c for c in conditions if c not in row]
        if missing:
            raise MissingCellError(
                f"no result for controller {controller} under condition {missing[0]}"
            )
        averages[controller] = float(np.mean([row[c] for c in conditions]))

    def key(controller: str) -> Tuple[float, float, str]:
        tie = values[controller].get(fault_free, math.inf)
        return averages[controller], tie, controller

    return averages, sorted(values, key=key)


def rank_controllers(
    reports: Sequence[MetricsReport],
    conditions: Sequence[str],
    fault_free: str = FAULT_FREE_CONDITION,
) -> RankTable:
    """Rank controllers per error axis by RMSE averaged over conditions (1 = best).

    Each report's scenario name is its condition.

    Raises:
        MissingCellError: If a controller has no report for a condition
    """
    matrix: Dict[str, Dict[str, MetricsReport]] = {}
    for report in reports:
        matrix.setdefault(report.controller, {})[report.scenario] = report
    table = RankTable(conditions=tuple(conditions))
    for metric in METRICS:
        values = {ctrl: {cond: rep.rmse(metric) for cond, rep in row.items()}
                  for ctrl, row in matrix.items()}
        averages, order = rank_values(values, conditions, fault_free)
        table.averages[metric] = averages
        table.orderings[metric] = order
        table.ranks[metric] = {ctrl: i + 1 for i, ctrl in enumerate(order)}
    return table


def fault_average(
    reports: Sequence[MetricsReport],
    fault_free: str = FAULT_FREE_CONDITION,
) -> Dict[str, Dict[str, float]]:
    """Mean RMSE per controller and axis over every condition except the fault-free one."""
    sums: Dict[str, Dict[str, List[float]]] = {}
    for report in reports:
        if report.scenario == fault_free:
            continue
        row = sums.setdefault(report.controller, {m: [] for m in METRICS})
        for metric in METRICS:
            row[metric].append(report.rmse(metric))
    if not sums:
        raise EmptyInputError("no faulty conditions to average")
    return {ctrl: {m: float(np.mean(v)) for m, v in row.items()} for ctrl, row in sums.items()}


def longest_decreasing_run(series: Sequence[float]) -> int:
    """Length in samples of the longest strictly decreasing stretch."""
    best = run = 1 if len(series) else 0
    for prev, cur in zip(series[:-1], series[1:]):
        run = run + 1 if cur < prev else 1
        best = max(best, run)
    return best


@dataclass(frozen=True)
class CascadeSummary:
    """Peak deviation per controller and, per window between fault onsets,
    whether the deviation has a strictly decreasing run of min_run samples."""

    fault_times: Tuple[float, ...]
    peaks: Dict[str, float]
    recovering: Dict[str, List[bool]]

    def peak_order(self) -> List[str]:
        return sorted(self.peaks, key=lambda c: (self.peaks[c], c))


def cascade_summary(
    traces: Sequence[Any],
    fault_times: Sequence[float],
    min_run: int = MIN_DECREASING_RUN,
) -> CascadeSummary:
    """Summarize deviation curves of a cascaded-fault run per controller."""
    if not traces:
        raise EmptyInputError("no traces to summarize")
    times = tuple(sorted(fault_times))
    peaks, recovering = {}, {}
    for trace in traces:
        t = trace.column("t")
        deviation = euclidean_deviation(trace)
        peaks[trace.controller] = float(np.max(deviation))
        windows = []
        for start, end in zip(times, times[1:] + (math.inf,)):
            mask = (t >= start) & (t < end)
            windows.append(longest_decreasing_run(list(deviation[mask])) >= min_run)
        recovering[trace.controller] = windows
    return CascadeSummary(fault_times=times, peaks=peaks, recovering=recovering)


def rank_table_text(table: RankTable, reports: Sequence[MetricsReport]) -> str:
    """Human-readable table: one block per axis, conditions as columns, rank last.

    Heading errors are shown in radians with degrees in parentheses.
    """
    cell = {(r.controller, r.scenario): r for r in reports}
    width = max(16, max(len(c) for c in table.conditions) + 2)
    lines = []
    for metric in METRICS:
        lines.append(f"{metric} RMSE")
        lines.append("Controller".ljust(12) + "".join(c.rjust(width) for c in table.conditions)
                     + "Rank".rjust(6))
        for ctrl in sorted(table.ranks[metric], key=table.ranks[metric].get):
            row = ctrl.ljust(12)
            for cond in table.conditions:
                value = cell[(ctrl, cond)].rmse(metric)
                text = f"{value:.4f}"
                if metric == "phi_e":
                    text += f" ({math.degrees(value):.2f})"
                row += text.rjust(width)
            lines.append(row + str(table.ranks[metric][ctrl]).rjust(6))
        lines.append("")
    return "\n".join(lines)


def rank_table_rows(table: RankTable, reports: Sequence[MetricsReport]) -> List[List[Any]]:
    """Rows of the machine-readable rank table, header first."""
    cell = {(r.controller, r.scenario): r for r in reports}
    rows: List[List[Any]] = [["metric", "controller", *table.conditions, "average", "rank"]]
    for metric in METRICS:
        for ctrl in table.orderings[metric]:
            rows.append([metric, ctrl]
                        + [format(cell[(ctrl, c)].rmse(metric), ".9g") for c in table.conditions]
                        + [format(table.averages[metric][ctrl], ".9g"), table.ranks[metric][ctrl]])
    return rows
