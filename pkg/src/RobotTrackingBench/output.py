"""Writers for trace, metrics and plot-data files."""

import csv
import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .evaluation import (
    METRICS, MetricsReport, RankTable, euclidean_deviation, rank_table_rows
)
from .planner import Regime, classify_regime
from .simulation import TRACE_COLUMNS, SimTrace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = ".9g"
PLOT_FORMAT = "%.9g"
METRICS_COLUMNS = (
    "controller", "scenario", "rmse_x_e", "rmse_y_e", "rmse_phi_e",
    "max_abs_x_e", "max_abs_y_e", "max_abs_phi_e", "deviation_peak", "deviation_mean",
)
PROFILE_SIGNALS = ("v_d", "v_c", "v_r", "w_d", "w_c", "w_r")
RECORDED_RATES = {"v_d": "dv_d", "v_c": "dv_c", "w_d": "dw_d"}


class OutputError(OSError):
    """Raised when an output file cannot be written or read."""


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return format(value, FLOAT_FORMAT)
    return str(value)


def _header_lines(header: Dict[str, Any]) -> List[str]:
    lines = []
    for key, value in header.items():
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True, default=str)
        lines.append(f"# {key}: {value}\n")
    return lines


def _open(path: Path, mode: str = "w"):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, mode, newline="", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e


def emit_trace(trace: SimTrace, path: PathLike) -> Path:
    """Write a trace as CSV behind a '#' comment block with the run header.

    Args:
        trace: Trace of one run
        path: Destination file

    Returns:
        The path written

    Raises:
        OutputError: If the file cannot be written
    """
    path = Path(path)
    with _open(path) as f:
        f.writelines(_header_lines(trace.header))
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for record in trace.records:
            writer.writerow([_cell(v) for v in record.row()])
    logger.info("wrote trace %s (%d records)", path, len(trace))
    return path


def read_trace(path: PathLike) -> pd.DataFrame:
    """Read a trace file back, floats parsed round-trip exactly."""
    path = Path(path)
    try:
        return pd.read_csv(path, comment="#", float_precision="round_trip",
                           keep_default_na=False,
                           dtype={"fault_active": str, "diagnosis": str, "flags": str})
    except OSError as e:
        raise OutputError(f"cannot read {path}: {e.strerror or e}") from e


def trace_filename(trace: SimTrace) -> str:
    return f"trace_{trace.scenario}_{trace.controller}.csv"


def emit_metrics(reports: Sequence[MetricsReport], path: PathLike) -> Path:
    """One CSV row of error statistics per (controller, scenario)."""
    path = Path(path)
    with _open(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for report in reports:
            writer.writerow([_cell(getattr(report, name)) for name in METRICS_COLUMNS])
    logger.info("wrote metrics %s (%d rows)", path, len(reports))
    return path


def emit_rank_table(table: RankTable, reports: Sequence[MetricsReport],
                    path: PathLike) -> Path:
    path = Path(path)
    with _open(path) as f:
        csv.writer(f, lineterminator="\n").writerows(rank_table_rows(table, reports))
    return path


#########################################################
# Plot data
#########################################################

def _savetxt(path: Path, columns: List[np.ndarray], names: List[str]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.column_stack(columns), fmt=PLOT_FORMAT,
                   header=" ".join(names), comments="# ")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def _group_by_scenario(traces: Sequence[SimTrace]) -> "OrderedDict[str, List[SimTrace]]":
    groups: "OrderedDict[str, List[SimTrace]]" = OrderedDict()
    for trace in traces:
        groups.setdefault(trace.scenario, []).append(trace)
    for name, group in groups.items():
        lengths = {len(tr) for tr in group}
        if len(lengths) != 1:
            raise ValueError(f"traces of scenario {name} differ in length: {sorted(lengths)}")
    return groups


def profile_columns(trace: SimTrace) -> List[np.ndarray]:
    """Time, the six velocity signals and their time derivatives.

    Reference and commanded accelerations come from the trace itself; the
    remaining rates are numerical gradients.
    """
    t = trace.column("t")
    signals = [trace.column(name) for name in PROFILE_SIGNALS]
    rates = []
    for name, s in zip(PROFILE_SIGNALS, signals):
        if name in RECORDED_RATES:
            rates.append(trace.column(RECORDED_RATES[name]))
        elif len(t) > 1:
            rates.append(np.gradient(s, t))
        else:
            rates.append(np.zeros_like(s))
    return [t] + signals + rates


def emit_plotdata(
    traces: Sequence[SimTrace],
    outdir: PathLike,
    reports: Optional[Sequence[MetricsReport]] = None,
) -> List[Path]:
    """Write plain whitespace-separated data files for plotting.

    Per scenario: reference and robot paths of every controller, error and
    deviation curves per controller, the reference curvature regime, and
    one velocity/acceleration profile file per controller. With reports, an
    RMSE summary is written as well.

    Returns:
        Paths written, in order

    Raises:
        ValueError: If traces is empty or traces of one scenario differ in length
        OutputError: If a file cannot be written
    """
    if not traces:
        raise ValueError("no traces to plot")
    outdir = Path(outdir)
    written = []
    for scenario, group in _group_by_scenario(traces).items():
        first = group[0]
        t = first.column("t")
        names = [tr.controller for tr in group]

        cols, heads = [t, first.column("x_d"), first.column("y_d")], ["t", "x_d", "y_d"]
        for tr in group:
            cols += [tr.column("x_r"), tr.column("y_r")]
            heads += [f"x_{tr.controller}", f"y_{tr.controller}"]
        written.append(_savetxt(outdir / f"trajectory_{scenario}.dat", cols, heads))

        cols, heads = [t], ["t"]
        for tr in group:
            for metric in METRICS:
                cols.append(tr.column(metric))
                heads.append(f"{metric}_{tr.controller}")
        written.append(_savetxt(outdir / f"errors_{scenario}.dat", cols, heads))

        written.append(_savetxt(
            outdir / f"deviation_{scenario}.dat",
            [t] + [euclidean_deviation(tr) for tr in group],
            ["t"] + [f"d_{name}" for name in names],
        ))

        k = first.column("curvature")
        antifragile = np.array([classify_regime(v) is Regime.ANTIFRAGILE for v in k], dtype=float)
        written.append(_savetxt(outdir / f"regimes_{scenario}.dat", [t, k, antifragile],
                                ["t", "curvature", "antifragile"]))

        for tr in group:
            heads = ["t"] + list(PROFILE_SIGNALS) + [f"d{s}" for s in PROFILE_SIGNALS]
            written.append(_savetxt(outdir / f"profiles_{scenario}_{tr.controller}.dat",
                                    profile_columns(tr), heads))

    if reports:
        path = outdir / "rmse.dat"
        try:
            with _open(path) as f:
                f.write("# controller scenario " + " ".join(f"rmse_{m}" for m in METRICS) + "\n")
                for r in reports:
                    f.write(" ".join([r.controller, r.scenario]
                                     + [format(r.rmse(m), FLOAT_FORMAT) for m in METRICS]) + "\n")
        except OutputError:
            raise
        except OSError as e:
            raise OutputError(f"cannot write {path}: {e.strerror or e}") from e
        written.append(path)

    logger.info("wrote %d plot data files to %s", len(written), outdir)
    return written
