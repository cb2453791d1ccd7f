#!/usr/bin/env python3
"""Command-line interface for Robot Tracking Bench."""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Set, Tuple

from .controllers import COMPARED_CONTROLLERS, CONTROLLER_IDS, describe_controllers
from .evaluation import (
    METRICS, cascade_summary, fault_average, rank_controllers, rank_table_text,
    trace_metrics
)
from .output import (
    OutputError, emit_metrics, emit_plotdata, emit_rank_table, emit_trace, trace_filename
)
from .scenario import (
    ScenarioError, apply_overrides, bundled_scenarios, load_bundled, resolve_scenario
)
from .simulation import PLANT_MODES, Scenario, SimTrace, run_batch

logger = logging.getLogger(__name__)

EMIT_KINDS = ("trace", "metrics", "plotdata")
DEFAULT_EMIT = "trace,metrics"
BENCHMARK_CONDITIONS = (
    "double_loop_faultfree", "bump_left", "bump_right", "flat_left", "flat_right",
)
FAULT_FREE_SCENARIO = "double_loop_faultfree"
CASCADE_SCENARIO = "cascade"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ABORTED = 2


def parse_rates(rates_str: str) -> Tuple[float, float]:
    """Parse "outer,inner" loop rates in Hz.

    Raises:
        ValueError: If the string is not two positive numbers
    """
    parts = [p.strip() for p in rates_str.split(",")]
    if len(parts) != 2:
        raise ValueError(f"rates must be 'outer,inner', got {rates_str!r}")
    try:
        outer, inner = float(parts[0]), float(parts[1])
    except ValueError:
        raise ValueError(f"rates must be numbers, got {rates_str!r}") from None
    if not (outer > 0 and inner > 0):
        raise ValueError(f"rates must be > 0, got {rates_str!r}")
    return outer, inner


def parse_emit(emit_str: str) -> Set[str]:
    """Parse a comma-separated list of output kinds."""
    kinds = {k.strip() for k in emit_str.split(",") if k.strip()}
    unknown = sorted(kinds - set(EMIT_KINDS))
    if unknown:
        raise ValueError(f"unknown emit kind(s) {unknown}, expected some of {EMIT_KINDS}")
    return kinds


def expand_controllers(controller: Optional[str]) -> List[Optional[str]]:
    """Controller ids a run fans out to; None keeps each scenario's own."""
    if controller is None:
        return [None]
    if controller.lower() == "all":
        return list(COMPARED_CONTROLLERS)
    ids = [c.strip().upper() for c in controller.split(",")]
    for cid in ids:
        if cid not in CONTROLLER_IDS:
            raise ValueError(f"unknown controller id {cid!r}, expected one of {CONTROLLER_IDS}")
    return ids


def build_runs(
    refs: Sequence[str],
    controllers: Sequence[Optional[str]],
    seed: Optional[int] = None,
    rates: Optional[Tuple[float, float]] = None,
    plant: Optional[str] = None,
) -> List[Scenario]:
    """One scenario per (scenario reference, controller) pair."""
    runs = []
    for ref in refs:
        base = resolve_scenario(ref)
        for cid in controllers:
            runs.append(apply_overrides(base, seed=seed, rates=rates, plant=plant,
                                        controller=cid))
    return runs


def write_outputs(traces: Sequence[SimTrace], out: Path, emit: Set[str]) -> List[Path]:
    """Write the requested outputs of finished runs."""
    written = []
    reports = [trace_metrics(tr) for tr in traces]
    if "trace" in emit:
        for tr in traces:
            written.append(emit_trace(tr, out / trace_filename(tr)))
    if "metrics" in emit:
        written.append(emit_metrics(reports, out / "metrics.csv"))
    if "plotdata" in emit:
        written.extend(emit_plotdata(traces, out / "plotdata", reports))
    return written


def print_reports(traces: Sequence[SimTrace]) -> None:
    print(f"{'Scenario':24}{'Controller':14}" + "".join(f"{'RMSE ' + m:>14}" for m in METRICS)
          + f"{'Max dev':>12}")
    for tr in traces:
        r = trace_metrics(tr)
        print(f"{r.scenario:24}{r.controller:14}"
              + "".join(f"{r.rmse(m):14.4f}" for m in METRICS)
              + f"{r.deviation_peak:12.4f}")


def cascade_fault_times(scn: Scenario) -> List[float]:
    """Onset of every fault plus the final recovery time, in trace time."""
    t0 = scn.waypoints[0].t
    times = {e.t_start for e in scn.faults.events}
    ends = [e.t_end for e in scn.faults.events if math.isfinite(e.t_end)]
    if ends:
        times.add(max(ends))
    return [t0 + t for t in sorted(times)]


def run_command(args: argparse.Namespace) -> int:
    """Handle the 'run' command."""
    emit = parse_emit(args.emit)
    rates = parse_rates(args.rates) if args.rates else None
    runs = build_runs(args.scenarios, expand_controllers(args.controller),
                      seed=args.seed, rates=rates, plant=args.plant)
    print(f"Running {len(runs)} simulation(s)")
    result = run_batch(runs, workers=args.workers)
    traces = [tr for tr in result.traces if tr is not None]
    if traces:
        print_reports(traces)
        written = write_outputs(traces, Path(args.out), emit)
        print(f"Wrote {len(written)} file(s) to {args.out}")
    for index, name, message in result.failures:
        print(f"Error: {name}/{runs[index].controller} aborted: {message}")
    return EXIT_OK if result.ok else EXIT_ABORTED


def benchmark_command(args: argparse.Namespace) -> int:
    """Handle the 'benchmark' command: rank table over the single-fault
    conditions, then the cascaded-fault run."""
    emit = parse_emit(args.emit)
    rates = parse_rates(args.rates) if args.rates else None
    out = Path(args.out)
    controllers = list(COMPARED_CONTROLLERS)

    runs = build_runs(BENCHMARK_CONDITIONS, controllers, seed=args.seed, rates=rates,
                      plant=args.plant)
    print(f"Running {len(runs)} benchmark simulation(s)")
    result = run_batch(runs, workers=args.workers)
    for index, name, message in result.failures:
        print(f"Error: {name}/{runs[index].controller} aborted: {message}")
    if not result.ok:
        return EXIT_ABORTED
    traces = [tr for tr in result.traces if tr is not None]
    reports = [trace_metrics(tr) for tr in traces]
    table = rank_controllers(reports, BENCHMARK_CONDITIONS, FAULT_FREE_SCENARIO)
    print(rank_table_text(table, reports))
    print("Mean RMSE under faults:")
    for ctrl, row in fault_average(reports, FAULT_FREE_SCENARIO).items():
        print(f"    {ctrl:12}" + "".join(f"{m}={row[m]:.4f}  " for m in METRICS))
    write_outputs(traces, out, emit)
    emit_rank_table(table, reports, out / "ranks.csv")

    cascade = apply_overrides(load_bundled(CASCADE_SCENARIO), seed=args.seed, rates=rates,
                              plant=args.plant)
    cascade_runs = [apply_overrides(cascade, controller=c) for c in controllers]
    print(f"Running cascade with {len(cascade_runs)} controller(s)")
    result = run_batch(cascade_runs, workers=args.workers)
    for index, name, message in result.failures:
        print(f"Error: {name}/{cascade_runs[index].controller} aborted: {message}")
    if not result.ok:
        return EXIT_ABORTED
    cascade_traces = [tr for tr in result.traces if tr is not None]
    summary = cascade_summary(cascade_traces, cascade_fault_times(cascade))
    print("Cascade peak deviation:")
    for ctrl in summary.peak_order():
        windows = " ".join("down" if ok else "----" for ok in summary.recovering[ctrl])
        print(f"    {ctrl:12}{summary.peaks[ctrl]:10.4f}   {windows}")
    write_outputs(cascade_traces, out, emit - {"metrics"})
    print(f"Results written to {out}")
    return EXIT_OK


def validate_command(args: argparse.Namespace) -> int:
    """Handle the 'validate' command."""
    status = EXIT_OK
    for ref in args.scenarios:
        try:
            scn = resolve_scenario(ref)
            print(f"{ref}: OK ({scn.name}, {scn.controller}, {scn.n_steps} steps)")
        except ScenarioError as e:
            print(f"{ref}: {e}")
            status = EXIT_INVALID
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Handle command-line interface operations.

    Returns:
        Exit code (0 for success, 1 for invalid input or I/O error,
        2 for an aborted simulation)
    """
    parser = argparse.ArgumentParser(
        description="Robot Tracking Bench: trajectory tracking under wheel faults"
    )
    parser.add_argument(
        '-v', '--verbose', action='store_true', help='Log debug messages'
    )
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    #########################################################
    # Commands for simulation
    #########################################################
    run_parser = subparsers.add_parser('run', help='Run scenarios and write results')
    run_parser.add_argument(
        'scenarios', nargs='+', help='Scenario files or bundled scenario names'
    )
    run_parser.add_argument(
        '-c', '--controller',
        help=f"Controller id, comma-separated ids or 'all' ({', '.join(CONTROLLER_IDS)}); "
             f"default: the scenario's own"
    )

    benchmark_parser = subparsers.add_parser(
        'benchmark', help='Rank the compared controllers on the bundled scenarios'
    )

    for sub in (run_parser, benchmark_parser):
        sub.add_argument(
            '-o', '--out', default='results', help='Output directory (default: results)'
        )
        sub.add_argument('--seed', type=int, help='Override the noise seed')
        sub.add_argument(
            '--emit', default=DEFAULT_EMIT,
            help=f"Outputs to write, some of {','.join(EMIT_KINDS)} (default: {DEFAULT_EMIT})"
        )
        sub.add_argument('--rates', help='Override loop rates as outer,inner in Hz')
        sub.add_argument('--plant', choices=PLANT_MODES, help='Override the plant model')
        sub.add_argument(
            '-j', '--workers', type=int, default=1,
            help='Worker processes for independent runs (default: 1)'
        )

    #########################################################
    # Commands for scenarios
    #########################################################
    validate_parser = subparsers.add_parser('validate', help='Check scenario files')
    validate_parser.add_argument(
        'scenarios', nargs='+', help='Scenario files or bundled scenario names'
    )
    subparsers.add_parser('list-scenarios', help='List the bundled scenarios')
    subparsers.add_parser('list-controllers', help='List the controller ids')

    subparsers.add_parser('help', help='Show help message (same as -h)')

    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if not args.command:
        parser.print_help()
        return EXIT_INVALID

    try:
        if args.command == 'run':
            return run_command(args)

        elif args.command == 'benchmark':
            return benchmark_command(args)

        elif args.command == 'validate':
            return validate_command(args)

        elif args.command == 'list-scenarios':
            for name in bundled_scenarios():
                print(name)

        elif args.command == 'list-controllers':
            for cid, text in describe_controllers().items():
                print(f"{cid:12}{text}")

        else:
            parser.print_help()

    except ScenarioError as e:
        print(f"Error: {e}")
        return EXIT_INVALID
    except OutputError as e:
        print(f"Error: {e}")
        return EXIT_INVALID
    except OSError as e:
        print(f"Error: {e.filename or ''}: {e.strerror or e}")
        return EXIT_INVALID
    except ValueError as e:
        print(f"ValueError: {e}")
        return EXIT_INVALID
    except KeyboardInterrupt:
        print("\nInterrupted")
        return EXIT_INVALID

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
