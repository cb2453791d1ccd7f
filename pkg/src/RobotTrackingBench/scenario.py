"""YAML scenario files: parsing with field and line precise errors, serialization,
bundled scenarios and command-line overrides."""

import logging
import math
import re
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import yaml

from .antifragile import InvalidGainError
from .controllers import CONTROLLER_IDS, build_gains
from .faults import FaultEvent, FaultKind, FaultSchedule, InvalidFaultError, NoiseConfig
from .inner_loop import PIDGains
from .planner import Waypoint
from .simulation import Scenario
from .vehicle import MotorParams, RobotParams

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"

TOP_LEVEL_KEYS = (
    "name", "controller", "seed", "plant", "motor_model", "feedback", "rates",
    "duration_s", "trajectory", "initial_offset", "robot", "motor", "pid", "gains",
    "noise", "faults", "diagnosis_window", "disturbance_v",
)
FAULT_KEYS = ("kind", "t_start", "t_end", "amplitude", "period_s", "decay_tau_s")
WAYPOINT_KEYS = ("x", "y", "t", "heading")

FieldPath = Tuple[Any, ...]


class ScenarioError(ValueError):
    """Raised when a scenario file is malformed or breaks an invariant."""

    def __init__(self, message: str, field: str, line: Optional[int] = None) -> None:
        where = field if line is None else f"{field} (line {line})"
        super().__init__(f"{where}: {message}")
        self.field = field
        self.line = line


def _line_index(
    node: yaml.Node, path: FieldPath = (), out: Optional[Dict[FieldPath, int]] = None
) -> Dict[FieldPath, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            _line_index(value_node, path + (key_node.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _line_index(item, path + (i,), out)
    return out


def _field_name(path: FieldPath) -> str:
    text = ""
    for part in path:
        if isinstance(part, int):
            text += f"[{part}]"
        else:
            text += f".{part}" if text else str(part)
    return text or "<root>"


class _Reader:
    """Walks the loaded document, turning problems into ScenarioErrors."""

    def __init__(self, lines: Dict[FieldPath, int]) -> None:
        self.lines = lines

    def error(self, message: str, path: FieldPath) -> ScenarioError:
        line = None
        prefix = path
        while line is None and prefix:
            line = self.lines.get(prefix)
            prefix = prefix[:-1]
        return ScenarioError(message, _field_name(path), line or self.lines.get(()))

    def mapping(self, value: Any, path: FieldPath, allowed: Optional[Tuple[str, ...]] = None
                ) -> Dict[str, Any]:
        if value is None:
            return {}
        if not isinstance(value, dict):
            raise self.error(f"expected a mapping, got {type(value).__name__}", path)
        if allowed is not None:
            for key in value:
                if key not in allowed:
                    raise self.error(f"unknown key {key!r}", path + (key,))
        return value

    def number(self, value: Any, path: FieldPath) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}", path)
        return float(value)

    def build(self, factory: Any, values: Mapping[str, Any], path: FieldPath) -> Any:
        """Call a validated constructor, blaming the offending key when it can be named."""
        try:
            return factory(**values)
        except TypeError as exc:
            raise self.error(str(exc), path) from exc
        except ValueError as exc:
            first = str(exc).split(" ", 1)[0].rstrip(":")
            blamed = path + (first,) if first in values else path
            raise self.error(str(exc), blamed) from exc


def _waypoints(reader: _Reader, raw: Any) -> Tuple[Tuple[Waypoint, ...], bool, bool]:
    path: FieldPath = ("trajectory",)
    traj = reader.mapping(raw, path, ("rolling_start", "rolling_end", "waypoints"))
    items = traj.get("waypoints")
    if not isinstance(items, list) or len(items) < 2:
        raise reader.error("need a list of at least 2 waypoints", path + ("waypoints",))
    waypoints: List[Waypoint] = []
    for i, item in enumerate(items):
        wpath = path + ("waypoints", i)
        item = reader.mapping(item, wpath, WAYPOINT_KEYS)
        for key in ("x", "y", "t"):
            if key not in item:
                raise reader.error(f"missing {key!r}", wpath)
        heading = item.get("heading")
        wp = Waypoint(
            x=reader.number(item["x"], wpath + ("x",)),
            y=reader.number(item["y"], wpath + ("y",)),
            t=reader.number(item["t"], wpath + ("t",)),
            heading=None if heading is None else reader.number(heading, wpath + ("heading",)),
        )
        if waypoints and not wp.t > waypoints[-1].t:
            raise reader.error(
                f"waypoint times must increase strictly, got {wp.t} after {waypoints[-1].t}",
                wpath + ("t",),
            )
        waypoints.append(wp)
    flags = []
    for key in ("rolling_start", "rolling_end"):
        value = traj.get(key, False)
        if not isinstance(value, bool):
            raise reader.error(f"expected true or false, got {value!r}", path + (key,))
        flags.append(value)
    return tuple(waypoints), flags[0], flags[1]


def _faults(reader: _Reader, raw: Any) -> FaultSchedule:
    if raw is None:
        return FaultSchedule()
    if not isinstance(raw, list):
        raise reader.error("expected a list of fault events", ("faults",))
    kinds = {k.value: k for k in FaultKind}
    events = []
    for i, item in enumerate(raw):
        path: FieldPath = ("faults", i)
        item = dict(reader.mapping(item, path, FAULT_KEYS))
        kind = item.pop("kind", None)
        if kind not in kinds:
            raise reader.error(f"unknown fault kind {kind!r}, expected one of {sorted(kinds)}",
                               path + ("kind",))
        if item.get("t_end") is None:
            item["t_end"] = math.inf
        for key, value in item.items():
            if value is not None:
                item[key] = reader.number(value, path + (key,))
        try:
            events.append(FaultEvent(kind=kinds[kind], **item))
        except InvalidFaultError as exc:
            raise reader.error(str(exc), path) from exc
    return FaultSchedule(tuple(events))


def _gains(reader: _Reader, raw: Any) -> Dict[str, Dict[str, Any]]:
    gains = reader.mapping(raw, ("gains",))
    out = {}
    for cid, values in gains.items():
        path: FieldPath = ("gains", cid)
        if cid not in CONTROLLER_IDS:
            raise reader.error(f"unknown controller id {cid!r}, expected one of {CONTROLLER_IDS}",
                               path)
        values = dict(reader.mapping(values, path))
        try:
            build_gains(cid, values)
        except InvalidGainError as exc:
            first = str(exc).split(" ", 1)[0]
            raise reader.error(str(exc), path + (first,) if first in values else path) from exc
        out[cid] = values
    return out


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate a scenario document.

    Raises:
        ScenarioError: With the field path and line of the first problem
    """
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML in {source}: {exc}", "<root>",
                            mark.line + 1 if mark else None) from exc
    reader = _Reader(_line_index(root) if root is not None else {})
    data = reader.mapping(data, (), TOP_LEVEL_KEYS)

    name = data.get("name")
    if not isinstance(name, str) or not name:
        raise reader.error("scenario needs a non-empty name", ("name",))
    controller = data.get("controller", "ANTIFRAGILE")
    if controller not in CONTROLLER_IDS:
        raise reader.error(f"unknown controller id {controller!r}, expected one of "
                           f"{CONTROLLER_IDS}", ("controller",))
    waypoints, rolling_start, rolling_end = _waypoints(reader, data.get("trajectory"))
    rates = reader.mapping(data.get("rates"), ("rates",), ("outer_hz", "inner_hz"))

    kwargs: Dict[str, Any] = dict(
        name=name,
        waypoints=waypoints,
        rolling_start=rolling_start,
        rolling_end=rolling_end,
        controller=controller,
        gains=_gains(reader, data.get("gains")),
        robot=reader.build(RobotParams, reader.mapping(data.get("robot"), ("robot",)),
                           ("robot",)),
        motor=reader.build(MotorParams, reader.mapping(data.get("motor"), ("motor",)),
                           ("motor",)),
        pid=reader.build(PIDGains, reader.mapping(data.get("pid"), ("pid",)), ("pid",)),
        noise=reader.build(NoiseConfig, reader.mapping(data.get("noise"), ("noise",)),
                           ("noise",)),
        faults=_faults(reader, data.get("faults")),
    )
    for key in ("seed", "diagnosis_window"):
        if key in data:
            if isinstance(data[key], bool) or not isinstance(data[key], int):
                raise reader.error(f"expected an integer, got {data[key]!r}", (key,))
            kwargs[key] = data[key]
    for key in ("plant", "motor_model", "feedback"):
        if key in data:
            kwargs[key] = data[key]
    if data.get("duration_s") is not None:
        kwargs["duration_s"] = reader.number(data["duration_s"], ("duration_s",))
    if "disturbance_v" in data:
        kwargs["disturbance_v"] = reader.number(data["disturbance_v"], ("disturbance_v",))
    if "outer_hz" in rates:
        kwargs["outer_rate_hz"] = reader.number(rates["outer_hz"], ("rates", "outer_hz"))
    if "inner_hz" in rates:
        kwargs["inner_rate_hz"] = reader.number(rates["inner_hz"], ("rates", "inner_hz"))
    if "initial_offset" in data:
        offset = data["initial_offset"]
        if not isinstance(offset, list) or len(offset) != 3:
            raise reader.error("expected [x, y, phi]", ("initial_offset",))
        kwargs["initial_offset"] = tuple(
            reader.number(v, ("initial_offset", i)) for i, v in enumerate(offset)
        )

    try:
        return Scenario(**kwargs)
    except ValueError as exc:
        head = re.split(r"[ :(]", str(exc), maxsplit=1)[0]
        key = head if head in TOP_LEVEL_KEYS else None
        if isinstance(exc, InvalidFaultError):
            key = "faults"
        elif key is None and "rate" in head:
            key = "rates"
        raise reader.error(str(exc), (key,) if key else ()) from exc


def parse_scenario(path: str) -> Scenario:
    """Read and parse a scenario file.

    Raises:
        ScenarioError: If the file content is invalid
        OSError: If the file cannot be read
    """
    text = Path(path).read_text(encoding="utf-8")
    scn = parse_scenario_text(text, source=str(path))
    logger.debug("parsed scenario %s from %s", scn.name, path)
    return scn


def _plain(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def scenario_to_dict(scn: Scenario) -> Dict[str, Any]:
    """Plain-data form of a scenario in the file layout."""
    waypoints = []
    for wp in scn.waypoints:
        item = {"x": wp.x, "y": wp.y, "t": wp.t}
        if wp.heading is not None:
            item["heading"] = wp.heading
        waypoints.append(item)
    faults = []
    for event in scn.faults.events:
        item = {"kind": event.kind.value, "t_start": event.t_start}
        if not math.isinf(event.t_end):
            item["t_end"] = event.t_end
        item["amplitude"] = event.amplitude
        if event.period_s is not None:
            item["period_s"] = event.period_s
        item["decay_tau_s"] = event.decay_tau_s
        faults.append(item)
    data: Dict[str, Any] = {
        "name": scn.name,
        "controller": scn.controller,
        "seed": scn.seed,
        "plant": scn.plant,
        "motor_model": scn.motor_model,
        "feedback": scn.feedback,
        "rates": {"outer_hz": scn.outer_rate_hz, "inner_hz": scn.inner_rate_hz},
        "trajectory": {"rolling_start": scn.rolling_start, "rolling_end": scn.rolling_end,
                       "waypoints": waypoints},
        "initial_offset": list(scn.initial_offset),
        "robot": asdict(scn.robot),
        "motor": asdict(scn.motor),
        "pid": asdict(scn.pid),
        "gains": {cid: {k: _plain(v) for k, v in values.items()}
                  for cid, values in scn.gains.items()},
        "noise": asdict(scn.noise),
        "faults": faults,
        "diagnosis_window": scn.diagnosis_window,
        "disturbance_v": scn.disturbance_v,
    }
    if scn.duration_s is not None:
        data["duration_s"] = scn.duration_s
    return data


def serialize_scenario(scn: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scn), sort_keys=False, default_flow_style=None)


def bundled_scenarios() -> List[str]:
    """Names of the scenarios shipped with the package."""
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def bundled_path(name: str) -> Path:
    path = SCENARIO_DIR / f"{name}.yaml"
    if not path.is_file():
        raise ScenarioError(f"no bundled scenario {name!r}, have {bundled_scenarios()}", "name")
    return path


def load_bundled(name: str) -> Scenario:
    return parse_scenario(str(bundled_path(name)))


def resolve_scenario(ref: str) -> Scenario:
    """Load a scenario from a file path or a bundled scenario name."""
    if Path(ref).is_file():
        return parse_scenario(ref)
    return load_bundled(ref)


def apply_overrides(
    scn: Scenario,
    *,
    seed: Optional[int] = None,
    rates: Optional[Tuple[float, float]] = None,
    plant: Optional[str] = None,
    controller: Optional[str] = None,
) -> Scenario:
    """Copy of a scenario with command-line overrides applied."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if rates is not None:
        changes["outer_rate_hz"], changes["inner_rate_hz"] = rates
    if plant is not None:
        changes["plant"] = plant
    if controller is not None:
        changes["controller"] = controller
    return replace(scn, **changes) if changes else scn
