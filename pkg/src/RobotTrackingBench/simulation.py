"""Two-time-scale closed-loop simulation of one scenario, and batches of them."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .antifragile import (
    AntifragileGains, lyapunov_rate, lyapunov_value, sliding_values
)
from .controllers import CONTROLLER_IDS, build_gains, make_controller
from .faults import (
    NO_FAULTS, FaultSchedule, MeasurementChannel, NoiseConfig, apply_actuation,
    describe_schedule
)
from .filter_bank import DIAGNOSIS_WINDOW, FilterBank
from .inner_loop import PIDGains, PIDState, WheelDrive, pid_inner_loop
from .planner import (
    ReferenceTrajectory, Waypoint, build_trajectory, reference_window, sample_clamped
)
from .tracking import measure_tracking
from .vehicle import (
    DEFAULT_MOTOR, DEFAULT_ROBOT, InvalidStateError, MotorParams, Pose, RobotParams,
    RobotState, WheelSpeeds, body_to_wheels, kinematic_step, rigid_body_step,
    wheels_to_body
)

logger = logging.getLogger(__name__)

OUTER_RATE_HZ = 50.0
INNER_RATE_HZ = 1000.0
PLANT_MODES = ("kinematic", "dynamic", "rigid")
FEEDBACK_SOURCES = ("measured", "estimate")
RATE_RATIO_TOLERANCE = 1e-9

TRACE_COLUMNS = (
    "t", "x_r", "y_r", "phi_r", "x_d", "y_d", "phi_d", "x_e", "y_e", "phi_e",
    "v_c", "w_c", "v_r", "w_r", "s1", "s2", "V", "Vdot",
    "fault_active", "diagnosis", "flags",
)


class SimulationAbortError(RuntimeError):
    """Raised when the simulated state stops being finite."""

    def __init__(self, message: str, record_index: int) -> None:
        super().__init__(f"{message} (record {record_index})")
        self.message = message
        self.record_index = record_index

    def __reduce__(self):
        return type(self), (self.message, self.record_index)


def quantize(value: float) -> float:
    """Round to 9 significant digits so traces print and reparse exactly."""
    return float(format(value, ".9g"))


@dataclass(frozen=True)
class Scenario:
    """Everything that determines one simulation run.

    Attributes:
        name: Scenario identifier
        waypoints: Timed waypoints of the reference path
        rolling_start, rolling_end: Whether the reference starts or ends moving
        controller: Controller id
        gains: Gain overrides keyed by controller id; the ANTIFRAGILE entry
            also defines the manifolds reported in every trace
        initial_offset: Start pose offset (x, y, phi) in the reference frame
        duration_s: Simulated time, the trajectory span when None
    """

    name: str
    waypoints: Tuple[Waypoint, ...]
    rolling_start: bool = False
    rolling_end: bool = False
    controller: str = "ANTIFRAGILE"
    gains: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    robot: RobotParams = DEFAULT_ROBOT
    motor: MotorParams = DEFAULT_MOTOR
    pid: PIDGains = PIDGains()
    faults: FaultSchedule = NO_FAULTS
    noise: NoiseConfig = NoiseConfig()
    seed: int = 0
    outer_rate_hz: float = OUTER_RATE_HZ
    inner_rate_hz: float = INNER_RATE_HZ
    duration_s: Optional[float] = None
    plant: str = "dynamic"
    motor_model: str = "full"
    feedback: str = "measured"
    diagnosis_window: int = DIAGNOSIS_WINDOW
    initial_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    disturbance_v: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if len(self.waypoints) < 2:
            raise ValueError(f"waypoints: need at least 2, got {len(self.waypoints)}")
        if self.controller not in CONTROLLER_IDS:
            raise ValueError(
                f"controller: unknown id {self.controller!r}, expected one of {CONTROLLER_IDS}"
            )
        for cid, values in self.gains.items():
            build_gains(cid, values)
        if not (self.outer_rate_hz > 0 and self.inner_rate_hz > 0):
            raise ValueError(
                f"rates must be > 0, got outer={self.outer_rate_hz}, inner={self.inner_rate_hz}"
            )
        ratio = self.inner_rate_hz / self.outer_rate_hz
        if ratio < 1 or abs(ratio - round(ratio)) > RATE_RATIO_TOLERANCE * ratio:
            raise ValueError(
                f"inner_rate_hz ({self.inner_rate_hz}) must be an integer multiple "
                f"of outer_rate_hz ({self.outer_rate_hz})"
            )
        for name, value, allowed in (("plant", self.plant, PLANT_MODES),
                                     ("motor_model", self.motor_model, ("full", "reduced")),
                                     ("feedback", self.feedback, FEEDBACK_SOURCES)):
            if value not in allowed:
                raise ValueError(f"{name}: must be one of {allowed}, got {value!r}")
        span = self.waypoints[-1].t - self.waypoints[0].t
        if self.duration_s is not None and not self.duration_s >= span:
            raise ValueError(
                f"duration_s ({self.duration_s}) must cover the trajectory span ({span})"
            )
        if self.diagnosis_window < 1:
            raise ValueError(f"diagnosis_window: must be >= 1, got {self.diagnosis_window}")
        if len(self.initial_offset) != 3:
            raise ValueError(f"initial_offset: need (x, y, phi), got {self.initial_offset}")
        object.__setattr__(self, "initial_offset",
                           tuple(float(v) for v in self.initial_offset))
        self.faults.check_radii(self.robot.wheel_radius)

    @property
    def substeps(self) -> int:
        return int(round(self.inner_rate_hz / self.outer_rate_hz))

    @property
    def dt(self) -> float:
        return 1.0 / self.outer_rate_hz

    @property
    def duration(self) -> float:
        if self.duration_s is not None:
            return self.duration_s
        return self.waypoints[-1].t - self.waypoints[0].t

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.outer_rate_hz))

    @property
    def antifragile_gains(self) -> AntifragileGains:
        return build_gains("ANTIFRAGILE", self.gains.get("ANTIFRAGILE"))

    def trajectory(self) -> ReferenceTrajectory:
        return build_trajectory(self.waypoints, self.outer_rate_hz, self.rolling_start,
                                self.rolling_end)


def with_controller(scn: Scenario, controller_id: str) -> Scenario:
    return replace(scn, controller=controller_id)


@dataclass(frozen=True)
class TraceRecord:
    """One outer step. Floats are rounded to 9 significant digits."""

    t: float
    x_r: float
    y_r: float
    phi_r: float
    x_d: float
    y_d: float
    phi_d: float
    x_e: float
    y_e: float
    phi_e: float
    v_c: float
    w_c: float
    v_r: float
    w_r: float
    s1: float
    s2: float
    V: float
    Vdot: float
    fault_active: str
    diagnosis: str
    flags: str
    x_m: float = 0.0
    y_m: float = 0.0
    phi_m: float = 0.0
    v_d: float = 0.0
    w_d: float = 0.0
    dv_d: float = 0.0
    dw_d: float = 0.0
    dv_c: float = 0.0
    curvature: float = 0.0

    def row(self) -> List[Any]:
        return [getattr(self, name) for name in TRACE_COLUMNS]


RECORD_FIELDS = tuple(f.name for f in fields(TraceRecord))


@dataclass
class SimTrace:
    """Header plus per-step records of one run."""

    scenario: str
    controller: str
    header: Dict[str, Any]
    records: List[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        if name not in RECORD_FIELDS:
            raise KeyError(f"unknown trace column {name!r}")
        return np.array([getattr(r, name) for r in self.records])


def initial_state(scn: Scenario, traj: ReferenceTrajectory) -> RobotState:
    """Robot on the first reference sample, shifted by the scenario offset."""
    ref = sample_clamped(traj, traj.t_start)
    ox, oy, ophi = scn.initial_offset
    c, s = math.cos(ref.phi), math.sin(ref.phi)
    pose = Pose(ref.x + c * ox - s * oy, ref.y + s * ox + c * oy, ref.phi + ophi)
    return RobotState(pose=pose, v=ref.v, omega=ref.omega,
                      wheels=body_to_wheels(ref.v, ref.omega, scn.robot))


class _Plant:
    """Inner-loop actuators and the true robot state."""

    def __init__(self, scn: Scenario, truth: RobotState) -> None:
        self.scn = scn
        self.truth = truth
        self.angles = [0.0, 0.0]
        self.shaft = truth.wheels
        self.flags: List[str] = []
        motor = scn.motor
        if scn.plant == "dynamic":
            self.drives = [
                WheelDrive(gains=scn.pid, motor=motor, model=scn.motor_model,
                           speed=speed, disturbance=scn.disturbance_v)
                for speed in (truth.wheels.right, truth.wheels.left)
            ]
        elif scn.plant == "rigid":
            self.eta = truth.wheels
            self.currents = (0.0, 0.0)
            self.pids = [PIDState(), PIDState()]
            n, k = motor.gear_ratio, motor.torque_constant
            for pid, speed in zip(self.pids, (truth.wheels.right, truth.wheels.left)):
                pid.preload(k * n * speed, scn.pid)

    def _actuate(self, wheels: WheelSpeeds, t: float, h: float) -> None:
        scn = self.scn
        realized = apply_actuation(wheels, scn.faults, t, tuple(self.angles),
                                   scn.robot.wheel_radius)
        v, omega = wheels_to_body(realized, scn.robot)
        self.truth = kinematic_step(self.truth, v, omega, h, scn.robot)
        self.angles[0] += wheels.right * h
        self.angles[1] += wheels.left * h

    def step(self, setpoints: WheelSpeeds, t: float, h: float) -> None:
        scn = self.scn
        if scn.plant == "kinematic":
            self.shaft = setpoints
        elif scn.plant == "dynamic":
            right = self.drives[0].step(setpoints.right, h)
            left = self.drives[1].step(setpoints.left, h)
            if any(d.pid.saturated for d in self.drives):
                self._flag("voltage-clamped")
            self.shaft = WheelSpeeds(right, left)
        else:
            volts = []
            for pid, target, actual in zip(self.pids, (setpoints.right, setpoints.left),
                                           (self.eta.right, self.eta.left)):
                volts.append(pid_inner_loop(target, actual, pid, scn.pid, h)
                             + scn.disturbance_v)
            if any(pid.saturated for pid in self.pids):
                self._flag("voltage-clamped")
            self.eta, self.currents = rigid_body_step(
                self.eta, self.currents, (volts[0], volts[1]), scn.robot, scn.motor, h
            )
            self.shaft = self.eta
        self._actuate(self.shaft, t, h)

    def _flag(self, flag: str) -> None:
        if flag not in self.flags:
            self.flags.append(flag)

    def drain_flags(self) -> List[str]:
        flags, self.flags = self.flags, []
        return flags


def _trace_header(scn: Scenario, describe: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "scenario": scn.name,
        "controller": scn.controller,
        "gains": describe,
        "seed": scn.seed,
        "outer_rate_hz": scn.outer_rate_hz,
        "inner_rate_hz": scn.inner_rate_hz,
        "plant": scn.plant,
        "motor_model": scn.motor_model,
        "feedback": scn.feedback,
        "faults": describe_schedule(scn.faults.events),
    }


def _require_finite_step(index: int, *values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise SimulationAbortError("non-finite state or command", index)


def run_scenario(scn: Scenario) -> SimTrace:
    """Simulate one scenario and return its trace.

    Per outer step the reference is sampled, the state measured, the filter
    bank advanced and the controller run; its wheel setpoints then drive
    scn.substeps inner steps of the selected plant with actuator faults.
    n_steps + 1 records are produced, the last without a following plant step.

    Raises:
        SimulationAbortError: If the state or a command stops being finite
    """
    traj = scn.trajectory()
    controller = make_controller(scn.controller, scn.gains.get(scn.controller), scn.robot)
    af_gains = scn.antifragile_gains
    dt, substeps = scn.dt, scn.substeps
    h = dt / substeps
    t0 = traj.t_start

    plant = _Plant(scn, initial_state(scn, traj))
    channel = MeasurementChannel(schedule=scn.faults, noise=scn.noise, seed=scn.seed,
                                 params=scn.robot)
    bank = FilterBank(plant.truth.pose, params=scn.robot, noise=scn.noise,
                      window=scn.diagnosis_window)
    trace = SimTrace(scenario=scn.name, controller=scn.controller,
                     header=_trace_header(scn, controller.describe()))
    logger.info("running %s with %s for %d steps", scn.name, scn.controller, scn.n_steps)

    prev_angles = (0.0, 0.0)
    for k in range(scn.n_steps + 1):
        t = t0 + k * dt
        try:
            ref = sample_clamped(traj, t)
            measured = channel.observe(plant.truth, t - t0, plant.shaft)
            _require_finite_step(k, measured.pose.x, measured.pose.y, measured.pose.phi)
            diagnosis = "FaultFree"
            if k > 0:
                diagnosis = bank.step(measured.wheels, prev_angles, dt, measured.pose).value
            feedback = measured
            if scn.feedback == "estimate":
                feedback = replace(measured, pose=bank.estimate())

            window = reference_window(traj, t, controller.horizon_steps, dt)
            cmd = controller.compute(feedback, window, dt)
            _require_finite_step(k, cmd.v_c, cmd.omega_c, cmd.dv_c)

            truth = plant.truth
            err = measure_tracking(truth, ref)
            s1, s2 = sliding_values(err, af_gains)
            flags = list(cmd.flags) + plant.drain_flags() + bank.drain_flags()
            trace.records.append(TraceRecord(
                t=quantize(t), x_r=quantize(truth.pose.x), y_r=quantize(truth.pose.y),
                phi_r=quantize(truth.pose.phi), x_d=quantize(ref.x), y_d=quantize(ref.y),
                phi_d=quantize(ref.phi), x_e=quantize(err.x_e), y_e=quantize(err.y_e),
                phi_e=quantize(err.phi_e), v_c=quantize(cmd.v_c), w_c=quantize(cmd.omega_c),
                v_r=quantize(truth.v), w_r=quantize(truth.omega), s1=quantize(s1),
                s2=quantize(s2), V=quantize(lyapunov_value(s1, s2)),
                Vdot=quantize(lyapunov_rate(s1, s2, af_gains)),
                fault_active=scn.faults.label(t - t0), diagnosis=diagnosis,
                flags="|".join(flags),
                x_m=quantize(measured.pose.x), y_m=quantize(measured.pose.y),
                phi_m=quantize(measured.pose.phi), v_d=quantize(ref.v),
                w_d=quantize(ref.omega), dv_d=quantize(ref.a_v), dw_d=quantize(ref.a_omega),
                dv_c=quantize(cmd.dv_c), curvature=quantize(ref.curvature),
            ))
            if k == scn.n_steps:
                break

            prev_angles = (plant.angles[0], plant.angles[1])
            for j in range(substeps):
                tj = t - t0 + j * h
                plant.step(cmd.wheel_setpoints, tj, h)
                channel.integrate(plant.truth, tj, h)
            pose = plant.truth.pose
            _require_finite_step(k, pose.x, pose.y, pose.phi, plant.truth.v)
        except (InvalidStateError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.error("%s/%s aborted at record %d: %s", scn.name, scn.controller, k, exc)
            raise SimulationAbortError(str(exc), k) from exc
        except SimulationAbortError:
            logger.error("%s/%s aborted at record %d", scn.name, scn.controller, k)
            raise

    logger.info("finished %s with %s: %d records", scn.name, scn.controller, len(trace))
    return trace


@dataclass
class BatchResult:
    """Traces in input order (None where a run failed) and the failures."""

    traces: List[Optional[SimTrace]]
    failures: List[Tuple[int, str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_batch(scenarios: Sequence[Scenario], workers: int = 1) -> BatchResult:
    """Run independent scenarios, in worker processes when workers > 1.

    A failing scenario leaves None in its slot and an (index, name, message)
    entry in the failure list; the other runs are unaffected.
    """
    traces: List[Optional[SimTrace]] = [None] * len(scenarios)
    failures: List[Tuple[int, str, str]] = []

    def record_failure(i: int, exc: Exception) -> None:
        logger.warning("scenario %d (%s/%s) failed: %s", i, scenarios[i].name,
                       scenarios[i].controller, exc)
        failures.append((i, scenarios[i].name, str(exc)))

    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_scenario, scn) for scn in scenarios]
            for i, future in enumerate(futures):
                try:
                    traces[i] = future.result()
                except Exception as exc:
                    record_failure(i, exc)
    else:
        for i, scn in enumerate(scenarios):
            try:
                traces[i] = run_scenario(scn)
            except Exception as exc:
                record_failure(i, exc)
    return BatchResult(traces=traces, failures=failures)
