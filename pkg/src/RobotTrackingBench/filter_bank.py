"""Bank of hypothesis Kalman filters for wheel fault diagnosis.

Every filter runs the same odometry model with the wheel radii of one fault
hypothesis, consumes the same encoder input and pose measurement, and keeps
a history of its innovation norms. The hypothesis with the smallest windowed
mean residual is the diagnosis.
"""

import logging
import math
from collections import deque
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
from filterpy.kalman import ExtendedKalmanFilter

from .faults import (
    BUMP_AMPLITUDE_M, FLAT_RADIUS_LOSS_M, FaultKind, NoiseConfig
)
from .vehicle import (
    DEFAULT_ROBOT, MAX_KINEMATIC_SUBSTEP_S, Pose, RobotParams, RobotState,
    WheelSpeeds, kinematic_step, rk4_step, wheels_to_body, wrap_angle
)

logger = logging.getLogger(__name__)

DIAGNOSIS_WINDOW = 50
PROCESS_NOISE_FLOOR = 1e-8
# Share of the measurement variance added as process noise per step
PROCESS_NOISE_RATIO = 0.01
REGULARIZATION = 1e-9
CONDITION_LIMIT = 1e12
SYMMETRY_TOLERANCE = 1e-9

HYPOTHESES = (
    FaultKind.FAULT_FREE,
    FaultKind.FLAT_RIGHT,
    FaultKind.FLAT_LEFT,
    FaultKind.BUMP_RIGHT,
    FaultKind.BUMP_LEFT,
)


def _pose_vector(pose: Pose) -> np.ndarray:
    return np.array([[pose.x], [pose.y], [pose.phi]])


def pose_residual(z: np.ndarray, hx: np.ndarray) -> np.ndarray:
    """Innovation with the heading component wrapped."""
    y = np.asarray(z, dtype=float).reshape(3, 1) - hx
    y[2, 0] = wrap_angle(float(y[2, 0]))
    return y


def _identity_jacobian(_x: np.ndarray) -> np.ndarray:
    return np.eye(3)


def _identity_measurement(x: np.ndarray) -> np.ndarray:
    return x


class HypothesisFilter(ExtendedKalmanFilter):
    """Extended Kalman filter over (x, y, phi) for one wheel hypothesis.

    The input of predict is (encoder wheel speeds, wheel angles, dt).
    """

    def __init__(
        self,
        hypothesis: FaultKind,
        pose: Pose,
        *,
        params: RobotParams = DEFAULT_ROBOT,
        noise: NoiseConfig = NoiseConfig(),
        flat_loss: float = FLAT_RADIUS_LOSS_M,
        bump_amplitude: float = BUMP_AMPLITUDE_M,
        window: int = DIAGNOSIS_WINDOW,
    ) -> None:
        super().__init__(dim_x=3, dim_z=3)
        self.hypothesis = hypothesis
        self.params = params
        self.noise = noise
        self.flat_loss = flat_loss
        self.bump_amplitude = bump_amplitude
        self.x = _pose_vector(pose)
        pose_var = max(noise.pose_std_m ** 2, PROCESS_NOISE_FLOOR)
        heading_var = max(noise.heading_std_rad ** 2, PROCESS_NOISE_FLOOR)
        self.P = np.diag([pose_var, pose_var, heading_var])
        self.R = np.diag([noise.pose_std_m ** 2, noise.pose_std_m ** 2,
                          noise.heading_std_rad ** 2])
        self.Q = self._base_process_noise()
        self.residuals: Deque[float] = deque(maxlen=window)
        self.flags: List[str] = []

    def _base_process_noise(self) -> np.ndarray:
        return PROCESS_NOISE_FLOOR * np.eye(3) + PROCESS_NOISE_RATIO * self.R

    @property
    def pose(self) -> Pose:
        return Pose(float(self.x[0, 0]), float(self.x[1, 0]), float(self.x[2, 0]))

    def radii(self, angle_right: float, angle_left: float) -> Tuple[float, float]:
        """Wheel radii this hypothesis assumes at the given wheel angles."""
        r = self.params.wheel_radius
        kind = self.hypothesis
        if kind is FaultKind.FLAT_RIGHT:
            return r - self.flat_loss, r
        if kind is FaultKind.FLAT_LEFT:
            return r, r - self.flat_loss
        if kind is FaultKind.BUMP_RIGHT:
            return r + self.bump_amplitude * max(0.0, math.sin(angle_right)), r
        if kind is FaultKind.BUMP_LEFT:
            return r, r + self.bump_amplitude * max(0.0, math.sin(angle_left))
        return r, r

    def _advance(self, wheels: WheelSpeeds, angles: Tuple[float, float],
                 dt: float) -> np.ndarray:
        pose = self.pose
        if self.hypothesis not in (FaultKind.BUMP_RIGHT, FaultKind.BUMP_LEFT):
            v, omega = wheels_to_body(wheels, self.params, *self.radii(*angles))
            nxt = kinematic_step(RobotState(pose=pose), v, omega, dt, self.params).pose
            return np.array([[nxt.x], [nxt.y], [nxt.phi]])

        # Bump radius follows the wheel angle within the step
        b = self.params.half_track

        def f(_t: float, s: np.ndarray) -> np.ndarray:
            r_right, r_left = self.radii(s[3], s[4])
            right, left = r_right * wheels.right, r_left * wheels.left
            v = 0.5 * (right + left)
            return np.array([v * math.cos(s[2]), v * math.sin(s[2]),
                             (right - left) / (2.0 * b), wheels.right, wheels.left])

        substeps = max(1, math.ceil(dt / MAX_KINEMATIC_SUBSTEP_S - 1e-9))
        h = dt / substeps
        s = np.array([pose.x, pose.y, pose.phi, angles[0], angles[1]])
        for i in range(substeps):
            s = rk4_step(f, i * h, s, h)
        return np.array([[s[0]], [s[1]], [wrap_angle(float(s[2]))]])

    def predict_x(self, u=0) -> None:
        wheels, angles, dt = u
        r_right, r_left = self.radii(*angles)
        v, _ = wheels_to_body(wheels, self.params, r_right, r_left)
        phi = float(self.x[2, 0])
        c, s = math.cos(phi), math.sin(phi)
        self.F = np.array([
            [1.0, 0.0, -v * dt * s],
            [0.0, 1.0, v * dt * c],
            [0.0, 0.0, 1.0],
        ])
        b = self.params.half_track
        B = dt * np.array([
            [0.5 * r_right * c, 0.5 * r_left * c],
            [0.5 * r_right * s, 0.5 * r_left * s],
            [r_right / (2.0 * b), -r_left / (2.0 * b)],
        ])
        self.Q = (self.noise.wheel_speed_std ** 2) * (B @ B.T) + self._base_process_noise()
        self.x = self._advance(wheels, angles, dt)

    def windowed_residual(self, window: Optional[int] = None) -> float:
        """Mean of the last residual norms, infinite before the first correction."""
        if not self.residuals:
            return math.inf
        values = list(self.residuals)
        if window is not None:
            values = values[-window:]
        return float(np.mean(values))

    def _symmetrize(self) -> None:
        asym = float(np.max(np.abs(self.P - self.P.T)))
        if asym > SYMMETRY_TOLERANCE * max(1.0, float(np.max(np.abs(self.P)))):
            self.flags.append("covariance-resymmetrized")
            logger.debug("%s covariance asymmetry %.3g", self.hypothesis.value, asym)
        self.P = 0.5 * (self.P + self.P.T)


def kalman_predict(flt: HypothesisFilter, wheels: WheelSpeeds,
                   angles: Tuple[float, float], dt: float) -> HypothesisFilter:
    """Propagate one filter through its hypothesis model; P <- F P F^T + Q."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    flt.predict(u=(wheels, angles, dt))
    flt._symmetrize()
    return flt


def kalman_correct(flt: HypothesisFilter, measurement: Pose) -> Tuple[HypothesisFilter, float]:
    """Innovation update with a pose measurement.

    Returns:
        Tuple of (filter, Mahalanobis norm of the innovation)
    """
    z = _pose_vector(measurement)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"measurement must be finite, got {measurement}")
    R = flt.R
    if np.linalg.cond(flt.P + R) > CONDITION_LIMIT:
        R = R + REGULARIZATION * np.eye(3)
        flt.flags.append("innovation-regularized")
        logger.debug("%s innovation covariance regularized", flt.hypothesis.value)
    flt.update(z, _identity_jacobian, _identity_measurement, R=R, residual=pose_residual)
    flt._symmetrize()
    y = flt.y.reshape(3)
    norm = float(math.sqrt(max(0.0, float(y @ np.linalg.solve(flt.S, y)))))
    flt.residuals.append(norm)
    return flt, norm


class FilterBank:
    """The nominal filter plus one filter per single-wheel fault hypothesis."""

    def __init__(
        self,
        pose: Pose,
        *,
        params: RobotParams = DEFAULT_ROBOT,
        noise: NoiseConfig = NoiseConfig(),
        window: int = DIAGNOSIS_WINDOW,
        flat_loss: float = FLAT_RADIUS_LOSS_M,
        bump_amplitude: float = BUMP_AMPLITUDE_M,
    ) -> None:
        if window < 1:
            raise ValueError(f"diagnosis window must be >= 1, got {window}")
        self.window = window
        self.filters: Dict[FaultKind, HypothesisFilter] = {
            kind: HypothesisFilter(kind, pose, params=params, noise=noise,
                                   flat_loss=flat_loss, bump_amplitude=bump_amplitude,
                                   window=window)
            for kind in HYPOTHESES
        }
        self.diagnosis = FaultKind.FAULT_FREE

    def step(self, wheels: WheelSpeeds, angles: Tuple[float, float], dt: float,
             measurement: Pose) -> FaultKind:
        """Predict and correct every filter, then diagnose."""
        for flt in self.filters.values():
            kalman_predict(flt, wheels, angles, dt)
        for flt in self.filters.values():
            kalman_correct(flt, measurement)
        self.diagnosis = diagnose(self, self.window)
        return self.diagnosis

    def estimate(self, kind: Optional[FaultKind] = None) -> Pose:
        """Pose estimate of a hypothesis, by default the diagnosed one."""
        return self.filters[kind or self.diagnosis].pose

    def drain_flags(self) -> List[str]:
        """Numeric-health flags raised since the last call."""
        flags = []
        for flt in self.filters.values():
            flags.extend(f"{flt.hypothesis.value}:{flag}" for flag in flt.flags)
            flt.flags.clear()
        return flags


def diagnose(bank: FilterBank, window: int) -> FaultKind:
    """Hypothesis with the smallest windowed mean residual; ties go to FaultFree."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    best, best_score = FaultKind.FAULT_FREE, math.inf
    for kind in HYPOTHESES:
        score = bank.filters[kind].windowed_residual(window)
        if score < best_score:
            best, best_score = kind, score
    return best
